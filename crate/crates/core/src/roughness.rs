//! Image-based surface roughness of knitted fabric.
//!
//! A scanned gray image becomes a height map (255 maps to the fabric
//! thickness). Five raw criteria are measured on it and on a simulated
//! ideal surface:
//!
//! | criterion | meaning |
//! |-----------|---------|
//! | `n` | number of peaks |
//! | `v` | variance of peak distances to the origin pixel |
//! | `s` | profile volume |
//! | `a` | variance / mean of gray levels |
//! | `g` | coefficient of variation (%) of gray levels at peaks |
//!
//! Relative deviations `K1..K5 = (ideal - real) / ideal` are summed and
//! divided by [`KT_DIVISOR`] to give the roughness index `Kt`.

use serde::{Deserialize, Serialize};

use crate::image::GrayImage;

/// Divisor applied to `K1 + ... + K5`.
pub const KT_DIVISOR: f64 = 1000.0;

/// Default scan resolution.
pub const DEFAULT_DPI: f64 = 600.0;

#[derive(Debug, thiserror::Error)]
pub enum RoughnessError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mean gray level is zero; gray variance ratio is undefined")]
    ZeroMeanGray,
    #[error("ideal criterion {0} is zero; relative deviation undefined")]
    ZeroIdealCriterion(&'static str),
    #[error("degenerate regression: {0}")]
    DegenerateFit(String),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
}

pub type RoughnessResult<T> = Result<T, RoughnessError>;

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceProfile {
    width: usize,
    height: usize,
    heights: Vec<f64>,
    thickness: f64,
    pub dpi: f64,
}

impl SurfaceProfile {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn thickness(&self) -> f64 {
        self.thickness
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.heights[y * self.width + x]
    }
}

/// Linear map of gray level to height: `gray / 255 * thickness`.
/// Values outside `[0, 255]` are clamped first.
pub fn image_to_profile(img: &GrayImage, thickness: f64) -> RoughnessResult<SurfaceProfile> {
    if !(thickness > 0.0) || !thickness.is_finite() {
        return Err(RoughnessError::InvalidArgument(format!(
            "thickness must be > 0, got {thickness}"
        )));
    }
    Ok(SurfaceProfile {
        width: img.width(),
        height: img.height(),
        heights: img
            .data()
            .iter()
            .map(|&g| g.clamp(0.0, 255.0) / 255.0 * thickness)
            .collect(),
        thickness,
        dpi: DEFAULT_DPI,
    })
}

/// Ideal loop lattice: wale and course periods in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdealSurfaceSpec {
    pub thickness: f64,
    pub wale_period: f64,
    pub course_period: f64,
    /// Relative height drop of every other loop, in `[0, 1)`.
    #[serde(default = "default_relief")]
    pub relief: f64,
}

/// Default loop-height alternation.
pub const DEFAULT_RELIEF: f64 = 0.1;

fn default_relief() -> f64 {
    DEFAULT_RELIEF
}

impl IdealSurfaceSpec {
    pub fn new(thickness: f64, wale_period: f64, course_period: f64) -> RoughnessResult<Self> {
        let spec = Self {
            thickness,
            wale_period,
            course_period,
            relief: DEFAULT_RELIEF,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> RoughnessResult<()> {
        if !(0.0..1.0).contains(&self.relief) {
            return Err(RoughnessError::InvalidArgument(format!(
                "relief must lie in [0, 1), got {}",
                self.relief
            )));
        }
        if !(self.thickness > 0.0) || !self.thickness.is_finite() {
            return Err(RoughnessError::InvalidArgument(format!(
                "thickness must be > 0, got {}",
                self.thickness
            )));
        }
        for (name, p) in [("wale_period", self.wale_period), ("course_period", self.course_period)] {
            if !(p >= 2.0) || !p.is_finite() {
                return Err(RoughnessError::InvalidArgument(format!(
                    "{name} must be >= 2 pixels, got {p}"
                )));
            }
        }
        Ok(())
    }
}

/// One smooth bump per loop cell,
/// `b = (1 - cos(2 pi x / course)) (1 - cos(2 pi y / wale)) / 4`,
/// with neighbouring loops alternating in height:
/// `h = t b (1 - r/2 (1 - sin(pi x / course) sin(pi y / wale)))`.
///
/// Heights span `[0, t]`. Troughs sit on the origin lines and crests at
/// `x = course/2 + i course`, `y = wale/2 + j wale`, so when the periods
/// divide the raster no crest is cut by the border. Crests reach `t` and
/// `(1 - r) t` on a checkerboard, which keeps the peak gray spread
/// nonzero for `r > 0`.
pub fn ideal_surface(spec: &IdealSurfaceSpec, width: usize, height: usize) -> RoughnessResult<SurfaceProfile> {
    spec.validate()?;
    if width == 0 || height == 0 {
        return Err(RoughnessError::InvalidArgument(
            "ideal surface needs positive size".into(),
        ));
    }
    let tau = std::f64::consts::TAU;
    let mut heights = Vec::with_capacity(width * height);
    let pi = std::f64::consts::PI;
    for y in 0..height {
        let yf = y as f64 / spec.wale_period;
        let (by, my) = (1.0 - (tau * yf).cos(), (pi * yf).sin());
        for x in 0..width {
            let xf = x as f64 / spec.course_period;
            let (bx, mx) = (1.0 - (tau * xf).cos(), (pi * xf).sin());
            let relief = 1.0 - spec.relief / 2.0 * (1.0 - mx * my);
            heights.push(spec.thickness / 4.0 * bx * by * relief);
        }
    }
    Ok(SurfaceProfile {
        width,
        height,
        heights,
        thickness: spec.thickness,
        dpi: DEFAULT_DPI,
    })
}

/// Gray rendering of the ideal surface (thickness maps to 255).
pub fn render_ideal(spec: &IdealSurfaceSpec, width: usize, height: usize) -> RoughnessResult<GrayImage> {
    let p = ideal_surface(spec, width, height)?;
    Ok(GrayImage::new(
        width,
        height,
        p.heights.iter().map(|h| h / p.thickness * 255.0).collect(),
    )
    .expect("same shape"))
}

/// Finds peak pixels.
///
/// Pixels are grouped into 8-connected components of equal height. A
/// component is a peak when every pixel bordering it is strictly lower;
/// it is reported once, at the member closest to its centroid (first in
/// raster order on ties). A component covering the whole raster has no
/// border and is not a peak, so a flat profile has zero peaks.
pub fn detect_peaks(p: &SurfaceProfile) -> Vec<(usize, usize)> {
    let (w, h) = (p.width, p.height);
    let mut component = vec![usize::MAX; w * h];
    let mut peaks = Vec::new();
    let mut stack = Vec::new();
    let mut members = Vec::new();

    for start in 0..w * h {
        if component[start] != usize::MAX {
            continue;
        }
        let level = p.heights[start];
        component[start] = start;
        stack.push(start);
        members.clear();
        let mut is_peak = true;
        let mut has_border = false;
        while let Some(idx) = stack.pop() {
            members.push(idx);
            let (x, y) = ((idx % w) as isize, (idx / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if (dx == 0 && dy == 0) || nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let n = ny as usize * w + nx as usize;
                    let hv = p.heights[n];
                    if hv == level {
                        if component[n] == usize::MAX {
                            component[n] = start;
                            stack.push(n);
                        }
                    } else {
                        has_border = true;
                        if hv > level {
                            is_peak = false;
                        }
                    }
                }
            }
        }
        if is_peak && has_border {
            members.sort_unstable();
            let count = members.len() as f64;
            let cx = members.iter().map(|&i| (i % w) as f64).sum::<f64>() / count;
            let cy = members.iter().map(|&i| (i / w) as f64).sum::<f64>() / count;
            let mut best = members[0];
            let mut best_d = f64::INFINITY;
            for &i in &members {
                let d = ((i % w) as f64 - cx).powi(2) + ((i / w) as f64 - cy).powi(2);
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            peaks.push((best % w, best / w));
        }
    }
    peaks.sort_unstable_by_key(|&(x, y)| (y, x));
    peaks
}

/// How `s` integrates the profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VolumeMode {
    /// Sum of all heights times the unit pixel area.
    #[default]
    Total,
    /// Sum of heights above the mean plane.
    AboveMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawCriteria {
    pub n: f64,
    pub v: f64,
    pub s: f64,
    pub a: f64,
    pub g: f64,
    /// Set when no peak was found and `v`, `g` defaulted to zero.
    pub no_peaks: bool,
}

fn population_variance(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (sum, count) = values.clone().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / count as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
    (mean, var)
}

/// Raw criteria of a profile and the gray image it was derived from.
pub fn surface_stats(p: &SurfaceProfile, gray: &GrayImage, mode: VolumeMode) -> RoughnessResult<RawCriteria> {
    if (gray.width(), gray.height()) != (p.width, p.height) {
        return Err(RoughnessError::InvalidArgument(format!(
            "gray image {}x{} does not match profile {}x{}",
            gray.width(),
            gray.height(),
            p.width,
            p.height
        )));
    }
    let peaks = detect_peaks(p);
    let (_, v) = population_variance(peaks.iter().map(|&(x, y)| ((x * x + y * y) as f64).sqrt()));

    let s = match mode {
        VolumeMode::Total => p.heights.iter().sum(),
        VolumeMode::AboveMean => {
            let mean = p.heights.iter().sum::<f64>() / p.heights.len() as f64;
            p.heights.iter().map(|h| (h - mean).max(0.0)).sum()
        }
    };

    let (mean_gray, var_gray) = population_variance(gray.data().iter().copied());
    if mean_gray == 0.0 {
        return Err(RoughnessError::ZeroMeanGray);
    }
    let a = var_gray / mean_gray;

    let g = if peaks.is_empty() {
        0.0
    } else {
        let (m, var) = population_variance(peaks.iter().map(|&(x, y)| gray.get(x, y)));
        if m == 0.0 {
            0.0
        } else {
            100.0 * var.sqrt() / m
        }
    };

    Ok(RawCriteria {
        n: peaks.len() as f64,
        v,
        s,
        a,
        g,
        no_peaks: peaks.is_empty(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoughnessCriteria {
    pub real: RawCriteria,
    pub ideal: RawCriteria,
    pub k: [f64; 5],
    pub kt: f64,
}

/// `Ki = (ideal - real) / ideal`, `Kt = (K1 + ... + K5) / divisor`.
pub fn roughness_index(real: &RawCriteria, ideal: &RawCriteria, divisor: f64) -> RoughnessResult<RoughnessCriteria> {
    if !(divisor > 0.0) || !divisor.is_finite() {
        return Err(RoughnessError::InvalidArgument(format!(
            "divisor must be > 0, got {divisor}"
        )));
    }
    let pairs = [
        ("n", ideal.n, real.n),
        ("v", ideal.v, real.v),
        ("s", ideal.s, real.s),
        ("a", ideal.a, real.a),
        ("g", ideal.g, real.g),
    ];
    let mut k = [0.0; 5];
    for (slot, (name, id, re)) in k.iter_mut().zip(pairs) {
        if id == 0.0 {
            return Err(RoughnessError::ZeroIdealCriterion(name));
        }
        *slot = (id - re) / id;
    }
    let kt = k.iter().sum::<f64>() / divisor;
    Ok(RoughnessCriteria {
        real: *real,
        ideal: *ideal,
        k,
        kt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Pearson correlation coefficient.
    pub r: f64,
}

/// Ordinary least squares line through `(x, y)` pairs.
pub fn linear_regress(pairs: &[(f64, f64)]) -> RoughnessResult<LinearFit> {
    if pairs.len() < 2 {
        return Err(RoughnessError::DegenerateFit(format!(
            "need >= 2 pairs, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(RoughnessError::DegenerateFit("x values are constant".into()));
    }
    let slope = sxy / sxx;
    let r = if syy == 0.0 {
        0.0
    } else {
        (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
    };
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r,
    })
}

/// Dominant period of a mean-removed 1-D signal: the first local maximum
/// of its autocorrelation at lag >= 2, or `None` if there is none.
fn dominant_period(signal: &[f64]) -> Option<f64> {
    let n = signal.len();
    let mean = signal.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = signal.iter().map(|v| v - mean).collect();
    let ac: Vec<f64> = (0..n / 2 + 1)
        .map(|lag| (0..n - lag).map(|i| centred[i] * centred[i + lag]).sum::<f64>() / (n - lag) as f64)
        .collect();
    if ac[0] <= 0.0 {
        return None;
    }
    (2..ac.len().saturating_sub(1))
        .find(|&l| ac[l] > 0.0 && ac[l] >= ac[l - 1] && ac[l] > ac[l + 1])
        .map(|l| l as f64)
}

/// Estimates `(wale_period, course_period)` in pixels from the row and
/// column mean profiles of `img`.
pub fn estimate_periods(img: &GrayImage) -> Option<(f64, f64)> {
    let (w, h) = (img.width(), img.height());
    let col_means: Vec<f64> = (0..w)
        .map(|x| (0..h).map(|y| img.get(x, y)).sum::<f64>() / h as f64)
        .collect();
    let row_means: Vec<f64> = (0..h)
        .map(|y| (0..w).map(|x| img.get(x, y)).sum::<f64>() / w as f64)
        .collect();
    Some((dominant_period(&row_means)?, dominant_period(&col_means)?))
}

#[derive(Debug, Deserialize)]
struct PairRecord {
    sample_id: String,
    smd_avg: f64,
    kt_avg: f64,
}

/// Reads `sample_id,smd_avg,kt_avg` rows.
pub fn read_regression_csv<R: std::io::Read>(input: R) -> RoughnessResult<Vec<(String, f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    rdr.deserialize::<PairRecord>()
        .map(|rec| {
            let rec = rec?;
            Ok((rec.sample_id, rec.smd_avg, rec.kt_avg))
        })
        .collect()
}
