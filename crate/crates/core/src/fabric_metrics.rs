//! Scalar fabric computations: yarn count conversion, tightness factor,
//! residual-bagging regression, simplex-lattice mixture designs, bagging
//! height from curves and image porosity.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::image::GrayImage;

/// `tex = TEX_PER_NE / Ne`.
pub const TEX_PER_NE: f64 = 590.5;

/// Printed coefficients of the residual bagging model (`c0..c3`).
pub const BAGGING_MODEL: [f64; 4] = [69.5, -5.56, 0.31, 9.32];

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
}

pub type MetricsResult<T> = Result<T, MetricsError>;

fn invalid(msg: impl Into<String>) -> MetricsError {
    MetricsError::InvalidArgument(msg.into())
}

fn positive(name: &str, v: f64) -> MetricsResult<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(invalid(format!("{name} must be > 0, got {v}")));
    }
    Ok(())
}

pub fn ne_to_tex(ne: f64) -> MetricsResult<f64> {
    positive("ne", ne)?;
    Ok(TEX_PER_NE / ne)
}

pub fn tex_to_ne(tex: f64) -> MetricsResult<f64> {
    positive("tex", tex)?;
    Ok(TEX_PER_NE / tex)
}

/// `TF = sqrt(tex) * needles / stitch_length`.
pub fn tightness_factor(tex: f64, needles: u32, stitch_length: f64) -> MetricsResult<f64> {
    positive("tex", tex)?;
    positive("stitch_length", stitch_length)?;
    if needles < 1 {
        return Err(invalid("needle count must be >= 1"));
    }
    Ok(tex.sqrt() * needles as f64 / stitch_length)
}

/// Count, twist and fibre blend of a yarn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YarnSpec {
    pub count_ne: f64,
    pub count_tex: f64,
    pub twist_tpm: f64,
    pub blend: Vec<(String, f64)>,
}

/// Yarn count in either system; the other one is derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum YarnCount {
    Ne(f64),
    Tex(f64),
}

impl YarnSpec {
    pub fn new(count: YarnCount, twist_tpm: f64, blend: Vec<(String, f64)>) -> MetricsResult<Self> {
        let (count_ne, count_tex) = match count {
            YarnCount::Ne(ne) => (ne, ne_to_tex(ne)?),
            YarnCount::Tex(tex) => (tex_to_ne(tex)?, tex),
        };
        if blend.iter().any(|(_, f)| !(*f >= 0.0)) {
            return Err(invalid("blend fractions must be >= 0"));
        }
        let total: f64 = blend.iter().map(|(_, f)| f).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("blend fractions sum to {total}, expected 1")));
        }
        Ok(Self {
            count_ne,
            count_tex,
            twist_tpm,
            blend,
        })
    }

    /// Fraction of the named fibre, 0 if absent.
    pub fn fraction(&self, fibre: &str) -> f64 {
        self.blend
            .iter()
            .filter(|(name, _)| name.eq_ignore_ascii_case(fibre))
            .map(|(_, f)| f)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FabricSpec {
    pub structure: String,
    /// Stitch length per structural repeat, mm.
    pub stitch_length: f64,
    /// Active needles per structural repeat.
    pub needles: u32,
    pub thickness_mm: f64,
    pub weight_gsm: f64,
}

impl FabricSpec {
    pub fn tightness_factor(&self, yarn: &YarnSpec) -> MetricsResult<f64> {
        tightness_factor(yarn.count_tex, self.needles, self.stitch_length)
    }
}

/// `B = 69.5 - 5.56 P + 0.31 TF + 9.32 TF^2`, evaluated as printed.
pub fn bagging_residual_model(p_polyester: f64, tf: f64) -> MetricsResult<f64> {
    if !(0.0..=1.0).contains(&p_polyester) {
        return Err(invalid(format!(
            "polyester fraction must lie in [0, 1], got {p_polyester}"
        )));
    }
    Ok(eval_bagging(&BAGGING_MODEL, p_polyester, tf))
}

fn eval_bagging(c: &[f64; 4], p: f64, tf: f64) -> f64 {
    c[0] + c[1] * p + c[2] * tf + c[3] * tf * tf
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaggingRow {
    pub p_polyester: f64,
    pub tf: f64,
    pub residual_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaggingFit {
    /// `c0 + c1 P + c2 TF + c3 TF^2`.
    pub coefficients: [f64; 4],
    /// Multiple correlation coefficient `sqrt(1 - SS_res / SS_tot)`.
    pub r: f64,
}

impl BaggingFit {
    pub fn predict(&self, p: f64, tf: f64) -> f64 {
        eval_bagging(&self.coefficients, p, tf)
    }
}

/// Least-squares fit of the quadratic bagging model by Householder QR.
pub fn fit_bagging_model(rows: &[BaggingRow]) -> MetricsResult<BaggingFit> {
    if rows.len() < 4 {
        return Err(MetricsError::DegenerateFit(format!(
            "need >= 4 rows, got {}",
            rows.len()
        )));
    }
    let design = DMatrix::from_fn(rows.len(), 4, |i, j| {
        let r = &rows[i];
        match j {
            0 => 1.0,
            1 => r.p_polyester,
            2 => r.tf,
            _ => r.tf * r.tf,
        }
    });
    let obs = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.residual_pct));

    // Scale columns to unit norm so the rank test is scale-free.
    let norms: Vec<f64> = (0..4).map(|j| design.column(j).norm()).collect();
    if norms.contains(&0.0) {
        return Err(MetricsError::DegenerateFit(
            "a design column is identically zero".into(),
        ));
    }
    let mut scaled = design.clone();
    for (j, &n) in norms.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / n);
    }
    let qr = scaled.qr();
    let r = qr.r();
    let diag_max = (0..4).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..4).any(|i| r[(i, i)].abs() <= 1e-10 * diag_max) {
        return Err(MetricsError::DegenerateFit("design matrix is rank deficient".into()));
    }
    let qt_b = qr.q().transpose() * &obs;
    let sol = r
        .solve_upper_triangular(&qt_b)
        .ok_or_else(|| MetricsError::DegenerateFit("triangular solve failed".into()))?;
    let mut coefficients = [0.0; 4];
    for j in 0..4 {
        coefficients[j] = sol[j] / norms[j];
    }

    let mean = obs.mean();
    let ss_tot: f64 = obs.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = rows
        .iter()
        .map(|row| (row.residual_pct - eval_bagging(&coefficients, row.p_polyester, row.tf)).powi(2))
        .sum();
    let r = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).max(0.0).sqrt()
    } else {
        1.0
    };
    Ok(BaggingFit { coefficients, r })
}

/// `{q, m}` simplex-lattice: every `q`-tuple over `{0, 1/m, ..., 1}`
/// summing to 1, in ascending lexicographic order.
pub fn simplex_lattice(q: usize, m: usize) -> MetricsResult<Vec<Vec<f64>>> {
    if q < 2 || m < 1 {
        return Err(invalid(format!(
            "simplex lattice needs q >= 2 and m >= 1, got {{{q}, {m}}}"
        )));
    }
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(q);
    fn recurse(q: usize, remaining: usize, m: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if current.len() == q - 1 {
            current.push(remaining);
            out.push(current.iter().map(|&k| k as f64 / m as f64).collect());
            current.pop();
            return;
        }
        for k in 0..=remaining {
            current.push(k);
            recurse(q, remaining - k, m, current, out);
            current.pop();
        }
    }
    recurse(q, m, m, &mut current, &mut out);
    Ok(out)
}

/// Fraction of pixels darker than `threshold`.
pub fn porosity(img: &GrayImage, threshold: f64) -> MetricsResult<f64> {
    if !(0.0..=255.0).contains(&threshold) {
        return Err(invalid(format!("threshold must lie in [0, 255], got {threshold}")));
    }
    let voids = img.data().iter().filter(|&&v| v < threshold).count();
    Ok(voids as f64 / img.len() as f64)
}

/// Otsu threshold over a 256-bin histogram of the quantized image.
///
/// Returns the level `t` such that pixels `< t` form the dark class.
pub fn otsu_threshold(img: &GrayImage) -> f64 {
    let mut hist = [0u64; 256];
    for v in img.quantized() {
        hist[v as usize] += 1;
    }
    let total = img.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (t, &count) in hist.iter().enumerate().take(255) {
        w0 += count as f64;
        sum0 += t as f64 * count as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let diff = sum0 / w0 - (sum_all - sum0) / w1;
        let between = w0 * w1 * diff * diff;
        if between > best.0 {
            best = (between, t);
        }
    }
    (best.1 + 1) as f64
}

/// Residual bagging height in percent of the loaded dome.
///
/// `100 * max(residual - baseline) / max(loaded - baseline)`, or 0 when
/// the residual curve never rises above the baseline.
pub fn bagging_height_from_curve(residual: &[f64], baseline: &[f64], loaded: &[f64]) -> MetricsResult<f64> {
    if residual.len() != baseline.len() || loaded.len() != baseline.len() {
        return Err(invalid(format!(
            "curve lengths differ: residual {}, baseline {}, loaded {}",
            residual.len(),
            baseline.len(),
            loaded.len()
        )));
    }
    if baseline.len() < 3 {
        return Err(invalid(format!("need >= 3 samples, got {}", baseline.len())));
    }
    let peak = |curve: &[f64]| {
        curve
            .iter()
            .zip(baseline)
            .map(|(c, b)| c - b)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let reference = peak(loaded);
    if !(reference > 0.0) {
        return Err(MetricsError::DegenerateFit("loaded dome height is zero".into()));
    }
    let raised = peak(residual);
    if raised <= 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * raised / reference)
}

#[derive(Debug, Deserialize)]
struct BlendRecord {
    sample: String,
    p_polyester: f64,
    tf: f64,
    residual_bagging_pct: f64,
}

/// Reads `sample,p_polyester,tf,residual_bagging_pct` rows.
pub fn read_blends_csv<R: std::io::Read>(input: R) -> MetricsResult<Vec<(String, BaggingRow)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    rdr.deserialize::<BlendRecord>()
        .map(|rec| {
            let rec = rec?;
            Ok((
                rec.sample,
                BaggingRow {
                    p_polyester: rec.p_polyester,
                    tf: rec.tf,
                    residual_pct: rec.residual_bagging_pct,
                },
            ))
        })
        .collect()
}

/// Dome profiles sampled along one diameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BaggingCurves {
    pub position_mm: Vec<f64>,
    pub baseline_mm: Vec<f64>,
    pub loaded_mm: Vec<f64>,
    pub residual_mm: Vec<f64>,
}

impl BaggingCurves {
    pub fn residual_height(&self) -> MetricsResult<f64> {
        bagging_height_from_curve(&self.residual_mm, &self.baseline_mm, &self.loaded_mm)
    }
}

#[derive(Debug, Deserialize)]
struct CurveRecord {
    position_mm: f64,
    baseline_mm: f64,
    loaded_mm: f64,
    residual_mm: f64,
}

/// Reads `position_mm,baseline_mm,loaded_mm,residual_mm` rows.
pub fn read_curves_csv<R: std::io::Read>(input: R) -> MetricsResult<BaggingCurves> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut curves = BaggingCurves::default();
    for rec in rdr.deserialize::<CurveRecord>() {
        let rec = rec?;
        curves.position_mm.push(rec.position_mm);
        curves.baseline_mm.push(rec.baseline_mm);
        curves.loaded_mm.push(rec.loaded_mm);
        curves.residual_mm.push(rec.residual_mm);
    }
    Ok(curves)
}
