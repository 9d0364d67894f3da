//! Pyramidal 2-D wavelet analysis and synthesis.
//!
//! Each level filters the previous approximation along rows, then along
//! columns, keeping every second sample (the `m - 2k` index pattern).
//! Four subbands come out per level: `LL` (low x, low y), `HL` (high x,
//! low y), `LH` (low x, high y) and `HH`. Only `LL` is decomposed further.
//!
//! The input is first extended by half-sample symmetric reflection to a
//! multiple of `2^levels` per axis, so every level sees even lengths.
//! Filters longer than two taps wrap periodically inside a level, which
//! keeps orthonormal banks exactly invertible.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::image::{save_image, GrayImage, ImageError};

#[derive(Debug, thiserror::Error)]
pub enum WaveletError {
    #[error("decomposition needs at least one level, got {0}")]
    InvalidLevels(usize),
    #[error("invalid filter bank: {0}")]
    InvalidFilterBank(String),
    #[error("inconsistent pyramid: {0}")]
    Structure(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

pub type WaveletResult<T> = Result<T, WaveletError>;

/// Orthonormal two-channel analysis filter bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub name: String,
    pub lowpass: Vec<f64>,
    pub highpass: Vec<f64>,
}

impl FilterBank {
    pub fn haar() -> Self {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            name: "haar".into(),
            lowpass: vec![c, c],
            highpass: vec![c, -c],
        }
    }

    /// Checks unit energy of both filters and their mutual orthogonality.
    pub fn validate(&self) -> WaveletResult<()> {
        let (h, g) = (&self.lowpass, &self.highpass);
        if h.is_empty() || h.len() != g.len() || h.len() % 2 != 0 {
            return Err(WaveletError::InvalidFilterBank(format!(
                "{}: filters must share an even, non-zero length ({} vs {})",
                self.name,
                h.len(),
                g.len()
            )));
        }
        let hh: f64 = h.iter().map(|v| v * v).sum();
        let gg: f64 = g.iter().map(|v| v * v).sum();
        let hg: f64 = h.iter().zip(g).map(|(a, b)| a * b).sum();
        const TOL: f64 = 1e-9;
        if (hh - 1.0).abs() > TOL || (gg - 1.0).abs() > TOL || hg.abs() > TOL {
            return Err(WaveletError::InvalidFilterBank(format!(
                "{}: not orthonormal (sum h^2 = {hh}, sum g^2 = {gg}, sum hg = {hg})",
                self.name
            )));
        }
        Ok(())
    }
}

impl Default for FilterBank {
    fn default() -> Self {
        Self::haar()
    }
}

/// Detail subbands of one decomposition level.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailBands {
    pub hl: GrayImage,
    pub lh: GrayImage,
    pub hh: GrayImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid {
    /// `details[n - 1]` holds level `n`.
    pub details: Vec<DetailBands>,
    /// Raw `LL` coefficients of the last level.
    pub approximation: GrayImage,
    pub original_size: (usize, usize),
    pub padded_size: (usize, usize),
}

impl WaveletPyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Sum of squares over every stored coefficient.
    pub fn energy(&self) -> f64 {
        let sq = |img: &GrayImage| img.data().iter().map(|v| v * v).sum::<f64>();
        sq(&self.approximation)
            + self
                .details
                .iter()
                .map(|d| sq(&d.hl) + sq(&d.lh) + sq(&d.hh))
                .sum::<f64>()
    }
}

/// Half-sample symmetric reflection of index `i` into `0..n`.
fn reflect(i: usize, n: usize) -> usize {
    let period = 2 * n;
    let m = i % period;
    if m < n {
        m
    } else {
        period - 1 - m
    }
}

/// Smallest multiple of `2^levels` that is at least `n`.
pub fn padded_len(n: usize, levels: usize) -> usize {
    let block = 1usize << levels;
    n.div_ceil(block) * block
}

/// Symmetric extension of `img` to a multiple of `2^levels` per axis.
pub fn pad_symmetric(img: &GrayImage, levels: usize) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let (pw, ph) = (padded_len(w, levels), padded_len(h, levels));
    if (pw, ph) == (w, h) {
        return img.clone();
    }
    GrayImage::from_fn(pw, ph, |x, y| img.get(reflect(x, w), reflect(y, h)))
}

/// One analysis step on a 1-D signal of even length.
fn analyze_line(input: &[f64], bank: &FilterBank, low: &mut [f64], high: &mut [f64]) {
    let n = input.len();
    for k in 0..n / 2 {
        let mut lo = 0.0;
        let mut hi = 0.0;
        for (j, (&hj, &gj)) in bank.lowpass.iter().zip(&bank.highpass).enumerate() {
            let v = input[(2 * k + j) % n];
            lo += hj * v;
            hi += gj * v;
        }
        low[k] = lo;
        high[k] = hi;
    }
}

/// Adjoint of [`analyze_line`]; its inverse for orthonormal banks.
fn synthesize_line(low: &[f64], high: &[f64], bank: &FilterBank, out: &mut [f64]) {
    let n = out.len();
    out.fill(0.0);
    for k in 0..low.len() {
        for (j, (&hj, &gj)) in bank.lowpass.iter().zip(&bank.highpass).enumerate() {
            out[(2 * k + j) % n] += hj * low[k] + gj * high[k];
        }
    }
}

/// Splits an image with even dimensions into `(LL, HL, LH, HH)`.
fn analyze_2d(img: &GrayImage, bank: &FilterBank) -> (GrayImage, GrayImage, GrayImage, GrayImage) {
    let (w, h) = (img.width(), img.height());
    let (hw, hh) = (w / 2, h / 2);

    // Rows: low/high halves along x.
    let mut row_low = vec![0.0; hw * h];
    let mut row_high = vec![0.0; hw * h];
    for y in 0..h {
        analyze_line(
            &img.data()[y * w..(y + 1) * w],
            bank,
            &mut row_low[y * hw..(y + 1) * hw],
            &mut row_high[y * hw..(y + 1) * hw],
        );
    }

    // Columns of each half.
    let columns = |src: &[f64]| {
        let mut low = vec![0.0; hw * hh];
        let mut high = vec![0.0; hw * hh];
        let mut col = vec![0.0; h];
        let mut lo = vec![0.0; hh];
        let mut hi = vec![0.0; hh];
        for x in 0..hw {
            for y in 0..h {
                col[y] = src[y * hw + x];
            }
            analyze_line(&col, bank, &mut lo, &mut hi);
            for k in 0..hh {
                low[k * hw + x] = lo[k];
                high[k * hw + x] = hi[k];
            }
        }
        (low, high)
    };
    let (ll, lh) = columns(&row_low);
    let (hl, hhb) = columns(&row_high);
    let mk = |d| GrayImage::new(hw, hh, d).expect("subband shape");
    (mk(ll), mk(hl), mk(lh), mk(hhb))
}

fn synthesize_2d(ll: &GrayImage, bands: &DetailBands, bank: &FilterBank) -> GrayImage {
    let (hw, hh) = (ll.width(), ll.height());
    let (w, h) = (2 * hw, 2 * hh);

    let columns = |low: &GrayImage, high: &GrayImage| {
        let mut out = vec![0.0; hw * h];
        let mut lo = vec![0.0; hh];
        let mut hi = vec![0.0; hh];
        let mut col = vec![0.0; h];
        for x in 0..hw {
            for k in 0..hh {
                lo[k] = low.get(x, k);
                hi[k] = high.get(x, k);
            }
            synthesize_line(&lo, &hi, bank, &mut col);
            for y in 0..h {
                out[y * hw + x] = col[y];
            }
        }
        out
    };
    let row_low = columns(ll, &bands.lh);
    let row_high = columns(&bands.hl, &bands.hh);

    let mut data = vec![0.0; w * h];
    for y in 0..h {
        synthesize_line(
            &row_low[y * hw..(y + 1) * hw],
            &row_high[y * hw..(y + 1) * hw],
            bank,
            &mut data[y * w..(y + 1) * w],
        );
    }
    GrayImage::new(w, h, data).expect("reconstructed shape")
}

/// Multi-level decomposition of `img`.
pub fn decompose(img: &GrayImage, levels: usize, bank: &FilterBank) -> WaveletResult<WaveletPyramid> {
    if levels < 1 {
        return Err(WaveletError::InvalidLevels(levels));
    }
    bank.validate()?;
    let padded = pad_symmetric(img, levels);
    let padded_size = (padded.width(), padded.height());
    let mut current = padded;
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (ll, hl, lh, hh) = analyze_2d(&current, bank);
        details.push(DetailBands { hl, lh, hh });
        current = ll;
    }
    Ok(WaveletPyramid {
        details,
        approximation: current,
        original_size: (img.width(), img.height()),
        padded_size,
    })
}

/// Inverse of [`decompose`], cropped back to the original size.
pub fn reconstruct(pyr: &WaveletPyramid, bank: &FilterBank) -> WaveletResult<GrayImage> {
    bank.validate()?;
    let levels = pyr.levels();
    if levels == 0 {
        return Err(WaveletError::Structure("pyramid has no levels".into()));
    }
    let (pw, ph) = pyr.padded_size;
    for (i, d) in pyr.details.iter().enumerate() {
        let expect = (pw >> (i + 1), ph >> (i + 1));
        for (name, band) in [("HL", &d.hl), ("LH", &d.lh), ("HH", &d.hh)] {
            if (band.width(), band.height()) != expect {
                return Err(WaveletError::Structure(format!(
                    "level {} {name} is {}x{}, expected {}x{}",
                    i + 1,
                    band.width(),
                    band.height(),
                    expect.0,
                    expect.1
                )));
            }
        }
    }
    let expect = (pw >> levels, ph >> levels);
    let a = &pyr.approximation;
    if (a.width(), a.height()) != expect || expect.0 << levels != pw || expect.1 << levels != ph {
        return Err(WaveletError::Structure(format!(
            "approximation is {}x{}, expected {}x{}",
            a.width(),
            a.height(),
            expect.0,
            expect.1
        )));
    }
    let (ow, oh) = pyr.original_size;
    if ow == 0 || oh == 0 || ow > pw || oh > ph {
        return Err(WaveletError::Structure(format!(
            "original size {ow}x{oh} does not fit padded {pw}x{ph}"
        )));
    }

    let mut current = a.clone();
    for d in pyr.details.iter().rev() {
        current = synthesize_2d(&current, d, bank);
    }
    if (ow, oh) == (pw, ph) {
        return Ok(current);
    }
    Ok(GrayImage::from_fn(ow, oh, |x, y| current.get(x, y)))
}

/// Final `LL` divided by `2^levels`, i.e. back on the intensity scale.
///
/// The factor is the Haar low-pass DC gain (`sqrt 2` per axis per level).
pub fn approximation(pyr: &WaveletPyramid) -> GrayImage {
    let scale = (1u64 << pyr.levels()) as f64;
    pyr.approximation.map(|v| v / scale)
}

/// Writes every subband as a min-max stretched PGM (diagnostic only).
pub fn dump_subbands(pyr: &WaveletPyramid, dir: impl AsRef<Path>) -> WaveletResult<()> {
    let dir = dir.as_ref();
    let stretch = |img: &GrayImage| {
        let (lo, hi) = img.min_max();
        let span = hi - lo;
        img.map(|v| if span > 0.0 { 255.0 * (v - lo) / span } else { 0.0 })
    };
    for (i, d) in pyr.details.iter().enumerate() {
        let n = i + 1;
        save_image(&stretch(&d.hl), dir.join(format!("level{n}_hl.pgm")))?;
        save_image(&stretch(&d.lh), dir.join(format!("level{n}_lh.pgm")))?;
        save_image(&stretch(&d.hh), dir.join(format!("level{n}_hh.pgm")))?;
    }
    save_image(
        &stretch(&pyr.approximation),
        dir.join(format!("level{}_ll.pgm", pyr.levels())),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.gen_range(0.0..255.0))
    }

    fn max_abs(a: &GrayImage, b: &GrayImage) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_2x2() {
        let a = 37.0;
        let pyr = decompose(&GrayImage::filled(2, 2, a), 1, &FilterBank::haar()).unwrap();
        assert!((pyr.approximation.get(0, 0) - 2.0 * a).abs() < 1e-12);
        let d = &pyr.details[0];
        for band in [&d.hl, &d.lh, &d.hh] {
            assert!(band.get(0, 0).abs() < 1e-12);
        }
    }

    #[test]
    fn generic_2x2() {
        let (p, q, r, s) = (3.0, 8.0, -1.0, 5.5);
        let img = GrayImage::new(2, 2, vec![p, q, r, s]).unwrap();
        let pyr = decompose(&img, 1, &FilterBank::haar()).unwrap();
        assert!((pyr.approximation.get(0, 0) - (p + q + r + s) / 2.0).abs() < 1e-12);
        let d = &pyr.details[0];
        // High in x: left minus right columns.
        assert!((d.hl.get(0, 0) - (p - q + r - s) / 2.0).abs() < 1e-12);
        assert!((d.lh.get(0, 0) - (p + q - r - s) / 2.0).abs() < 1e-12);
        assert!((d.hh.get(0, 0) - (p - q - r + s) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_level_dimensions() {
        let pyr = decompose(&random_image(40, 24, 1), 2, &FilterBank::haar()).unwrap();
        assert_eq!((pyr.details[0].hl.width(), pyr.details[0].hl.height()), (20, 12));
        assert_eq!((pyr.details[1].hh.width(), pyr.details[1].hh.height()), (10, 6));
        assert_eq!((pyr.approximation.width(), pyr.approximation.height()), (10, 6));
    }

    #[test]
    fn odd_sizes_are_padded_and_cropped() {
        let img = random_image(13, 7, 2);
        let pyr = decompose(&img, 3, &FilterBank::haar()).unwrap();
        assert_eq!(pyr.padded_size, (16, 8));
        assert_eq!(pyr.original_size, (13, 7));
        let back = reconstruct(&pyr, &FilterBank::haar()).unwrap();
        assert!(max_abs(&img, &back) < 1e-10);
    }

    #[test]
    fn tiny_image_with_deep_padding() {
        let img = GrayImage::new(1, 2, vec![4.0, 9.0]).unwrap();
        let pyr = decompose(&img, 3, &FilterBank::haar()).unwrap();
        assert_eq!(pyr.padded_size, (8, 8));
        assert!(max_abs(&img, &reconstruct(&pyr, &FilterBank::haar()).unwrap()) < 1e-10);
    }

    #[test]
    fn perfect_reconstruction() {
        let bank = FilterBank::haar();
        let x = random_image(8, 8, 3);
        assert!(max_abs(&x, &reconstruct(&decompose(&x, 1, &bank).unwrap(), &bank).unwrap()) < 1e-10);
        let x = random_image(64, 64, 4);
        assert!(max_abs(&x, &reconstruct(&decompose(&x, 3, &bank).unwrap(), &bank).unwrap()) < 1e-10);
    }

    #[test]
    fn daubechies4_round_trip() {
        let s3 = 3f64.sqrt();
        let d = 4.0 * 2f64.sqrt();
        let h = vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d];
        let g = vec![h[3], -h[2], h[1], -h[0]];
        let bank = FilterBank {
            name: "db2".into(),
            lowpass: h,
            highpass: g,
        };
        let x = random_image(32, 16, 5);
        let pyr = decompose(&x, 2, &bank).unwrap();
        assert!(max_abs(&x, &reconstruct(&pyr, &bank).unwrap()) < 1e-10);
        let e: f64 = x.data().iter().map(|v| v * v).sum();
        assert!(((pyr.energy() - e) / e).abs() < 1e-9);
    }

    #[test]
    fn detail_free_constant_reconstructs() {
        let bank = FilterBank::haar();
        let mut pyr = decompose(&GrayImage::filled(16, 16, 90.0), 2, &bank).unwrap();
        for d in &mut pyr.details {
            d.hl.data_mut().fill(0.0);
            d.lh.data_mut().fill(0.0);
            d.hh.data_mut().fill(0.0);
        }
        let back = reconstruct(&pyr, &bank).unwrap();
        assert!(back.data().iter().all(|v| (v - 90.0).abs() < 1e-10));
    }

    #[test]
    fn approximation_is_on_intensity_scale() {
        for levels in 1..=4 {
            let pyr = decompose(&GrayImage::filled(32, 32, 128.0), levels, &FilterBank::haar()).unwrap();
            assert!(pyr
                .approximation
                .data()
                .iter()
                .all(|v| (v - 128.0 * (1 << levels) as f64).abs() < 1e-9));
            assert!(approximation(&pyr).data().iter().all(|v| (v - 128.0).abs() < 1e-10));
        }
    }

    #[test]
    fn approximation_of_blocks_is_block_mean() {
        let raw = [
            0.0, 255.0, 0.0, 0.0, 255.0, 255.0, 255.0, 0.0, 0.0, 0.0, 255.0, 255.0, 0.0, 255.0, 255.0, 255.0,
        ];
        let img = GrayImage::new(4, 4, raw.to_vec()).unwrap();
        let a = approximation(&decompose(&img, 1, &FilterBank::haar()).unwrap());
        for by in 0..2 {
            for bx in 0..2 {
                let mean = (img.get(2 * bx, 2 * by)
                    + img.get(2 * bx + 1, 2 * by)
                    + img.get(2 * bx, 2 * by + 1)
                    + img.get(2 * bx + 1, 2 * by + 1))
                    / 4.0;
                assert!((a.get(bx, by) - mean).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_zero_levels_and_bad_banks() {
        let img = GrayImage::filled(4, 4, 1.0);
        assert!(matches!(
            decompose(&img, 0, &FilterBank::haar()),
            Err(WaveletError::InvalidLevels(0))
        ));
        let bad = FilterBank {
            name: "bad".into(),
            lowpass: vec![0.5, 0.5],
            highpass: vec![0.5, -0.5],
        };
        assert!(matches!(
            decompose(&img, 1, &bad),
            Err(WaveletError::InvalidFilterBank(_))
        ));
    }

    #[test]
    fn mismatched_subband_is_structure_error() {
        let bank = FilterBank::haar();
        let mut pyr = decompose(&random_image(8, 8, 6), 2, &bank).unwrap();
        pyr.details[1].hh = GrayImage::filled(3, 2, 0.0);
        assert!(matches!(reconstruct(&pyr, &bank), Err(WaveletError::Structure(_))));
    }

    #[test]
    fn dump_writes_all_bands() {
        let dir = tempfile::tempdir().unwrap();
        let pyr = decompose(&random_image(8, 8, 7), 2, &FilterBank::haar()).unwrap();
        dump_subbands(&pyr, dir.path()).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 7);
    }

    proptest::proptest! {
        #[test]
        fn decomposition_is_linear(seed_a in 0u64..1000, seed_b in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let bank = FilterBank::haar();
            let x = random_image(12, 10, seed_a);
            let y = random_image(12, 10, seed_b);
            let combo = GrayImage::new(12, 10, x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let (px, py, pc) = (decompose(&x, 2, &bank).unwrap(), decompose(&y, 2, &bank).unwrap(), decompose(&combo, 2, &bank).unwrap());
            let flat = |p: &WaveletPyramid| {
                let mut v = p.approximation.data().to_vec();
                for d in &p.details {
                    v.extend_from_slice(d.hl.data());
                    v.extend_from_slice(d.lh.data());
                    v.extend_from_slice(d.hh.data());
                }
                v
            };
            for ((cx, cy), cc) in flat(&px).iter().zip(flat(&py)).zip(flat(&pc)) {
                proptest::prop_assert!((a * cx + b * cy - cc).abs() < 1e-10);
            }
        }
    }
}
