//! Segmentation scoring against ground truth.
//!
//! Counts are arranged truth-on-rows: `counts[i][j]` is the number of
//! pixels whose true class is `i` and predicted class is `j`.

use itertools::Itertools;

use crate::image::GrayImage;

/// Largest class count accepted by [`align_labels`]; the search is `M!`.
pub const MAX_ALIGN_CLASSES: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("label maps differ in size: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },
    #[error("label alignment supports at most {MAX_ALIGN_CLASSES} classes, got {0}")]
    TooManyClasses(usize),
    #[error("confusion matrix is empty")]
    Empty,
    #[error("invalid label map: {0}")]
    Invalid(String),
}

pub type EvalResult<T> = Result<T, EvalError>;

/// Raster of class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> EvalResult<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(EvalError::Invalid(format!(
                "{} labels for a {width}x{height} raster",
                labels.len()
            )));
        }
        Ok(Self { width, height, labels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// `max label + 1`.
    pub fn class_count(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m as usize + 1)
    }

    /// Applies `mapping[old] = new`.
    pub fn relabel(&self, mapping: &[usize]) -> EvalResult<Self> {
        let labels = self
            .labels
            .iter()
            .map(|&l| {
                mapping
                    .get(l as usize)
                    .map(|&n| n as u32)
                    .ok_or(EvalError::LabelOutOfRange {
                        label: l,
                        classes: mapping.len(),
                    })
            })
            .collect::<EvalResult<_>>()?;
        Ok(Self {
            width: self.width,
            height: self.height,
            labels,
        })
    }

    /// Nearest-neighbour enlargement by `factor`, cropped to `width x height`.
    pub fn upsample(&self, factor: usize, width: usize, height: usize) -> Self {
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = (y / factor).min(self.height - 1);
            for x in 0..width {
                let sx = (x / factor).min(self.width - 1);
                labels.push(self.labels[sy * self.width + sx]);
            }
        }
        Self { width, height, labels }
    }

    /// Label `i` rendered as gray `floor(255 i / (classes - 1))`.
    pub fn to_gray(&self, classes: usize) -> GrayImage {
        let denom = classes.saturating_sub(1).max(1) as u64;
        let data = self
            .labels
            .iter()
            .map(|&l| (255 * l as u64 / denom).min(255) as f64)
            .collect();
        GrayImage::new(self.width, self.height, data).expect("same shape")
    }

    /// Distinct gray levels, in ascending order, become classes `0..M`.
    pub fn from_gray_levels(img: &GrayImage) -> Self {
        let q = img.quantized();
        let mut present = [false; 256];
        for &v in &q {
            present[v as usize] = true;
        }
        let mut id = [0u32; 256];
        let mut next = 0;
        for (level, &p) in present.iter().enumerate() {
            if p {
                id[level] = next;
                next += 1;
            }
        }
        Self {
            width: img.width(),
            height: img.height(),
            labels: q.iter().map(|&v| id[v as usize]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> EvalResult<Self> {
        if counts.len() != classes * classes {
            return Err(EvalError::Invalid(format!(
                "{} counts for {classes} classes",
                counts.len()
            )));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.classes)
            .map(|i| (0..self.classes).map(|j| self.get(i, j)).sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.classes)
            .map(|j| (0..self.classes).map(|i| self.get(i, j)).sum())
            .collect()
    }
}

fn check_dims(pred: &LabelMap, truth: &LabelMap) -> EvalResult<()> {
    if pred.dims() != truth.dims() {
        return Err(EvalError::DimensionMismatch(pred.dims(), truth.dims()));
    }
    Ok(())
}

pub fn confusion(pred: &LabelMap, truth: &LabelMap, classes: usize) -> EvalResult<ConfusionMatrix> {
    check_dims(pred, truth)?;
    let mut counts = vec![0u64; classes * classes];
    for (&p, &t) in pred.labels.iter().zip(&truth.labels) {
        for l in [p, t] {
            if l as usize >= classes {
                return Err(EvalError::LabelOutOfRange { label: l, classes });
            }
        }
        counts[t as usize * classes + p as usize] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

/// Kappa coefficient in percent.
///
/// When chance agreement is total (`N^2 = sum N_i+ N_+i`) the ratio is
/// undefined; it is reported as 100 if every pixel agrees and 0 otherwise.
pub fn kappa(cm: &ConfusionMatrix) -> EvalResult<f64> {
    let n = cm.total();
    if n == 0 {
        return Err(EvalError::Empty);
    }
    let n = n as f64;
    let agree = cm.diagonal() as f64;
    let chance: f64 = cm
        .row_sums()
        .iter()
        .zip(cm.col_sums())
        .map(|(&r, c)| r as f64 * c as f64)
        .sum();
    let den = n * n - chance;
    if den == 0.0 {
        return Ok(if agree == n { 100.0 } else { 0.0 });
    }
    Ok((n * agree - chance) / den * 100.0)
}

/// Classification accuracy ratio in percent.
pub fn car(cm: &ConfusionMatrix) -> EvalResult<f64> {
    let n = cm.total();
    if n == 0 {
        return Err(EvalError::Empty);
    }
    Ok(cm.diagonal() as f64 / n as f64 * 100.0)
}

/// Relabels `pred` with the class permutation that maximizes the
/// confusion-matrix trace against `truth`. Exhaustive over all `M!`
/// permutations in lexicographic order; the first maximum wins.
///
/// Returns the relabelled map and the mapping `old label -> new label`.
pub fn align_labels(pred: &LabelMap, truth: &LabelMap) -> EvalResult<(LabelMap, Vec<usize>)> {
    check_dims(pred, truth)?;
    let m = pred.class_count().max(truth.class_count());
    if m > MAX_ALIGN_CLASSES {
        return Err(EvalError::TooManyClasses(m));
    }
    let cm = confusion(pred, truth, m)?;
    let mut best: Option<(u64, Vec<usize>)> = None;
    for perm in (0..m).permutations(m) {
        let trace: u64 = perm.iter().enumerate().map(|(old, &new)| cm.get(new, old)).sum();
        if best.as_ref().is_none_or(|(t, _)| trace > *t) {
            best = Some((trace, perm));
        }
    }
    let (_, perm) = best.expect("at least one permutation");
    Ok((pred.relabel(&perm)?, perm))
}
