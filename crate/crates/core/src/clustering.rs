//! Fuzzy c-means: the classic Euclidean algorithm and a Gaussian-kernel
//! variant that measures distances in the kernel-induced feature space.
//!
//! Both fits share one alternating loop:
//!
//! 1. memberships `U` from the current centres,
//! 2. centres from `U`,
//! 3. record `J(U, V)` and `max |U - U_prev|`,
//!
//! stopping once the membership change drops below `epsilon` or after
//! `max_iter` rounds. The initial `U` is drawn uniformly from a seeded
//! generator with normalized columns, and the starting centres come from
//! one centre update on it.
//!
//! With `K(x, x) = 1` the kernel distance `||phi(x) - phi(v)||^2` reduces
//! to `2 (1 - K(x, v))`; the factor 2 cancels in the membership ratio, so
//! the kernel fit minimizes `sum u^m (1 - K)`.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evaluation::LabelMap;
use crate::image::GrayImage;

/// Distances below this are treated as coincident.
pub const SINGULARITY_EPS: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("invalid clustering configuration: {0}")]
    InvalidConfig(String),
    #[error("need at least as many samples as clusters ({samples} < {clusters})")]
    TooFewSamples { samples: usize, clusters: usize },
    #[error("feature matrix is malformed: {0}")]
    Features(String),
    #[error("initial membership matrix is malformed: {0}")]
    Membership(String),
    #[error("failed to write trace: {0}")]
    Io(#[from] std::io::Error),
}

pub type ClusterResult<T> = Result<T, ClusterError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Pixel value only (`d = 1`).
    #[default]
    Intensity,
    /// Value, 3x3 mean and 3x3 standard deviation (`d = 3`).
    IntensityLocalStats,
}

/// Row-major `n x d` sample matrix tied to the raster it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
    shape: (usize, usize),
}

impl FeatureMatrix {
    /// `data` holds `n * d` entries, with `n = width * height`.
    pub fn new(d: usize, data: Vec<f64>, shape: (usize, usize)) -> ClusterResult<Self> {
        if d == 0 {
            return Err(ClusterError::Features("feature dimension must be >= 1".into()));
        }
        let n = shape.0 * shape.1;
        if data.len() != n * d {
            return Err(ClusterError::Features(format!(
                "{} values for {n} samples of dimension {d}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ClusterError::Features(format!("non-finite entry at index {i}")));
        }
        Ok(Self { n, d, data, shape })
    }

    /// Samples laid out as a `rows.len() x 1` raster.
    pub fn from_rows(rows: &[Vec<f64>]) -> ClusterResult<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(ClusterError::Features("rows differ in length".into()));
        }
        Self::new(d, rows.concat(), (rows.len(), 1))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.d..(k + 1) * self.d]
    }

    /// Pixel coordinates of sample `k`.
    pub fn pixel_of(&self, k: usize) -> (usize, usize) {
        (k % self.shape.0, k / self.shape.0)
    }
}

/// Per-pixel features, standardized to zero mean and unit population
/// variance per dimension. Constant dimensions become all-zero.
pub fn extract_features(img: &GrayImage, mode: FeatureMode) -> FeatureMatrix {
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    let mut data = match mode {
        FeatureMode::Intensity => img.data().to_vec(),
        FeatureMode::IntensityLocalStats => {
            let mut out = Vec::with_capacity(3 * n);
            for y in 0..h {
                for x in 0..w {
                    let mut vals = [0.0; 9];
                    let mut i = 0;
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            vals[i] = img.get_clamped(x as isize + dx, y as isize + dy);
                            i += 1;
                        }
                    }
                    let mean = vals.iter().sum::<f64>() / 9.0;
                    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0;
                    out.extend([img.get(x, y), mean, var.sqrt()]);
                }
            }
            out
        }
    };
    let d = data.len() / n;
    for j in 0..d {
        let mean = (0..n).map(|k| data[k * d + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|k| (data[k * d + j] - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        for k in 0..n {
            let v = &mut data[k * d + j];
            *v = if std > 0.0 { (*v - mean) / std } else { 0.0 };
        }
    }
    FeatureMatrix::new(d, data, (w, h)).expect("features are finite by construction")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FcmConfig {
    pub clusters: usize,
    pub fuzzifier: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for FcmConfig {
    fn default() -> Self {
        Self {
            clusters: 3,
            fuzzifier: 2.0,
            epsilon: 0.01,
            max_iter: 100,
            seed: 0,
        }
    }
}

impl FcmConfig {
    pub fn validate(&self) -> ClusterResult<()> {
        if self.clusters < 2 {
            return Err(ClusterError::InvalidConfig(format!(
                "clusters must be >= 2, got {}",
                self.clusters
            )));
        }
        if !(self.fuzzifier > 1.0) || !self.fuzzifier.is_finite() {
            return Err(ClusterError::InvalidConfig(format!(
                "fuzzifier must be > 1, got {}",
                self.fuzzifier
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(ClusterError::InvalidConfig(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if self.max_iter < 1 {
            return Err(ClusterError::InvalidConfig("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    #[default]
    GaussianRbf,
}

/// `K(x, y) = exp(-||x - y||^2 / sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(default)]
    pub kind: KernelKind,
    pub sigma: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            kind: KernelKind::GaussianRbf,
            sigma: 1.0,
        }
    }
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> ClusterResult<Self> {
        let k = Self {
            kind: KernelKind::GaussianRbf,
            sigma,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> ClusterResult<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(ClusterError::InvalidConfig(format!(
                "kernel sigma must be > 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            KernelKind::GaussianRbf => (-sq_dist(x, y) / (self.sigma * self.sigma)).exp(),
        }
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStat {
    pub iter: usize,
    pub objective: f64,
    pub max_delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    /// Row-major `c x d`.
    pub centers: Vec<f64>,
    /// Row-major `c x n`: `membership[i * n + k] = u_ik`.
    pub membership: Vec<f64>,
    pub clusters: usize,
    pub samples: usize,
    pub dim: usize,
    pub iterations_used: usize,
    pub objective_history: Vec<f64>,
    pub trace: Vec<IterationStat>,
    pub converged: bool,
}

impl ClusterModel {
    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.dim..(i + 1) * self.dim]
    }

    pub fn u(&self, i: usize, k: usize) -> f64 {
        self.membership[i * self.samples + k]
    }

    pub fn final_objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(f64::NAN)
    }

    /// Hard label (argmax membership, lowest index on ties) per sample.
    pub fn hard_labels(&self) -> Vec<u32> {
        (0..self.samples)
            .map(|k| {
                let mut best = 0;
                for i in 1..self.clusters {
                    if self.u(i, k) > self.u(best, k) {
                        best = i;
                    }
                }
                best as u32
            })
            .collect()
    }

    /// Writes the per-iteration trace as `iter,J,max_delta_u` CSV.
    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> ClusterResult<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "iter,J,max_delta_u")?;
        for s in &self.trace {
            writeln!(f, "{},{},{}", s.iter, s.objective, s.max_delta)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Per-iteration view handed to fit observers.
pub struct IterationView<'a> {
    pub stat: IterationStat,
    pub membership: &'a [f64],
    pub centers: &'a [f64],
}

/// Seeded uniform memberships with columns normalized to 1.
pub fn initial_membership(samples: usize, clusters: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = vec![0.0; clusters * samples];
    for k in 0..samples {
        let mut col = 0.0;
        for i in 0..clusters {
            // (0, 1] avoids an all-zero column.
            let v = 1.0 - rng.gen::<f64>();
            u[i * samples + k] = v;
            col += v;
        }
        for i in 0..clusters {
            u[i * samples + k] /= col;
        }
    }
    u
}

#[derive(Clone, Copy)]
enum Metric<'a> {
    Euclidean,
    Kernel(&'a KernelSpec),
}

impl Metric<'_> {
    /// Squared Euclidean distance or `1 - K`.
    #[inline]
    fn dissimilarity(&self, x: &[f64], v: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => sq_dist(x, v),
            Metric::Kernel(k) => 1.0 - k.eval(x, v),
        }
    }
}

fn update_membership(x: &FeatureMatrix, centers: &[f64], c: usize, m: f64, metric: Metric<'_>, u: &mut [f64]) {
    let (n, d) = (x.n(), x.d());
    let expo = 1.0 / (m - 1.0);
    let mut inv = vec![0.0; c];
    for k in 0..n {
        let xk = x.row(k);
        let mut singular = None;
        for i in 0..c {
            let dist = metric.dissimilarity(xk, &centers[i * d..(i + 1) * d]);
            if dist < SINGULARITY_EPS {
                singular = Some(i);
                break;
            }
            inv[i] = (1.0 / dist).powf(expo);
        }
        match singular {
            Some(s) => {
                for i in 0..c {
                    u[i * n + k] = if i == s { 1.0 } else { 0.0 };
                }
            }
            None => {
                let total: f64 = inv.iter().sum();
                for i in 0..c {
                    u[i * n + k] = inv[i] / total;
                }
            }
        }
    }
}

/// Weighted-mean centre update. The kernel variant additionally weights
/// each sample by `K(x_k, v_i)` at the previous centre; a cluster whose
/// total weight vanishes keeps its previous centre.
fn update_centers(x: &FeatureMatrix, u: &[f64], c: usize, m: f64, metric: Metric<'_>, centers: &mut [f64]) {
    let (n, d) = (x.n(), x.d());
    let mut acc = vec![0.0; d];
    for i in 0..c {
        acc.fill(0.0);
        let mut total = 0.0;
        let prev = centers[i * d..(i + 1) * d].to_vec();
        for k in 0..n {
            let xk = x.row(k);
            let mut wgt = u[i * n + k].powf(m);
            if let Metric::Kernel(kern) = metric {
                wgt *= kern.eval(xk, &prev);
            }
            total += wgt;
            for (a, &xv) in acc.iter_mut().zip(xk) {
                *a += wgt * xv;
            }
        }
        if total > 0.0 {
            for (dst, a) in centers[i * d..(i + 1) * d].iter_mut().zip(&acc) {
                *dst = a / total;
            }
        }
    }
}

fn objective(x: &FeatureMatrix, u: &[f64], centers: &[f64], c: usize, m: f64, metric: Metric<'_>) -> f64 {
    let (n, d) = (x.n(), x.d());
    let mut j = 0.0;
    for i in 0..c {
        let v = &centers[i * d..(i + 1) * d];
        for k in 0..n {
            j += u[i * n + k].powf(m) * metric.dissimilarity(x.row(k), v);
        }
    }
    j
}

fn check_inputs(x: &FeatureMatrix, cfg: &FcmConfig, u0: &[f64]) -> ClusterResult<()> {
    cfg.validate()?;
    let (n, c) = (x.n(), cfg.clusters);
    if n < c {
        return Err(ClusterError::TooFewSamples {
            samples: n,
            clusters: c,
        });
    }
    if u0.len() != c * n {
        return Err(ClusterError::Membership(format!(
            "{} entries, expected {}",
            u0.len(),
            c * n
        )));
    }
    for k in 0..n {
        let col: f64 = (0..c).map(|i| u0[i * n + k]).sum();
        if (col - 1.0).abs() > 1e-9 || (0..c).any(|i| !(0.0..=1.0).contains(&u0[i * n + k])) {
            return Err(ClusterError::Membership(format!(
                "column {k} is not a probability vector"
            )));
        }
    }
    Ok(())
}

fn run(
    x: &FeatureMatrix,
    cfg: &FcmConfig,
    metric: Metric<'_>,
    u0: Vec<f64>,
    observer: &mut dyn FnMut(&IterationView<'_>),
) -> ClusterResult<ClusterModel> {
    check_inputs(x, cfg, &u0)?;
    let (n, d, c, m) = (x.n(), x.d(), cfg.clusters, cfg.fuzzifier);

    let mut u = u0;
    let mut centers = vec![0.0; c * d];
    // Plain weighted means seed the centres, whatever the metric.
    update_centers(x, &u, c, m, Metric::Euclidean, &mut centers);

    let mut next = vec![0.0; c * n];
    let mut history = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        update_membership(x, &centers, c, m, metric, &mut next);
        let max_delta = u.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut u, &mut next);
        update_centers(x, &u, c, m, metric, &mut centers);
        let j = objective(x, &u, &centers, c, m, metric);
        let stat = IterationStat {
            iter: iterations,
            objective: j,
            max_delta,
        };
        observer(&IterationView {
            stat,
            membership: &u,
            centers: &centers,
        });
        history.push(j);
        trace.push(stat);
        if max_delta < cfg.epsilon {
            converged = true;
            break;
        }
    }

    Ok(ClusterModel {
        centers,
        membership: u,
        clusters: c,
        samples: n,
        dim: d,
        iterations_used: iterations,
        objective_history: history,
        trace,
        converged,
    })
}

/// Classic Euclidean fuzzy c-means.
pub fn fcm_fit(x: &FeatureMatrix, cfg: &FcmConfig) -> ClusterResult<ClusterModel> {
    cfg.validate()?;
    let u0 = initial_membership(x.n(), cfg.clusters, cfg.seed);
    run(x, cfg, Metric::Euclidean, u0, &mut |_| {})
}

/// Kernel fuzzy c-means with a Gaussian Mercer kernel.
pub fn kfcm_fit(x: &FeatureMatrix, cfg: &FcmConfig, kernel: &KernelSpec) -> ClusterResult<ClusterModel> {
    cfg.validate()?;
    kernel.validate()?;
    let u0 = initial_membership(x.n(), cfg.clusters, cfg.seed);
    run(x, cfg, Metric::Kernel(kernel), u0, &mut |_| {})
}

/// [`fcm_fit`] from an explicit initial membership, reporting every
/// iteration to `observer`.
pub fn fcm_fit_from(
    x: &FeatureMatrix,
    cfg: &FcmConfig,
    u0: Vec<f64>,
    mut observer: impl FnMut(&IterationView<'_>),
) -> ClusterResult<ClusterModel> {
    run(x, cfg, Metric::Euclidean, u0, &mut observer)
}

/// [`kfcm_fit`] from an explicit initial membership, reporting every
/// iteration to `observer`.
pub fn kfcm_fit_from(
    x: &FeatureMatrix,
    cfg: &FcmConfig,
    kernel: &KernelSpec,
    u0: Vec<f64>,
    mut observer: impl FnMut(&IterationView<'_>),
) -> ClusterResult<ClusterModel> {
    kernel.validate()?;
    run(x, cfg, Metric::Kernel(kernel), u0, &mut observer)
}

/// Argmax label raster, ties resolved toward the smaller cluster index.
pub fn labels_from_membership(model: &ClusterModel, shape: (usize, usize)) -> ClusterResult<LabelMap> {
    if shape.0 * shape.1 != model.samples {
        return Err(ClusterError::Features(format!(
            "shape {}x{} does not match {} samples",
            shape.0, shape.1, model.samples
        )));
    }
    Ok(LabelMap::new(shape.0, shape.1, model.hard_labels()).expect("shape checked"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> FeatureMatrix {
        FeatureMatrix::from_rows(&[vec![0.0], vec![0.0], vec![0.0], vec![10.0], vec![10.0], vec![10.0]]).unwrap()
    }

    fn random_matrix(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        FeatureMatrix::new(d, data, (n, 1)).unwrap()
    }

    fn cfg(seed: u64) -> FcmConfig {
        FcmConfig {
            clusters: 2,
            seed,
            ..FcmConfig::default()
        }
    }

    #[test]
    fn constant_image_features_are_zero() {
        let f = extract_features(&GrayImage::filled(4, 3, 77.0), FeatureMode::Intensity);
        assert!(f.data.iter().all(|&v| v == 0.0));
        let f = extract_features(&GrayImage::filled(4, 3, 77.0), FeatureMode::IntensityLocalStats);
        assert_eq!(f.d(), 3);
        assert!(f.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_pixel_standardization() {
        let f = extract_features(&GrayImage::new(2, 1, vec![0.0, 255.0]).unwrap(), FeatureMode::Intensity);
        assert_eq!(f.row(0), &[-1.0]);
        assert_eq!(f.row(1), &[1.0]);
    }

    #[test]
    fn row_index_maps_to_pixel() {
        let img = GrayImage::from_fn(5, 3, |x, y| (10 * y + x) as f64);
        let f = extract_features(&img, FeatureMode::Intensity);
        for k in 0..f.n() {
            let (x, y) = f.pixel_of(k);
            assert_eq!((x, y), (k % 5, k / 5));
        }
        // Ordering preserved through standardization.
        assert!(f.row(7)[0] < f.row(8)[0]);
    }

    #[test]
    fn local_stats_features_follow_hand_values() {
        let img = GrayImage::new(3, 1, vec![0.0, 3.0, 6.0]).unwrap();
        let f = extract_features(&img, FeatureMode::IntensityLocalStats);
        assert_eq!(f.d(), 3);
        // Raw 3x3 means with clamping: (0*6+3*3)/9=1, 3, 5 -> symmetric.
        assert!((f.row(0)[1] + f.row(2)[1]).abs() < 1e-12);
        assert!(f.row(1)[1].abs() < 1e-12);
    }

    #[test]
    fn fcm_recovers_two_blobs() {
        let model = fcm_fit(&blobs(), &cfg(1)).unwrap();
        let mut c = [model.center(0)[0], model.center(1)[0]];
        c.sort_by(f64::total_cmp);
        assert!(c[0].abs() < 1e-3 && (c[1] - 10.0).abs() < 1e-3, "{c:?}");
        let l = model.hard_labels();
        assert!(l[0] == l[1] && l[1] == l[2] && l[3] == l[4] && l[4] == l[5] && l[0] != l[3]);
    }

    #[test]
    fn kfcm_matches_fcm_partition_on_blobs() {
        let kernel = KernelSpec::gaussian(5.0).unwrap();
        for seed in 0..5 {
            let a = fcm_fit(&blobs(), &cfg(seed)).unwrap().hard_labels();
            let b = kfcm_fit(&blobs(), &cfg(seed), &kernel).unwrap().hard_labels();
            let same = a == b || a.iter().zip(&b).all(|(p, q)| p != q);
            assert!(same, "seed {seed}: {a:?} vs {b:?}");
        }
    }

    #[test]
    fn coincident_sample_takes_full_membership() {
        let x = FeatureMatrix::from_rows(&[vec![0.0], vec![0.0], vec![4.0]]).unwrap();
        let mut u = vec![0.0; 6];
        let centers = [4.0, 1.0];
        update_membership(&x, &centers, 2, 2.0, Metric::Euclidean, &mut u);
        assert_eq!((u[2], u[3 + 2]), (1.0, 0.0));
        let k = KernelSpec::gaussian(1.0).unwrap();
        update_membership(&x, &[0.0, 4.0], 2, 2.0, Metric::Kernel(&k), &mut u);
        assert_eq!((u[0], u[3]), (1.0, 0.0));
        assert_eq!((u[2], u[3 + 2]), (0.0, 1.0));
    }

    #[test]
    fn fit_invariants_on_random_data() {
        let kernel = KernelSpec::default();
        for seed in 0..20 {
            let x = random_matrix(60, 2, seed);
            let c = FcmConfig {
                clusters: 3,
                seed,
                epsilon: 1e-6,
                ..FcmConfig::default()
            };
            for model in [fcm_fit(&x, &c).unwrap(), kfcm_fit(&x, &c, &kernel).unwrap()] {
                for w in model.objective_history.windows(2) {
                    assert!(w[1] <= w[0] + 1e-9, "seed {seed}: {w:?}");
                }
                for k in 0..model.samples {
                    let s: f64 = (0..3).map(|i| model.u(i, k)).sum();
                    assert!((s - 1.0).abs() < 1e-9);
                    assert!((0..3).all(|i| (0.0..=1.0).contains(&model.u(i, k))));
                }
            }
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let x = random_matrix(50, 3, 9);
        let c = FcmConfig {
            seed: 4,
            ..FcmConfig::default()
        };
        assert_eq!(fcm_fit(&x, &c).unwrap(), fcm_fit(&x, &c).unwrap());
        let k = KernelSpec::default();
        assert_eq!(kfcm_fit(&x, &c, &k).unwrap(), kfcm_fit(&x, &c, &k).unwrap());
    }

    #[test]
    fn permuted_initialization_permutes_clusters() {
        let x = random_matrix(40, 2, 11);
        let c = FcmConfig {
            clusters: 3,
            ..FcmConfig::default()
        };
        let n = x.n();
        let u0 = initial_membership(n, 3, 5);
        let perm = [2usize, 0, 1];
        let mut permuted = vec![0.0; 3 * n];
        for (new, &old) in perm.iter().enumerate() {
            permuted[new * n..(new + 1) * n].copy_from_slice(&u0[old * n..(old + 1) * n]);
        }
        let a = fcm_fit_from(&x, &c, u0, |_| {}).unwrap();
        let b = fcm_fit_from(&x, &c, permuted, |_| {}).unwrap();
        assert_eq!(a.iterations_used, b.iterations_used);
        let (la, lb) = (a.hard_labels(), b.hard_labels());
        for k in 0..n {
            assert_eq!(perm[lb[k] as usize], la[k] as usize);
        }
    }

    #[test]
    fn wide_kernel_approaches_classic_partition() {
        let wide = KernelSpec::gaussian(1e3).unwrap();
        let a = fcm_fit(&blobs(), &cfg(3)).unwrap().hard_labels();
        let b = kfcm_fit(&blobs(), &cfg(3), &wide).unwrap().hard_labels();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_samples() {
        let x = FeatureMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let c = FcmConfig {
            clusters: 3,
            ..FcmConfig::default()
        };
        assert!(matches!(fcm_fit(&x, &c), Err(ClusterError::TooFewSamples { .. })));
        assert!(matches!(
            kfcm_fit(&x, &c, &KernelSpec::default()),
            Err(ClusterError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let x = blobs();
        for bad in [
            FcmConfig {
                clusters: 1,
                ..FcmConfig::default()
            },
            FcmConfig {
                fuzzifier: 1.0,
                ..FcmConfig::default()
            },
            FcmConfig {
                epsilon: 0.0,
                ..FcmConfig::default()
            },
            FcmConfig {
                max_iter: 0,
                ..FcmConfig::default()
            },
        ] {
            assert!(matches!(fcm_fit(&x, &bad), Err(ClusterError::InvalidConfig(_))));
        }
        assert!(KernelSpec::gaussian(0.0).is_err());
    }

    #[test]
    fn label_tie_breaks_low() {
        let model = ClusterModel {
            centers: vec![0.0, 1.0],
            membership: vec![0.7, 0.5, 0.2, 0.3, 0.5, 0.8],
            clusters: 2,
            samples: 3,
            dim: 1,
            iterations_used: 1,
            objective_history: vec![0.0],
            trace: vec![],
            converged: true,
        };
        let labels = labels_from_membership(&model, (3, 1)).unwrap();
        assert_eq!(labels.labels(), &[0, 0, 1]);
        assert!(labels_from_membership(&model, (2, 2)).is_err());
    }

    #[test]
    fn trace_csv_has_one_row_per_iteration() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let model = fcm_fit(&blobs(), &cfg(2)).unwrap();
        model.write_trace_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), model.iterations_used + 1);
        assert!(text.starts_with("iter,J,max_delta_u\n"));
    }
}
