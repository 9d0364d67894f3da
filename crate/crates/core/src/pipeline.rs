//! End-to-end jobs: texture segmentation and batch roughness scoring,
//! plus JSON/CSV report emission.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clustering::{
    extract_features, fcm_fit, kfcm_fit, labels_from_membership, ClusterError, FcmConfig, FeatureMode, KernelSpec,
};
use crate::evaluation::{align_labels, car, confusion, kappa, EvalError, LabelMap};
use crate::fabric_metrics::MetricsError;
use crate::filtering::{
    bilateral_filter, gaussian_filter, wiener_filter, BilateralParams, FilterError, GaussianParams, WienerParams,
};
use crate::image::{add_gaussian_noise, GrayImage, ImageError, NoiseSpec};
use crate::roughness::{
    image_to_profile, render_ideal, roughness_index, surface_stats, IdealSurfaceSpec, RoughnessCriteria,
    RoughnessError, VolumeMode, KT_DIVISOR,
};
use crate::wavelet::{approximation, decompose, FilterBank, WaveletError};

pub const SCHEMA: &str = "fabricvision/1";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit status: 2 config, 3 input/output, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Input(_) | PipelineError::Io { .. } => 3,
            PipelineError::Numerical(_) => 4,
        }
    }
}

pub type PipelineResult<T> = Result<T, PipelineError>;

impl From<ImageError> for PipelineError {
    fn from(e: ImageError) -> Self {
        PipelineError::Input(e.to_string())
    }
}

impl From<FilterError> for PipelineError {
    fn from(e: FilterError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

impl From<WaveletError> for PipelineError {
    fn from(e: WaveletError) -> Self {
        match e {
            WaveletError::Image(inner) => inner.into(),
            WaveletError::InvalidLevels(_) | WaveletError::InvalidFilterBank(_) => PipelineError::Config(e.to_string()),
            WaveletError::Structure(_) => PipelineError::Numerical(e.to_string()),
        }
    }
}

impl From<ClusterError> for PipelineError {
    fn from(e: ClusterError) -> Self {
        match e {
            ClusterError::InvalidConfig(_) => PipelineError::Config(e.to_string()),
            ClusterError::TooFewSamples { .. } | ClusterError::Io(_) => PipelineError::Input(e.to_string()),
            ClusterError::Features(_) | ClusterError::Membership(_) => PipelineError::Numerical(e.to_string()),
        }
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::TooManyClasses(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Input(e.to_string()),
        }
    }
}

impl From<RoughnessError> for PipelineError {
    fn from(e: RoughnessError) -> Self {
        match e {
            RoughnessError::InvalidArgument(_) => PipelineError::Config(e.to_string()),
            RoughnessError::Csv(_) => PipelineError::Input(e.to_string()),
            _ => PipelineError::Numerical(e.to_string()),
        }
    }
}

impl From<MetricsError> for PipelineError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::InvalidArgument(_) => PipelineError::Config(e.to_string()),
            MetricsError::DegenerateFit(_) => PipelineError::Numerical(e.to_string()),
            MetricsError::Csv(_) => PipelineError::Input(e.to_string()),
        }
    }
}

impl From<csv::Error> for PipelineError {
    fn from(e: csv::Error) -> Self {
        PipelineError::Input(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Bilateral, wavelet approximation, kernel FCM.
    #[default]
    Hybrid,
    /// Bilateral, wavelet approximation, classic FCM.
    Fcm1,
    /// Gaussian smoothing, classic FCM at full resolution.
    Fcm2,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Hybrid => "hybrid",
            Variant::Fcm1 => "fcm1",
            Variant::Fcm2 => "fcm2",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hybrid" => Ok(Variant::Hybrid),
            "fcm1" => Ok(Variant::Fcm1),
            "fcm2" => Ok(Variant::Fcm2),
            other => Err(PipelineError::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub bilateral: BilateralParams,
    pub gaussian: GaussianParams,
    pub levels: usize,
    pub features: FeatureMode,
    pub fcm: FcmConfig,
    pub kernel: Option<KernelSpec>,
    pub truth: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::preset(Variant::Hybrid)
    }
}

impl PipelineConfig {
    pub fn preset(variant: Variant) -> Self {
        Self {
            variant,
            bilateral: BilateralParams::default(),
            gaussian: GaussianParams::default(),
            levels: if variant == Variant::Fcm2 { 0 } else { 2 },
            features: FeatureMode::Intensity,
            fcm: FcmConfig::default(),
            kernel: (variant == Variant::Hybrid).then(KernelSpec::default),
            truth: None,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> PipelineResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> PipelineResult<()> {
        match self.variant {
            Variant::Fcm2 if self.levels > 0 => {
                return Err(PipelineError::Config(format!(
                    "variant fcm2 works at full resolution; levels must be 0, got {}",
                    self.levels
                )))
            }
            Variant::Hybrid | Variant::Fcm1 if self.levels == 0 => {
                return Err(PipelineError::Config(format!(
                    "variant {} needs at least one wavelet level",
                    self.variant.as_str()
                )))
            }
            Variant::Hybrid if self.kernel.is_none() => {
                return Err(PipelineError::Config("variant hybrid needs a kernel".into()))
            }
            _ => {}
        }
        if self.levels > 16 {
            return Err(PipelineError::Config(format!(
                "levels must be <= 16, got {}",
                self.levels
            )));
        }
        match self.variant {
            Variant::Fcm2 => self.gaussian.validate()?,
            _ => self.bilateral.validate()?,
        }
        self.fcm.validate()?;
        if let Some(k) = &self.kernel {
            k.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub schema: String,
    pub variant: Variant,
    pub width: usize,
    pub height: usize,
    pub iterations_used: usize,
    pub converged: bool,
    pub runtime_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kc_percent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub car_percent: Option<f64>,
    pub objective_final: f64,
    /// Cluster index to truth class, when truth was supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_permutation: Option<Vec<usize>>,
    pub stages: Vec<String>,
    pub config: PipelineConfig,
}

/// Runs one segmentation job and returns the full-resolution label map.
///
/// With `truth`, clusters are renumbered to best match it before the
/// kappa and accuracy scores are taken.
pub fn run_segmentation(
    cfg: &PipelineConfig,
    img: &GrayImage,
    truth: Option<&LabelMap>,
) -> PipelineResult<(LabelMap, SegmentationReport)> {
    cfg.validate()?;
    let (w, h) = (img.width(), img.height());
    let factor = 1usize << cfg.levels;
    if w < factor || h < factor {
        return Err(PipelineError::Input(format!(
            "{w}x{h} image is smaller than 2^{} in some axis",
            cfg.levels
        )));
    }
    if let Some(t) = truth {
        if t.dims() != (w, h) {
            return Err(EvalError::DimensionMismatch((w, h), t.dims()).into());
        }
    }

    let mut stages = Vec::new();
    let work = match cfg.variant {
        Variant::Hybrid | Variant::Fcm1 => {
            let smooth = bilateral_filter(img, &cfg.bilateral)?;
            stages.push("bilateral".to_string());
            let pyr = decompose(&smooth, cfg.levels, &FilterBank::haar())?;
            stages.push(format!("wavelet:{}", cfg.levels));
            stages.push("approximation".to_string());
            approximation(&pyr)
        }
        Variant::Fcm2 => {
            let smooth = gaussian_filter(img, &cfg.gaussian)?;
            stages.push("gaussian".to_string());
            smooth
        }
    };

    let x = extract_features(&work, cfg.features);
    stages.push("features".to_string());

    let started = Instant::now();
    let model = match cfg.variant {
        Variant::Hybrid => {
            let kernel = cfg.kernel.as_ref().expect("validated");
            kfcm_fit(&x, &cfg.fcm, kernel)?
        }
        Variant::Fcm1 | Variant::Fcm2 => fcm_fit(&x, &cfg.fcm)?,
    };
    let runtime_seconds = started.elapsed().as_secs_f64();
    stages.push(if cfg.variant == Variant::Hybrid { "kfcm" } else { "fcm" }.to_string());
    if !model.final_objective().is_finite() {
        return Err(PipelineError::Numerical("objective diverged".into()));
    }

    let coarse = labels_from_membership(&model, x.shape())?;
    stages.push("labels".to_string());
    let mut labels = if factor > 1 {
        stages.push(format!("upsample:{factor}"));
        coarse.upsample(factor, w, h)
    } else {
        coarse
    };
    debug_assert_eq!(labels.dims(), (w, h));

    let (mut kc_percent, mut car_percent, mut label_permutation) = (None, None, None);
    if let Some(t) = truth {
        let (aligned, perm) = align_labels(&labels, t)?;
        let classes = aligned.class_count().max(t.class_count()).max(cfg.fcm.clusters);
        let cm = confusion(&aligned, t, classes)?;
        kc_percent = Some(kappa(&cm)?);
        car_percent = Some(car(&cm)?);
        label_permutation = Some(perm);
        labels = aligned;
        stages.push("score".to_string());
    }

    let report = SegmentationReport {
        schema: SCHEMA.to_string(),
        variant: cfg.variant,
        width: w,
        height: h,
        iterations_used: model.iterations_used,
        converged: model.converged,
        runtime_seconds,
        kc_percent,
        car_percent,
        objective_final: model.final_objective(),
        label_permutation,
        stages,
        config: cfg.clone(),
    };
    Ok((labels, report))
}

/// Horizontal bands of constant gray with their class raster.
///
/// Band `i` starts at row `i h / c` rounded to the nearest multiple of
/// `align` (use `2^levels` to keep edges on wavelet block boundaries).
/// Optional seeded noise is added without clamping.
pub fn synthetic_bands(
    width: usize,
    height: usize,
    levels: &[f64],
    align: usize,
    noise: Option<&NoiseSpec>,
) -> PipelineResult<(GrayImage, LabelMap)> {
    let c = levels.len();
    let align = align.max(1);
    let starts: Vec<usize> = (0..=c)
        .map(|i| {
            let raw = (i * height) as f64 / c as f64;
            ((raw / align as f64).round() as usize * align).min(height)
        })
        .collect();
    if c == 0 || width == 0 || starts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PipelineError::Config(format!(
            "cannot lay {c} bands aligned to {align} over a {width}x{height} raster"
        )));
    }
    let class_of = |y: usize| starts[1..].iter().position(|&s| y < s).unwrap_or(c - 1);
    let clean = GrayImage::from_fn(width, height, |_, y| levels[class_of(y)]);
    let labels = (0..height)
        .flat_map(|y| std::iter::repeat_n(class_of(y) as u32, width))
        .collect();
    let truth = LabelMap::new(width, height, labels)?;
    let img = match noise {
        Some(spec) => add_gaussian_noise(&clean, spec),
        None => clean,
    };
    Ok((img, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoughnessOptions {
    /// Wiener then Gaussian denoising of each scan before scoring.
    pub prefilter: bool,
    pub wiener: WienerParams,
    pub gaussian: GaussianParams,
    pub volume: VolumeMode,
    pub divisor: f64,
}

impl Default for RoughnessOptions {
    fn default() -> Self {
        Self {
            prefilter: false,
            wiener: WienerParams::default(),
            gaussian: GaussianParams::default(),
            volume: VolumeMode::Total,
            divisor: KT_DIVISOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoughnessRow {
    pub name: String,
    pub criteria: RoughnessCriteria,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoughnessReport {
    pub schema: String,
    pub ideal: IdealSurfaceSpec,
    pub thickness: f64,
    pub options: RoughnessOptions,
    pub rows: Vec<RoughnessRow>,
    pub mean_kt: f64,
}

/// Scores every image against the ideal surface rendered at its size.
///
/// Images are processed in parallel; rows keep input order and the mean
/// is summed in that order.
pub fn run_roughness(
    images: &[(String, GrayImage)],
    ideal: &IdealSurfaceSpec,
    thickness: f64,
    opts: &RoughnessOptions,
) -> PipelineResult<RoughnessReport> {
    if images.is_empty() {
        return Err(PipelineError::Input("roughness batch is empty".into()));
    }
    ideal.validate()?;
    if opts.prefilter {
        opts.wiener.validate()?;
        opts.gaussian.validate()?;
    }
    let rows: Vec<PipelineResult<RoughnessRow>> = images
        .par_iter()
        .map(|(name, img)| {
            let scan = if opts.prefilter {
                gaussian_filter(&wiener_filter(img, &opts.wiener)?, &opts.gaussian)?
            } else {
                img.clone()
            };
            let rendered = render_ideal(ideal, img.width(), img.height())?;
            let ideal_stats = surface_stats(&image_to_profile(&rendered, ideal.thickness)?, &rendered, opts.volume)?;
            let real_stats = surface_stats(&image_to_profile(&scan, thickness)?, &scan, opts.volume)?;
            let criteria = roughness_index(&real_stats, &ideal_stats, opts.divisor)?;
            Ok(RoughnessRow {
                name: name.clone(),
                criteria,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<PipelineResult<Vec<_>>>()?;
    let mean_kt = rows.iter().map(|r| r.criteria.kt).sum::<f64>() / rows.len() as f64;
    Ok(RoughnessReport {
        schema: SCHEMA.to_string(),
        ideal: *ideal,
        thickness,
        options: *opts,
        rows,
        mean_kt,
    })
}

/// Seeded noisy copies of a rendered ideal surface, for batch checks.
pub fn perturbed_ideals(
    ideal: &IdealSurfaceSpec,
    width: usize,
    height: usize,
    sigma: f64,
    seeds: impl IntoIterator<Item = u64>,
) -> PipelineResult<Vec<(String, GrayImage)>> {
    let base = render_ideal(ideal, width, height)?;
    seeds
        .into_iter()
        .map(|seed| {
            let spec = NoiseSpec::new(sigma, seed)?;
            Ok((format!("seed{seed}"), add_gaussian_noise(&base, &spec)))
        })
        .collect()
}

/// A document that can be written by [`emit_report`].
pub trait Report: Serialize {
    fn check(&self) -> PipelineResult<()> {
        Ok(())
    }
}

impl Report for SegmentationReport {}

impl Report for RoughnessReport {
    fn check(&self) -> PipelineResult<()> {
        if self.rows.is_empty() {
            return Err(PipelineError::Input(
                "refusing to emit an empty roughness report".into(),
            ));
        }
        Ok(())
    }
}

/// Rounds to six significant digits.
pub fn round_sig6(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.5e}").parse().expect("formatted float parses")
}

fn round_numbers(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .and_then(|f| serde_json::Number::from_f64(round_sig6(f)))
            .map(Value::Number)
            .unwrap_or(Value::Null),
        Value::Array(items) => Value::Array(items.into_iter().map(round_numbers).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, round_numbers(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with sorted keys and floats cut to six significant digits.
pub fn report_json<R: Report>(report: &R) -> PipelineResult<String> {
    report.check()?;
    let value = serde_json::to_value(report).map_err(|e| PipelineError::Numerical(e.to_string()))?;
    let mut text =
        serde_json::to_string_pretty(&round_numbers(value)).map_err(|e| PipelineError::Numerical(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn emit_report<R: Report>(report: &R, path: impl AsRef<Path>) -> PipelineResult<()> {
    let text = report_json(report)?;
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub const CRITERIA_HEADER: [&str; 12] = ["name", "n", "v", "s", "a", "g", "K1", "K2", "K3", "K4", "K5", "Kt"];

/// One CSV line per image with the real-surface criteria and indices.
pub fn write_criteria_csv<W: std::io::Write>(report: &RoughnessReport, out: W) -> PipelineResult<()> {
    report.check()?;
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(CRITERIA_HEADER)?;
    for row in &report.rows {
        let c = &row.criteria;
        let mut rec = vec![row.name.clone()];
        rec.extend(
            [c.real.n, c.real.v, c.real.s, c.real.a, c.real.g]
                .iter()
                .chain(c.k.iter())
                .chain(std::iter::once(&c.kt))
                .map(|v| round_sig6(*v).to_string()),
        );
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| PipelineError::Input(e.to_string()))?;
    Ok(())
}
