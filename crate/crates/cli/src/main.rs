use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fabricvision::clustering::KernelSpec;
use fabricvision::evaluation::LabelMap;
use fabricvision::fabric_metrics::{
    bagging_residual_model, fit_bagging_model, ne_to_tex, otsu_threshold, porosity, read_blends_csv, read_curves_csv,
    simplex_lattice, tightness_factor,
};
use fabricvision::image::{load_image, save_image, NoiseSpec};
use fabricvision::pipeline::{
    emit_report, round_sig6, run_roughness, run_segmentation, synthetic_bands, write_criteria_csv, PipelineConfig,
    PipelineError, PipelineResult, RoughnessOptions, Variant,
};
use fabricvision::roughness::{
    estimate_periods, linear_regress, read_regression_csv, IdealSurfaceSpec, VolumeMode, DEFAULT_RELIEF, KT_DIVISOR,
};
use fabricvision::wavelet::{decompose, dump_subbands, FilterBank};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "fabricvision", version, about = "Knitted-fabric image analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment a fabric image into texture classes.
    Segment(SegmentArgs),
    /// Score scans against an ideal loop lattice.
    Roughness(RoughnessArgs),
    /// Fraction of void (dark) pixels.
    Porosity(PorosityArgs),
    /// Scalar fabric formulas and fits.
    Metrics {
        #[command(subcommand)]
        which: MetricsCommand,
    },
    /// Residual bagging height from dome profiles.
    BaggingCurve(CurveArgs),
    /// Write a synthetic banded test image and its class map.
    Fixture(FixtureArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Hybrid,
    Fcm1,
    Fcm2,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Hybrid => Variant::Hybrid,
            VariantArg::Fcm1 => Variant::Fcm1,
            VariantArg::Fcm2 => Variant::Fcm2,
        }
    }
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// JSON pipeline configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Ground-truth class image (distinct gray levels).
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    /// Kernel bandwidth on standardized features.
    #[arg(long)]
    sigma: Option<f64>,
    /// Report path (default: <output-dir>/report.json).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write the wavelet subbands of the smoothed image.
    #[arg(long)]
    dump: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum VolumeArg {
    Total,
    AboveMean,
}

#[derive(Args)]
struct RoughnessArgs {
    /// Scan images; repeat for a batch.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Fabric thickness in mm (gray 255).
    #[arg(long, default_value_t = 1.0)]
    thickness: f64,
    /// Ideal wale period in pixels (default: estimated from the first scan).
    #[arg(long)]
    wale_period: Option<f64>,
    /// Ideal course period in pixels (default: estimated from the first scan).
    #[arg(long)]
    course_period: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_RELIEF)]
    relief: f64,
    /// Wiener then Gaussian denoising before scoring.
    #[arg(long)]
    prefilter: bool,
    #[arg(long, value_enum, default_value = "total")]
    volume: VolumeArg,
    #[arg(long, default_value_t = KT_DIVISOR)]
    divisor: f64,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-image criteria as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct PorosityArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 128.0, conflicts_with = "otsu")]
    threshold: f64,
    /// Pick the threshold by Otsu's method.
    #[arg(long)]
    otsu: bool,
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// sqrt(tex) * needles / stitch length.
    Tightness {
        #[arg(long, conflicts_with = "ne", required_unless_present = "ne")]
        tex: Option<f64>,
        #[arg(long)]
        ne: Option<f64>,
        #[arg(long)]
        needles: u32,
        #[arg(long)]
        stitch_length: f64,
    },
    /// Printed residual bagging model.
    Bagging {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        tf: f64,
    },
    /// Simplex-lattice mixture design points.
    Simplex {
        #[arg(long)]
        q: usize,
        #[arg(long)]
        m: usize,
    },
    /// Refit the bagging model to a blends CSV.
    Fit {
        #[arg(long)]
        input: PathBuf,
    },
    /// Regress Kt on SMD from a pairs CSV.
    SmdRegress {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = 10.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Band edges snap to multiples of this many rows.
    #[arg(long, default_value_t = 4)]
    align: usize,
}

fn open(path: &Path) -> PipelineResult<File> {
    File::open(path).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> PipelineResult<()> {
    std::fs::write(path, bytes).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> PipelineResult<()> {
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value serializes"));
}

fn segment_config(args: &SegmentArgs) -> PipelineResult<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
            PipelineConfig::from_json(&text)?
        }
        None => PipelineConfig::preset(args.variant.map_or(Variant::Hybrid, Variant::from)),
    };
    if let Some(v) = args.variant {
        let v = Variant::from(v);
        if v != cfg.variant {
            let preset = PipelineConfig::preset(v);
            cfg.variant = v;
            cfg.levels = preset.levels;
            if cfg.kernel.is_none() {
                cfg.kernel = preset.kernel;
            }
        }
    }
    if let Some(seed) = args.seed {
        cfg.fcm.seed = seed;
    }
    if let Some(c) = args.clusters {
        cfg.fcm.clusters = c;
    }
    if let Some(l) = args.levels {
        cfg.levels = l;
    }
    if let Some(s) = args.sigma {
        cfg.kernel = Some(KernelSpec::gaussian(s).map_err(|e| PipelineError::Config(e.to_string()))?);
    }
    if let Some(t) = &args.truth {
        cfg.truth = Some(t.clone());
    }
    if let Some(d) = &args.output_dir {
        cfg.output_dir = Some(d.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn segment(args: SegmentArgs) -> PipelineResult<()> {
    let cfg = segment_config(&args)?;
    let img = load_image(&args.input)?;
    let truth = match &cfg.truth {
        Some(path) => Some(LabelMap::from_gray_levels(&load_image(path)?)),
        None => None,
    };
    let (labels, report) = run_segmentation(&cfg, &img, truth.as_ref())?;

    let out_dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&out_dir)?;
    save_image(&labels.to_gray(cfg.fcm.clusters), out_dir.join("labels.pgm"))?;
    let report_path = args.report.clone().unwrap_or_else(|| out_dir.join("report.json"));
    emit_report(&report, &report_path)?;

    if args.dump && cfg.levels > 0 {
        let smooth = fabricvision::filtering::bilateral_filter(&img, &cfg.bilateral)?;
        let pyr = decompose(&smooth, cfg.levels, &FilterBank::haar())?;
        let dir = out_dir.join("subbands");
        ensure_dir(&dir)?;
        dump_subbands(&pyr, &dir)?;
    }

    let mut summary = format!(
        "{}: {} iterations{}",
        report.variant.as_str(),
        report.iterations_used,
        if report.converged { "" } else { " (not converged)" }
    );
    if let (Some(kc), Some(car)) = (report.kc_percent, report.car_percent) {
        summary.push_str(&format!(", KC {:.2}%, CAR {:.2}%", kc, car));
    }
    println!("{summary}");
    Ok(())
}

fn roughness(args: RoughnessArgs) -> PipelineResult<()> {
    let images = args
        .input
        .iter()
        .map(|p| Ok((p.display().to_string(), load_image(p)?)))
        .collect::<PipelineResult<Vec<_>>>()?;
    let (wale_period, course_period) = match (args.wale_period, args.course_period) {
        (Some(w), Some(c)) => (w, c),
        (w, c) => {
            let (ew, ec) = estimate_periods(&images[0].1).ok_or_else(|| {
                PipelineError::Input("no loop periodicity found; pass --wale-period and --course-period".into())
            })?;
            (w.unwrap_or(ew), c.unwrap_or(ec))
        }
    };
    let ideal = IdealSurfaceSpec {
        thickness: args.thickness,
        wale_period,
        course_period,
        relief: args.relief,
    };
    let opts = RoughnessOptions {
        prefilter: args.prefilter,
        volume: match args.volume {
            VolumeArg::Total => VolumeMode::Total,
            VolumeArg::AboveMean => VolumeMode::AboveMean,
        },
        divisor: args.divisor,
        ..RoughnessOptions::default()
    };
    let report = run_roughness(&images, &ideal, args.thickness, &opts)?;
    if let Some(path) = &args.report {
        emit_report(&report, path)?;
    }
    if let Some(path) = &args.csv {
        let f = File::create(path).map_err(|source| PipelineError::Io {
            path: path.clone(),
            source,
        })?;
        write_criteria_csv(&report, f)?;
    }
    for row in &report.rows {
        println!("{}: Kt {}", row.name, round_sig6(row.criteria.kt));
    }
    println!("mean Kt {}", round_sig6(report.mean_kt));
    Ok(())
}

fn porosity_cmd(args: PorosityArgs) -> PipelineResult<()> {
    let img = load_image(&args.input)?;
    let threshold = if args.otsu {
        otsu_threshold(&img)
    } else {
        args.threshold
    };
    let value = porosity(&img, threshold)?;
    print_json(&json!({ "threshold": threshold, "porosity": round_sig6(value) }));
    Ok(())
}

fn metrics(which: MetricsCommand) -> PipelineResult<()> {
    let out = match which {
        MetricsCommand::Tightness {
            tex,
            ne,
            needles,
            stitch_length,
        } => {
            let tex = match (tex, ne) {
                (Some(t), _) => t,
                (None, Some(n)) => ne_to_tex(n)?,
                (None, None) => return Err(PipelineError::Config("give --tex or --ne".into())),
            };
            json!({ "tex": round_sig6(tex), "tightness_factor": round_sig6(tightness_factor(tex, needles, stitch_length)?) })
        }
        MetricsCommand::Bagging { p, tf } => {
            json!({ "residual_bagging_pct": round_sig6(bagging_residual_model(p, tf)?) })
        }
        MetricsCommand::Simplex { q, m } => json!({ "points": simplex_lattice(q, m)? }),
        MetricsCommand::Fit { input } => {
            let rows: Vec<_> = read_blends_csv(open(&input)?)?.into_iter().map(|r| r.1).collect();
            let fit = fit_bagging_model(&rows)?;
            json!({
                "coefficients": fit.coefficients.iter().map(|c| round_sig6(*c)).collect::<Vec<_>>(),
                "r": round_sig6(fit.r),
                "rows": rows.len(),
            })
        }
        MetricsCommand::SmdRegress { input } => {
            let rows = read_regression_csv(open(&input)?)?;
            let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.1, r.2)).collect();
            let fit = linear_regress(&pairs)?;
            json!({
                "slope": round_sig6(fit.slope),
                "intercept": round_sig6(fit.intercept),
                "r": round_sig6(fit.r),
                "rows": rows.len(),
            })
        }
    };
    print_json(&out);
    Ok(())
}

fn bagging_curve(args: CurveArgs) -> PipelineResult<()> {
    let curves = read_curves_csv(open(&args.input)?)?;
    let pct = curves.residual_height()?;
    print_json(&json!({ "samples": curves.position_mm.len(), "residual_height_pct": round_sig6(pct) }));
    Ok(())
}

fn fixture(args: FixtureArgs) -> PipelineResult<()> {
    let noise = if args.noise > 0.0 {
        Some(NoiseSpec::new(args.noise, args.seed)?)
    } else {
        None
    };
    let (img, truth) = synthetic_bands(
        args.width,
        args.height,
        &[60.0, 128.0, 200.0],
        args.align,
        noise.as_ref(),
    )?;
    ensure_dir(&args.output_dir)?;
    save_image(&img, args.output_dir.join("bands.pgm"))?;
    save_image(&truth.to_gray(3), args.output_dir.join("truth.pgm"))?;
    write_file(
        &args.output_dir.join("fixture.json"),
        serde_json::to_string_pretty(&json!({
            "width": args.width,
            "height": args.height,
            "levels": [60.0, 128.0, 200.0],
            "noise_sigma": args.noise,
            "seed": args.seed,
            "align": args.align,
        }))
        .expect("json value serializes"),
    )?;
    println!("wrote {}", args.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Segment(a) => segment(a),
        Command::Roughness(a) => roughness(a),
        Command::Porosity(a) => porosity_cmd(a),
        Command::Metrics { which } => metrics(which),
        Command::BaggingCurve(a) => bagging_curve(a),
        Command::Fixture(a) => fixture(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
