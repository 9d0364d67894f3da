use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fabricvision::image::{save_image, GrayImage};
use fabricvision::roughness::{render_ideal, IdealSurfaceSpec};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fabricvision"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn core_data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/data")
        .join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(dir: &Path, seed: &str) {
    let out = run(&[
        "fixture",
        "--output-dir",
        s(dir),
        "--seed",
        seed,
        "--width",
        "64",
        "--height",
        "64",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn without_runtime(path: &Path) -> Value {
    let mut v: Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("runtime_seconds");
    v
}

#[test]
fn segment_twice_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "5");
    let out_dir = dir.path().join("out");
    let (input, truth) = (dir.path().join("bands.pgm"), dir.path().join("truth.pgm"));
    let args = [
        "segment",
        "--input",
        s(&input),
        "--truth",
        s(&truth),
        "--output-dir",
        s(&out_dir),
        "--seed",
        "11",
    ];
    let first = run(&args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let labels_a = std::fs::read(out_dir.join("labels.pgm")).unwrap();
    let report_a = std::fs::read(out_dir.join("report.json")).unwrap();
    assert!(run(&args).status.success());
    let labels_b = std::fs::read(out_dir.join("labels.pgm")).unwrap();
    let report_b = std::fs::read(out_dir.join("report.json")).unwrap();
    assert_eq!(labels_a, labels_b);

    // Byte-identical apart from the runtime line.
    let strip = |bytes: &[u8]| -> String {
        String::from_utf8(bytes.to_vec())
            .unwrap()
            .lines()
            .filter(|l| !l.contains("runtime_seconds"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&report_a), strip(&report_b));

    let report = without_runtime(&out_dir.join("report.json"));
    assert_eq!(report["schema"], "fabricvision/1");
    assert_eq!(report["variant"], "hybrid");
    assert!(report["car_percent"].as_f64().unwrap() >= 95.0);
    assert!(String::from_utf8_lossy(&first.stdout).contains("CAR"));
}

#[test]
fn segment_variants_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "1");
    let input = dir.path().join("bands.pgm");
    let report = dir.path().join("fcm2.json");
    let out = run(&[
        "segment",
        "--input",
        s(&input),
        "--variant",
        "fcm2",
        "--output-dir",
        s(dir.path()),
        "--report",
        s(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = without_runtime(&report);
    assert_eq!(v["variant"], "fcm2");
    assert!(v.get("kc_percent").is_none());
    let stages: Vec<&str> = v["stages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_str().unwrap())
        .collect();
    assert!(!stages.iter().any(|s| s.starts_with("wavelet")));

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"variant": "fcm1", "levels": 1, "fcm": {"clusters": 2, "fuzzifier": 2.0, "epsilon": 0.01, "max_iter": 50, "seed": 3}}"#).unwrap();
    let out = run(&[
        "segment",
        "--input",
        s(&input),
        "--config",
        s(&cfg),
        "--clusters",
        "3",
        "--output-dir",
        s(dir.path()),
        "--dump",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = without_runtime(&dir.path().join("report.json"));
    assert_eq!(v["config"]["fcm"]["clusters"], 3);
    assert_eq!(v["config"]["fcm"]["max_iter"], 50);
    assert_eq!(v["config"]["levels"], 1);
    assert!(dir.path().join("subbands/level1_hh.pgm").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "2");
    let input = dir.path().join("bands.pgm");

    let missing = run(&[
        "segment",
        "--input",
        s(&dir.path().join("nope.pgm")),
        "--output-dir",
        s(dir.path()),
    ]);
    assert_eq!(missing.status.code(), Some(3));

    let bad_levels = run(&["segment", "--input", s(&input), "--variant", "fcm2", "--levels", "2"]);
    assert_eq!(bad_levels.status.code(), Some(2));

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"variant": "mrf"}"#).unwrap();
    assert_eq!(
        run(&["segment", "--input", s(&input), "--config", s(&cfg)])
            .status
            .code(),
        Some(2)
    );

    assert_eq!(run(&["segment"]).status.code(), Some(2));
    assert_eq!(
        run(&["metrics", "bagging", "--p", "1.5", "--tf", "1"]).status.code(),
        Some(2)
    );

    let black = dir.path().join("black.pgm");
    save_image(&GrayImage::filled(32, 32, 0.0), &black).unwrap();
    let out = run(&[
        "roughness",
        "--input",
        s(&black),
        "--wale-period",
        "8",
        "--course-period",
        "8",
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn metrics_commands() {
    let v = stdout_json(&run(&[
        "metrics",
        "tightness",
        "--tex",
        "25",
        "--needles",
        "4",
        "--stitch-length",
        "2",
    ]));
    assert_eq!(v["tightness_factor"], 10.0);
    let v = stdout_json(&run(&[
        "metrics",
        "tightness",
        "--ne",
        "30",
        "--needles",
        "4",
        "--stitch-length",
        "0.8",
    ]));
    assert!((v["tightness_factor"].as_f64().unwrap() - 22.18).abs() < 5e-3);

    let v = stdout_json(&run(&["metrics", "bagging", "--p", "0.5", "--tf", "1"]));
    assert_eq!(v["residual_bagging_pct"], 76.35);

    let v = stdout_json(&run(&["metrics", "simplex", "--q", "2", "--m", "4"]));
    assert_eq!(v["points"].as_array().unwrap().len(), 5);
    assert_eq!(v["points"][1], serde_json::json!([0.25, 0.75]));

    let v = stdout_json(&run(&["metrics", "fit", "--input", s(&core_data("blends.csv"))]));
    assert_eq!(v["rows"], 15);
    assert!(v["r"].as_f64().unwrap() >= 0.95);

    let v = stdout_json(&run(&[
        "metrics",
        "smd-regress",
        "--input",
        s(&core_data("smd_kt.csv")),
    ]));
    let r = v["r"].as_f64().unwrap();
    assert!(r < -0.88 && r > -0.97, "{r}");
}

#[test]
fn bagging_curve_and_porosity() {
    let dir = tempfile::tempdir().unwrap();
    let curves = dir.path().join("curves.csv");
    std::fs::write(
        &curves,
        "position_mm,baseline_mm,loaded_mm,residual_mm\n-1,0,0.5,0.2\n0,0.1,2.1,1.6\n1,0,1.6,1.0\n",
    )
    .unwrap();
    let v = stdout_json(&run(&["bagging-curve", "--input", s(&curves)]));
    assert_eq!(v["residual_height_pct"], 75.0);

    let img = dir.path().join("checker.pgm");
    save_image(
        &GrayImage::from_fn(8, 8, |x, y| if (x + y) % 2 == 0 { 0.0 } else { 255.0 }),
        &img,
    )
    .unwrap();
    let v = stdout_json(&run(&["porosity", "--input", s(&img)]));
    assert_eq!(v["porosity"], 0.5);
    let v = stdout_json(&run(&["porosity", "--input", s(&img), "--otsu"]));
    assert_eq!(v["porosity"], 0.5);
}

#[test]
fn roughness_batch() {
    let dir = tempfile::tempdir().unwrap();
    let ideal = IdealSurfaceSpec::new(1.0, 8.0, 8.0).unwrap();
    let img = dir.path().join("ideal.pgm");
    save_image(&render_ideal(&ideal, 64, 64).unwrap(), &img).unwrap();
    let report = dir.path().join("rough.json");
    let csv = dir.path().join("rough.csv");
    let out = run(&[
        "roughness",
        "--input",
        s(&img),
        s(&img),
        "--wale-period",
        "8",
        "--course-period",
        "8",
        "--report",
        s(&report),
        "--csv",
        s(&csv),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    // The saved scan is quantized to 8 bits, so it is close to but not
    // exactly the ideal rendering.
    assert!(v["mean_kt"].as_f64().unwrap().abs() < 1e-3);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("name,n,v,s,a,g,K1,K2,K3,K4,K5,Kt"));
    assert_eq!(text.lines().count(), 3);

    // Periods estimated from the scan itself.
    let out = run(&["roughness", "--input", s(&img)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean Kt"));
}
