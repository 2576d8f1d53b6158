use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vesselgraph"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, count: usize, seed: u64) {
    ok(&["synth", "--count", &count.to_string(), "--size", "64", "--seed", &seed.to_string(), "--out", s(dir)]);
}

const TINY: [&str; 10] = [
    "--epochs",
    "2",
    "--patches-per-epoch",
    "48",
    "--batch-size",
    "16",
    "--widths",
    "4,8,8",
    "--patch-size",
    "16",
];

fn read_manifest_json(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("run_manifest.json")).unwrap()).unwrap()
}

#[test]
fn synth_writes_pairs_and_manifest_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, 3, 11);
    synth(&b, 3, 11);
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
    for name in ["synth_000.png", "synth_002_label.png", "manifest.txt"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let m = read_manifest_json(&a);
    assert_eq!(m["command"], "synth");
    assert_eq!(m["seed"], 11);
}

#[test]
fn synth_zero_count_warns_and_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--count", "0", "--out", s(tmp.path())]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert_eq!(fs::read_to_string(tmp.path().join("manifest.txt")).unwrap(), "");
}

#[test]
fn gradcheck_passes_is_repeatable_and_detects_corruption() {
    let first = ok(&["gradcheck", "--seed", "3"]);
    assert!(first.contains("all suites passed"), "{first}");
    assert_eq!(first.lines().count(), 4);
    assert_eq!(ok(&["gradcheck", "--seed", "3"]), first);

    let corrupt = run(&["gradcheck", "--seed", "3", "--corrupt"]);
    assert!(!corrupt.status.success());
    assert!(String::from_utf8_lossy(&corrupt.stdout).contains("FAILED"));
}

#[test]
fn train_eval_overlay_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 3, 1);
    let manifest = data.join("manifest.txt");

    // Flags beat the file, the file beats defaults.
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "epochs = 5\nlambda = 1e-5\nsample_m = 8\n").unwrap();
    let run_dir = tmp.path().join("run");
    let mut args = vec!["train", "--manifest", s(&manifest), "--out", s(&run_dir), "--config", s(&cfg)];
    args.extend(TINY);
    ok(&args);

    let log = fs::read_to_string(run_dir.join("epoch_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,mean_bce,mean_s,total_objective,val_auc");
    assert_eq!(lines.len(), 3, "epochs flag overrides the file");
    assert!(run_dir.join("final.vgsn").exists());
    let m = read_manifest_json(&run_dir);
    assert_eq!(m["command"], "train");
    assert_eq!(m["config"]["lambda"], "0.00001");
    assert_eq!(m["config"]["sample_m"], "8");
    assert_eq!(m["config"]["epochs"], "2");

    let eval_dir = tmp.path().join("eval");
    let ckpt = run_dir.join("final.vgsn");
    ok(&[
        "eval",
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&ckpt),
        "--patch-size",
        "16",
        "--save-maps",
        "--out",
        s(&eval_dir),
    ]);
    let report = fs::read_to_string(eval_dir.join("report.csv")).unwrap();
    assert_eq!(report.lines().next().unwrap(), "image,se,sp,acc,auc,threshold,pixels");
    assert_eq!(report.lines().count(), 5);
    assert!(eval_dir.join("maps/synth_000_overlay.png").exists());

    let ov_dir = tmp.path().join("overlays");
    ok(&[
        "overlay",
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&ckpt),
        "--patch-size",
        "16",
        "--out",
        s(&ov_dir),
    ]);
    assert!(ov_dir.join("synth_002_overlay.png").exists());
    assert!(ov_dir.join("run_manifest.json").exists());
}

#[test]
fn untrained_model_scores_chance_auc() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2, 5);
    let out = tmp.path().join("eval");
    ok(&["eval", "--manifest", s(&data.join("manifest.txt")), "--out", s(&out)]);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    let pooled = report.lines().last().unwrap();
    let auc: f64 = pooled.split(',').nth(4).unwrap().parse().unwrap();
    assert!((auc - 0.5).abs() <= 0.05, "{pooled}");
}

#[test]
fn overlay_of_perfect_prediction_is_green_and_black() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 1, 9);
    let label = data.join("synth_000_label.png");
    let out = tmp.path().join("ov");
    ok(&["overlay", "--prob-map", s(&label), "--label", s(&label), "--out", s(&out)]);
    let img = image::open(out.join("synth_000_label_overlay.png")).unwrap().to_rgb8();
    let colors: std::collections::BTreeSet<[u8; 3]> = img.pixels().map(|p| p.0).collect();
    assert_eq!(colors, [[0, 0, 0], [0, 255, 0]].into_iter().collect());
}

#[test]
fn sweep_writes_one_row_per_lambda() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2, 2);
    let manifest = data.join("manifest.txt");
    let out = tmp.path().join("sweep");
    let mut args = vec![
        "sweep",
        "--manifest",
        s(&manifest),
        "--test-manifest",
        s(&manifest),
        "--lambdas",
        "1e-5,0",
        "--out",
        s(&out),
    ];
    args.extend(TINY);
    ok(&args);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "lambda,se,sp,acc,auc");
    assert!(lines[1].starts_with("0e0,"));
    assert!(lines[2].starts_with("1e-5,"));
}

#[test]
fn errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["train", "--manifest", s(&tmp.path().join("missing.txt")), "--out", s(tmp.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let out = run(&["eval", "--manifest", "x", "--out", s(tmp.path()), "--reduction", "median"]);
    assert!(!out.status.success());
}
