//! End-to-end tests of the command-line interface: artifact contracts,
//! determinism, snapshot round-trips, comparison output, negative-control
//! hooks, and error reporting with stable exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_inrlab"))
}

fn scratch(tag: &str) -> PathBuf {
    static COUNTER: AtomicUsize = AtomicUsize::new(0);
    let dir = std::env::temp_dir().join(format!(
        "inrlab_cli_{tag}_{}_{}",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "expected success for {args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr not JSON ({e}): {text}"))
}

const STRIPE_SMALL: &str = "seed = 3\noutput_dir = \"PLACEHOLDER\"\n\
    [task]\nkind = \"stripe\"\nsize = 32\n\
    [model]\nkind = \"diner\"\n\
    [optim]\niters = 40\neval_interval = 10\n";

const IMAGE_CONSTANT: &str = "seed = 5\noutput_dir = \"PLACEHOLDER\"\n\
    [task]\nkind = \"image\"\nsize = 8\ncontent = \"constant\"\n\
    [model]\nkind = \"ngp\"\n\
    [optim]\niters = 500\neval_interval = 0\n";

#[test]
fn run_writes_the_artifact_set_and_exact_metric_rows() {
    let dir = scratch("artifacts");
    let cfg = write_config(&dir, "stripe.toml", STRIPE_SMALL);
    let out_dir = dir.join("run");
    run_ok(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);

    for name in ["config.snapshot", "metrics.csv", "summary.json", "checkpoint"] {
        assert!(out_dir.join(name).exists(), "missing artifact {name}");
    }
    assert!(!out_dir.join("recon.png").exists(), "stripe runs render no image");

    let csv = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 41, "header plus one row per iteration");
    assert!(lines[0].starts_with("iter,"));

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["iters_completed"], 40);
    assert!(summary["final_metrics"]["heldout_mse"].as_f64().unwrap() > 0.0);
}

#[test]
fn image_runs_render_a_png_and_cap_constant_fits_at_100_db() {
    let dir = scratch("image");
    let cfg = write_config(&dir, "img.toml", IMAGE_CONSTANT);
    let out_dir = dir.join("run");
    run_ok(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);

    assert!(out_dir.join("recon.png").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["final_metrics"]["train_psnr"].as_f64().unwrap(), 100.0);
}

#[test]
fn deleting_the_output_dir_and_rerunning_reproduces_identical_artifacts() {
    let dir = scratch("rerun");
    let cfg = write_config(&dir, "stripe.toml", STRIPE_SMALL);
    let out_dir = dir.join("run");
    let args = ["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()];

    run_ok(&args);
    let first: Vec<Vec<u8>> = ["config.snapshot", "metrics.csv", "summary.json", "checkpoint"]
        .iter()
        .map(|n| fs::read(out_dir.join(n)).unwrap())
        .collect();

    fs::remove_dir_all(&out_dir).unwrap();
    run_ok(&args);
    for (i, name) in ["config.snapshot", "metrics.csv", "summary.json", "checkpoint"]
        .iter()
        .enumerate()
    {
        let again = fs::read(out_dir.join(name)).unwrap();
        assert_eq!(first[i], again, "{name} changed across reruns");
    }
}

#[test]
fn the_emitted_snapshot_reproduces_the_run_exactly() {
    let dir = scratch("snapshot");
    let cfg = write_config(&dir, "stripe.toml", STRIPE_SMALL);
    let out_a = dir.join("a");
    run_ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
        "--override",
        "optim.lr=0.002",
    ]);

    let out_b = dir.join("b");
    run_ok(&[
        "run",
        "--config",
        out_a.join("config.snapshot").to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
    ]);

    for name in ["metrics.csv", "checkpoint"] {
        assert_eq!(
            fs::read(out_a.join(name)).unwrap(),
            fs::read(out_b.join(name)).unwrap(),
            "{name} differs between original and snapshot-driven run"
        );
    }
    // The summaries agree except for the embedded snapshot's output_dir,
    // which --out rewrites by design.
    let summary = |d: &Path| -> serde_json::Value {
        let mut v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(d.join("summary.json")).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("config_snapshot");
        v
    };
    assert_eq!(summary(&out_a), summary(&out_b));
}

#[test]
fn seed_and_override_flags_reach_the_run() {
    let dir = scratch("flags");
    let cfg = write_config(&dir, "stripe.toml", STRIPE_SMALL);
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    run_ok(&["run", "--config", cfg.to_str().unwrap(), "--out", out_a.to_str().unwrap()]);
    run_ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert_ne!(
        fs::read(out_a.join("checkpoint")).unwrap(),
        fs::read(out_b.join("checkpoint")).unwrap(),
        "different seeds must train different weights"
    );

    let out_c = dir.join("c");
    run_ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_c.to_str().unwrap(),
        "--override",
        "optim.iters=3",
    ]);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_c.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["iters_completed"], 3);
}

#[test]
fn compare_on_identical_configs_reports_all_zero_deltas() {
    let dir = scratch("cmp_zero");
    let cfg = write_config(&dir, "stripe.toml", STRIPE_SMALL);
    let out = run_ok(&[
        "compare",
        cfg.to_str().unwrap(),
        cfg.to_str().unwrap(),
        "--out",
        dir.join("cmp").to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let mut metric_rows = 0;
    for line in stdout.lines().skip_while(|l| !l.starts_with("metric,")).skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() == 4 && !fields[3].is_empty() {
            let delta: f64 = fields[3].parse().unwrap();
            if fields[0] == "heldout_mse_ratio (b/a)" {
                assert_eq!(delta, 1.0, "identical runs must have ratio 1: {line}");
            } else {
                assert_eq!(delta, 0.0, "identical runs must have zero delta: {line}");
            }
            metric_rows += 1;
        }
    }
    assert!(metric_rows >= 4, "expected several metric rows, got {metric_rows}:\n{stdout}");
}

#[test]
fn compare_stripe_backbone_vs_rhino_reports_heldout_mse_and_ratio() {
    let dir = scratch("cmp_pair");
    let a = write_config(&dir, "a.toml", STRIPE_SMALL);
    let b = write_config(&dir, "b.toml", &STRIPE_SMALL.replace("\"diner\"", "\"rhino_diner\""));
    let out = run_ok(&[
        "compare",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out",
        dir.join("cmp").to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("a (diner)") && stdout.contains("b (rhino_diner)"));
    assert!(stdout.lines().any(|l| l.starts_with("heldout_mse,")));
    assert!(stdout.lines().any(|l| l.starts_with("heldout_mse_ratio (b/a),")));
}

#[test]
fn compare_image_train_psnr_favors_the_key_table_over_the_fourier_mlp() {
    let dir = scratch("cmp_order");
    let base = "seed = 5\noutput_dir = \"PLACEHOLDER\"\n\
        [task]\nkind = \"image\"\nsize = 64\n\
        [model]\nkind = \"KIND\"\nfeature_width = 4\n\
        [optim]\niters = 600\neval_interval = 0\n";
    let a = write_config(&dir, "a.toml", &base.replace("KIND", "pe_mlp"));
    let b = write_config(&dir, "b.toml", &base.replace("KIND", "diner"));
    let out = run_ok(&[
        "compare",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out",
        dir.join("cmp").to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let psnr_row = stdout
        .lines()
        .find(|l| l.starts_with("train_psnr,"))
        .unwrap_or_else(|| panic!("no train_psnr row in:\n{stdout}"));
    let delta: f64 = psnr_row.split(',').nth(3).unwrap().parse().unwrap();
    assert!(delta > 0.0, "diner must out-fit pe_mlp on train pixels: {psnr_row}");
}

#[test]
fn compare_rejects_mismatched_tasks_and_seeds() {
    let dir = scratch("cmp_reject");
    let a = write_config(&dir, "a.toml", STRIPE_SMALL);
    let other_seed = write_config(&dir, "seed.toml", &STRIPE_SMALL.replace("seed = 3", "seed = 4"));
    let out = bin().args(["compare", a.to_str().unwrap(), other_seed.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["kind"], "config");

    let other_task =
        write_config(&dir, "task.toml", &STRIPE_SMALL.replace("size = 32", "size = 64"));
    let out = bin().args(["compare", a.to_str().unwrap(), other_task.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["kind"], "config");
}

#[test]
fn export_slices_writes_raster_and_points_files() {
    let dir = scratch("slices");
    let cfg = write_config(&dir, "stripe.toml", STRIPE_SMALL);
    let out_dir = dir.join("run");
    run_ok(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);

    let slice_dir = dir.join("slices");
    run_ok(&[
        "export-slices",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        out_dir.join("checkpoint").to_str().unwrap(),
        "--out",
        slice_dir.to_str().unwrap(),
    ]);
    for name in ["raster.csv", "raster.png", "points.csv"] {
        assert!(slice_dir.join(name).exists(), "missing slice artifact {name}");
    }
}

#[test]
fn export_slices_requires_a_spec_for_wide_trunks() {
    let dir = scratch("slices_wide");
    // rhino_diner trunk takes feature_width + d_in inputs: wider than 2.
    let cfg = write_config(
        &dir,
        "wide.toml",
        &STRIPE_SMALL.replace("\"diner\"", "\"rhino_diner\""),
    );
    let out = bin()
        .args(["export-slices", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["kind"], "config");
}

#[test]
fn run_with_slice_section_writes_slices_beside_the_artifacts() {
    let dir = scratch("run_slices");
    let cfg = write_config(
        &dir,
        "sliced.toml",
        &format!("{STRIPE_SMALL}[slice]\ndim_x = 0\ndim_y = 1\nsamples = 16\n"),
    );
    let out_dir = dir.join("run");
    run_ok(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out_dir.join("slices/raster.png").exists());
}

#[test]
fn grad_check_passes_and_the_corrupt_hook_fails_it() {
    let out = run_ok(&["grad-check"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("... ok"));

    let out = bin().args(["grad-check", "--corrupt"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn accept_corrupt_gradients_hook_fails_criterion_1() {
    let dir = scratch("accept_corrupt");
    let out = bin()
        .args(["accept", "--only", "1", "--corrupt-gradients", "--out", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("criterion 1") && stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn accept_disabling_the_transform_by_override_collapses_criterion_3() {
    let dir = scratch("accept_disabled");
    let out = bin()
        .args([
            "accept",
            "--only",
            "3",
            "--override",
            "model.transform=disabled",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("criterion 3") && stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn missing_config_file_is_an_io_error_with_json_stderr() {
    let out = bin().args(["run", "--config", "/nonexistent/nowhere.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    let err = stderr_json(&out);
    assert_eq!(err["kind"], "io");
    assert!(err["error"].as_str().unwrap().contains("error"));
}

#[test]
fn unknown_model_kind_is_a_config_error() {
    let dir = scratch("bad_kind");
    let cfg = write_config(&dir, "bad.toml", &STRIPE_SMALL.replace("\"diner\"", "\"resnet\""));
    let out = bin().args(["run", "--config", cfg.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["kind"], "config");
    assert!(err["error"].as_str().unwrap().contains("resnet"));
}

#[test]
fn malformed_override_is_a_usage_error() {
    let dir = scratch("bad_override");
    let cfg = write_config(&dir, "stripe.toml", STRIPE_SMALL);
    let out = bin()
        .args(["run", "--config", cfg.to_str().unwrap(), "--override", "no_equals_sign"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["kind"], "usage");
}
