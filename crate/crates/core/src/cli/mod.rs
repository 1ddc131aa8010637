//! Command-line front end: `run` executes one configured experiment and
//! writes its artifacts, `compare` runs two configs side by side, `accept`
//! executes the acceptance suite, `export-slices` sweeps a trained trunk,
//! and `grad-check` runs the finite-difference oracle suite.

pub mod config;

use crate::acceptance::{self, AcceptOpts};
use crate::error::{Error, Result};
use crate::gradcheck::{self, GradCheckOpts};
use crate::mat::Mat;
use crate::tasks::diagnostics;
use crate::tasks::fit::{self, metrics_csv, FitOutcome, RunRecord};
use crate::tasks::{gather_rows, Task};
use clap::{Args, Parser, Subcommand};
use config::Config;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "inrlab", version, about = "Coordinate-network laboratory")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file and write its artifacts.
    Run(RunArgs),
    /// Run two configs (same task and seed) and print metric deltas.
    Compare(CompareArgs),
    /// Execute the acceptance suite, one verdict line per criterion.
    Accept(AcceptArgs),
    /// Sweep a model's trunk over its 2D input plane and export rasters.
    ExportSlices(ExportSlicesArgs),
    /// Check analytic gradients against finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces the output directory from the config file.
    #[arg(long)]
    out: Option<String>,
    /// Dotted-path config override, e.g. --override optim.lr=0.01.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct CompareArgs {
    config_a: PathBuf,
    config_b: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Redirects artifacts to OUT/a and OUT/b.
    #[arg(long)]
    out: Option<String>,
    /// Applied to both configs.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct AcceptArgs {
    /// Scratch directory for the suite's training runs.
    #[arg(long, default_value = "out/accept")]
    out: String,
    /// Applied to every config the suite builds (negative controls).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Test hook: corrupt analytic gradients so criterion 1 must fail.
    #[arg(long)]
    corrupt_gradients: bool,
    /// Comma-separated criterion ids to run (default: all).
    #[arg(long, value_delimiter = ',')]
    only: Vec<usize>,
}

#[derive(Args)]
struct ExportSlicesArgs {
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint to load; defaults to the freshly initialized model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Slice output directory (default: <output_dir>/slices).
    #[arg(long)]
    out: Option<String>,
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct GradCheckArgs {
    /// Test hook: corrupt analytic gradients; the check must then fail.
    #[arg(long)]
    corrupt: bool,
}

/// Parses argv and dispatches; returns the process exit code for verdict
/// failures (errors propagate as Err).
pub fn main_entry() -> Result<i32> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let overrides = collect_overrides(&args.overrides, args.seed, args.out.as_deref())?;
            let cfg = config::load(&args.config, &overrides)?;
            let arts = execute_run(&cfg)?;
            print_run_summary(&arts);
            Ok(0)
        }
        Command::Compare(args) => cmd_compare(args),
        Command::Accept(args) => cmd_accept(args),
        Command::ExportSlices(args) => cmd_export_slices(args),
        Command::GradCheck(args) => cmd_grad_check(args),
    }
}

fn collect_overrides(
    raw: &[String],
    seed: Option<u64>,
    out: Option<&str>,
) -> Result<Vec<(String, String)>> {
    let mut overrides = Vec::new();
    if let Some(s) = seed {
        overrides.push(("seed".to_string(), s.to_string()));
    }
    if let Some(o) = out {
        overrides.push(("output_dir".to_string(), o.to_string()));
    }
    for item in raw {
        let (key, value) = item.split_once('=').ok_or_else(|| {
            Error::Usage(format!("override '{item}' must look like key=value"))
        })?;
        overrides.push((key.to_string(), value.to_string()));
    }
    Ok(overrides)
}

/// A finished run: its record plus where the artifacts went.
pub struct RunArtifacts {
    pub record: RunRecord,
    pub out_dir: PathBuf,
}

/// Builds task, model and optimizer from a resolved config, trains, and
/// writes config.snapshot, metrics.csv, summary.json, checkpoint, recon.png
/// (image tasks) and slices/ (if configured) into the output directory.
/// A non-finite abort still writes the partial artifacts, then errors.
pub fn execute_run(cfg: &Config) -> Result<RunArtifacts> {
    let task = cfg.build_task()?;
    let kind = cfg.model_kind()?;
    let mcfg = cfg.model_config(&task)?;
    let mut model = fit::seeded_model(kind, task.d_in(), task.d_out(), &mcfg, cfg.seed)?;
    let params = cfg.fit_params();
    let outcome = fit::fit(&task, &mut model, &params)?;

    let out_dir = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("config.snapshot"), config::snapshot(cfg))?;
    let record = outcome.record();
    fs::write(out_dir.join("metrics.csv"), metrics_csv(&record.rows))?;
    let mut summary = serde_json::to_string_pretty(record)
        .map_err(|e| Error::Config(format!("summary serialization: {e}")))?;
    summary.push('\n');
    fs::write(out_dir.join("summary.json"), summary)?;
    model.save_checkpoint(&out_dir.join("checkpoint"))?;
    if let Task::Image(img) = &task {
        let rgb = img.render(&model)?;
        let png = image::RgbImage::from_raw(img.width as u32, img.height as u32, rgb)
            .expect("render buffer matches image size");
        png.save(out_dir.join("recon.png"))
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    if let Some((spec, samples)) = cfg.slice_spec(model.trunk_in_width())? {
        let (train, heldout) = split_coords(&task, cfg.seed)?;
        diagnostics::export_slices(
            &model,
            &train,
            &heldout,
            samples,
            Some(&spec),
            &out_dir.join("slices"),
        )?;
    }
    match outcome {
        FitOutcome::Completed(record) => Ok(RunArtifacts { record, out_dir }),
        FitOutcome::Aborted { reason, .. } => Err(Error::NonFinite(format!(
            "training aborted: {reason} (partial artifacts in {})",
            out_dir.display()
        ))),
    }
}

/// Training and held-out coordinates for slice overlays; the SDF task
/// contributes its first sampled batch and has no held-out set.
fn split_coords(task: &Task, seed: u64) -> Result<(Mat, Mat)> {
    match task {
        Task::Stripe(t) => Ok((
            gather_rows(&t.coords, &t.train_idx),
            gather_rows(&t.coords, &t.heldout_idx),
        )),
        Task::Image(t) => Ok((
            gather_rows(&t.coords, &t.train_idx),
            gather_rows(&t.coords, &t.heldout_idx),
        )),
        Task::Sdf(t) => Ok((t.sample_batch(seed, 0)?.coords, Mat::zeros(0, 3))),
    }
}

fn print_run_summary(arts: &RunArtifacts) {
    let r = &arts.record;
    let mut line = format!(
        "run complete: {} iterations, final loss {}",
        r.iters_completed,
        r.final_loss.map(|l| l.to_string()).unwrap_or_else(|| "-".into())
    );
    if let Some(m) = &r.final_metrics {
        if let Some(v) = m.train_psnr {
            line.push_str(&format!(", train psnr {v:.3}"));
        }
        if let Some(v) = m.heldout_psnr {
            line.push_str(&format!(", heldout psnr {v:.3}"));
        }
        if let Some(v) = m.iou {
            line.push_str(&format!(", iou {v:.4}"));
        }
    }
    line.push_str(&format!(
        ", wall {:.2}s, artifacts in {}",
        r.wall_time_s,
        arts.out_dir.display()
    ));
    println!("{line}");
}

fn cmd_compare(args: CompareArgs) -> Result<i32> {
    let overrides = collect_overrides(&args.overrides, args.seed, None)?;
    let mut cfg_a = config::load(&args.config_a, &overrides)?;
    let mut cfg_b = config::load(&args.config_b, &overrides)?;
    if let Some(out) = &args.out {
        cfg_a.output_dir = format!("{out}/a");
        cfg_b.output_dir = format!("{out}/b");
    }
    if cfg_a.task != cfg_b.task {
        return Err(Error::Config(
            "compare requires identical [task] sections in both configs".into(),
        ));
    }
    if cfg_a.seed != cfg_b.seed {
        return Err(Error::Config(format!(
            "compare requires a shared seed, got {} and {}",
            cfg_a.seed, cfg_b.seed
        )));
    }
    let arts_a = execute_run(&cfg_a)?;
    let arts_b = execute_run(&cfg_b)?;
    print_comparison(&cfg_a, &cfg_b, &arts_a.record, &arts_b.record);
    Ok(0)
}

fn print_comparison(cfg_a: &Config, cfg_b: &Config, a: &RunRecord, b: &RunRecord) {
    let label_a = format!("a ({})", cfg_a.model.kind);
    let label_b = format!("b ({})", cfg_b.model.kind);
    println!("metric,{label_a},{label_b},delta (b-a)");
    let ma = a.final_metrics.unwrap_or_default();
    let mb = b.final_metrics.unwrap_or_default();
    let emit = |name: &str, va: Option<f64>, vb: Option<f64>| {
        if let (Some(x), Some(y)) = (va, vb) {
            println!("{name},{x},{y},{}", y - x);
        }
    };
    emit("final_loss", a.final_loss, b.final_loss);
    emit("train_mse", ma.train_mse, mb.train_mse);
    emit("train_psnr", ma.train_psnr, mb.train_psnr);
    emit("heldout_mse", ma.heldout_mse, mb.heldout_mse);
    emit("heldout_psnr", ma.heldout_psnr, mb.heldout_psnr);
    emit("iou", ma.iou, mb.iou);
    if let (Some(x), Some(y)) = (ma.heldout_mse, mb.heldout_mse) {
        if x > 0.0 {
            println!("heldout_mse_ratio (b/a),,,{}", y / x);
        }
    }
}

fn cmd_accept(args: AcceptArgs) -> Result<i32> {
    let overrides = collect_overrides(&args.overrides, None, None)?;
    let opts = AcceptOpts {
        scratch_dir: PathBuf::from(&args.out),
        overrides,
        corrupt_gradients: args.corrupt_gradients,
    };
    let ids: Vec<usize> = if args.only.is_empty() {
        (1..=9).collect()
    } else {
        args.only.clone()
    };
    let outcomes = acceptance::run_criteria(&ids, &opts)?;
    let mut all_pass = true;
    for o in &outcomes {
        println!("{}", o.line());
        all_pass &= o.pass;
    }
    println!(
        "acceptance: {}/{} criteria passed",
        outcomes.iter().filter(|o| o.pass).count(),
        outcomes.len()
    );
    Ok(if all_pass { 0 } else { 1 })
}

fn cmd_export_slices(args: ExportSlicesArgs) -> Result<i32> {
    let overrides = collect_overrides(&args.overrides, args.seed, None)?;
    let cfg = config::load(&args.config, &overrides)?;
    let task = cfg.build_task()?;
    let kind = cfg.model_kind()?;
    let mcfg = cfg.model_config(&task)?;
    let mut model = fit::seeded_model(kind, task.d_in(), task.d_out(), &mcfg, cfg.seed)?;
    if let Some(cp) = &args.checkpoint {
        model.load_checkpoint(cp)?;
    }
    let (spec, samples) = match cfg.slice_spec(model.trunk_in_width())? {
        Some((spec, samples)) => (Some(spec), samples),
        None => (None, 128),
    };
    let dir = args
        .out
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(&cfg.output_dir).join("slices"));
    let (train, heldout) = split_coords(&task, cfg.seed)?;
    diagnostics::export_slices(&model, &train, &heldout, samples, spec.as_ref(), &dir)?;
    println!("wrote slices to {}", dir.display());
    Ok(0)
}

fn cmd_grad_check(args: GradCheckArgs) -> Result<i32> {
    let reports = gradcheck::run_all(GradCheckOpts { corrupt: args.corrupt });
    let mut all_pass = true;
    let mut configs = 0;
    for r in &reports {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{}: {} configs, {} checks, max rel err {:.3e} ... {verdict}",
            r.name, r.configs, r.checks, r.max_rel
        );
        for f in &r.failures {
            println!("  {f}");
        }
        all_pass &= r.passed();
        configs += r.configs;
    }
    println!(
        "grad-check: {} suites, {configs} configurations ... {}",
        reports.len(),
        if all_pass { "ok" } else { "FAIL" }
    );
    Ok(if all_pass { 0 } else { 1 })
}
