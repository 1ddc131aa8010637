//! The acceptance suite: nine criteria covering gradient correctness, the
//! lookup-encoder gradient asymmetry, interpolation and expressiveness
//! orderings across model kinds, SDF quality, metric exactness, and
//! determinism. Each criterion reports one line with its measured value,
//! threshold and verdict; failures are verdicts, not errors.
//!
//! Training results are cached per resolved config within the process, so
//! criteria that share fits (4, 5, 9) pay for each fit once.

use crate::cli::config::{self, Config};
use crate::error::{Error, Result};
use crate::gradcheck::{self, GradCheckOpts};
use crate::diffcore::Parameter;
use crate::mat::Mat;
use crate::models::ModelKind;
use crate::optim::{Adam, AdamConfig};
use crate::tasks::fit::{self, EvalMetrics, FitOutcome};
use crate::tasks::metrics;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::{LazyLock, Mutex};
use std::time::Instant;

#[derive(Clone, Debug)]
pub struct AcceptOpts {
    /// Where criterion 8's artifact runs are written.
    pub scratch_dir: PathBuf,
    /// Dotted-path overrides threaded into every config the suite builds.
    pub overrides: Vec<(String, String)>,
    /// Negative-control hook: corrupt analytic gradients in criterion 1.
    pub corrupt_gradients: bool,
}

impl Default for AcceptOpts {
    fn default() -> AcceptOpts {
        AcceptOpts {
            scratch_dir: std::env::temp_dir().join("inrlab_accept"),
            overrides: Vec::new(),
            corrupt_gradients: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CriterionOutcome {
    pub id: usize,
    pub name: &'static str,
    pub measured: String,
    pub threshold: String,
    pub pass: bool,
    pub seconds: f64,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {} ({}): measured {} | threshold {} | {} [{:.1}s]",
            self.id,
            self.name,
            self.measured,
            self.threshold,
            if self.pass { "PASS" } else { "FAIL" },
            self.seconds
        )
    }
}

pub fn run_criteria(ids: &[usize], opts: &AcceptOpts) -> Result<Vec<CriterionOutcome>> {
    ids.iter().map(|&id| run_criterion(id, opts)).collect()
}

pub fn run_criterion(id: usize, opts: &AcceptOpts) -> Result<CriterionOutcome> {
    let started = Instant::now();
    let (name, measured, threshold, pass) = match id {
        1 => criterion_gradients(opts)?,
        2 => criterion_broken_chain(opts)?,
        3 => criterion_stripe_interpolation(opts)?,
        4 => criterion_expressive_power(opts)?,
        5 => criterion_regularization_gap(opts)?,
        6 => criterion_sdf_iou(opts)?,
        7 => criterion_metric_exactness(opts)?,
        8 => criterion_determinism(opts)?,
        9 => criterion_negative_control(opts)?,
        other => {
            return Err(Error::Usage(format!(
                "unknown acceptance criterion {other} (valid ids: 1..=9)"
            )))
        }
    };
    Ok(CriterionOutcome {
        id,
        name,
        measured,
        threshold,
        pass,
        seconds: started.elapsed().as_secs_f64(),
    })
}

type CriterionResult = Result<(&'static str, String, String, bool)>;

// ---------------------------------------------------------------- fits --

/// Final metrics per resolved config, shared across criteria in-process.
static FIT_CACHE: LazyLock<Mutex<HashMap<String, EvalMetrics>>> =
    LazyLock::new(|| Mutex::new(HashMap::new()));

fn cached_fit(cfg: &Config) -> Result<EvalMetrics> {
    let key = config::snapshot(cfg);
    if let Some(m) = FIT_CACHE.lock().unwrap().get(&key) {
        return Ok(*m);
    }
    let task = cfg.build_task()?;
    let mcfg = cfg.model_config(&task)?;
    let mut model =
        fit::seeded_model(cfg.model_kind()?, task.d_in(), task.d_out(), &mcfg, cfg.seed)?;
    let m = match fit::fit(&task, &mut model, &cfg.fit_params())? {
        FitOutcome::Completed(rec) => rec
            .final_metrics
            .ok_or_else(|| Error::Usage("fit completed without a final evaluation".into()))?,
        FitOutcome::Aborted { reason, .. } => {
            return Err(Error::NonFinite(format!("acceptance fit aborted: {reason}")))
        }
    };
    FIT_CACHE.lock().unwrap().insert(key, m);
    Ok(m)
}

fn stripe_config(opts: &AcceptOpts, model: &str, seed: u64) -> Result<Config> {
    let text = format!(
        "seed = {seed}\noutput_dir = \"unused\"\n\
         [task]\nkind = \"stripe\"\n\
         [model]\nkind = \"{model}\"\n\
         [optim]\niters = 3000\neval_interval = 0\n"
    );
    config::parse(&text, &opts.overrides)
}

/// Image-criterion protocol. All kinds share the task, iteration budget and
/// cosine decay; table models widen their keys to F=4 and take a faster
/// table step (the F=2 default underfits this image), and each rhino kind
/// carries the transform band found to regularize its own backbone.
fn image_config(opts: &AcceptOpts, model: &str, seed: u64, transform: &str) -> Result<Config> {
    let model_extra = match model {
        "diner" => "feature_width = 4\n",
        "rhino_diner" => "feature_width = 4\ntransform_num_freqs = 1\n",
        "rhino_ngp" => "transform_num_freqs = 3\n",
        _ => "",
    };
    let optim_extra = match model {
        "diner" | "rhino_diner" => "table_lr = 3e-2\n",
        _ => "",
    };
    let text = format!(
        "seed = {seed}\noutput_dir = \"unused\"\n\
         [task]\nkind = \"image\"\n\
         [model]\nkind = \"{model}\"\ntransform = \"{transform}\"\n{model_extra}\
         [optim]\niters = 3000\neval_interval = 0\ncosine_decay = true\n{optim_extra}"
    );
    config::parse(&text, &opts.overrides)
}

/// The sphere is smooth everywhere, so the transform keeps its lowest band.
fn sdf_config(opts: &AcceptOpts, seed: u64) -> Result<Config> {
    let text = format!(
        "seed = {seed}\noutput_dir = \"unused\"\n\
         [task]\nkind = \"sdf\"\n\
         [model]\nkind = \"rhino_ngp\"\ntransform_num_freqs = 1\n\
         [optim]\niters = 2000\neval_interval = 0\n"
    );
    config::parse(&text, &opts.overrides)
}

const STRIPE_SEEDS: [u64; 3] = [11, 12, 13];
const IMAGE_SEEDS: [u64; 3] = [21, 22, 23];

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean metric over the three image seeds; `pick` selects the field.
fn image_mean(
    opts: &AcceptOpts,
    model: &str,
    transform: &str,
    pick: fn(&EvalMetrics) -> Option<f64>,
) -> Result<f64> {
    let mut vals = Vec::new();
    for seed in IMAGE_SEEDS {
        let m = cached_fit(&image_config(opts, model, seed, transform)?)?;
        vals.push(pick(&m).ok_or_else(|| Error::Usage("image fit missing metric".into()))?);
    }
    Ok(mean(&vals))
}

// ----------------------------------------------------------- criteria --

/// 1: analytic gradients match central finite differences everywhere.
fn criterion_gradients(opts: &AcceptOpts) -> CriterionResult {
    let t0 = Instant::now();
    let reports = gradcheck::run_all(GradCheckOpts { corrupt: opts.corrupt_gradients });
    let secs = t0.elapsed().as_secs_f64();
    let configs: usize = reports.iter().map(|r| r.configs).sum();
    let failures: usize = reports.iter().map(|r| r.failures.len()).sum();
    let max_rel = reports.iter().fold(0.0_f64, |m, r| m.max(r.max_rel));
    let pass = failures == 0 && configs >= 100 && secs < 60.0;
    Ok((
        "gradient-correctness",
        format!(
            "max rel err {max_rel:.3e}, {failures} failures over {configs} configurations in {secs:.1}s"
        ),
        "rel err < 1e-5 (abs floor 1e-8), >= 100 configurations, < 60 s".into(),
        pass,
    ))
}

/// 2: lookup encoders expose no coordinate-gradient path; continuous
/// models' finite-difference coordinate Jacobian matches the analytic one.
fn criterion_broken_chain(_opts: &AcceptOpts) -> CriterionResult {
    use crate::models::ModelConfig;
    let mcfg = ModelConfig { table_resolution: vec![33, 33], ..ModelConfig::default() };

    // Structural half: backward returns no coordinate gradient.
    let mut structural_ok = true;
    for kind in [ModelKind::Diner, ModelKind::Ngp] {
        let mut model = fit::seeded_model(kind, 2, 3, &mcfg, 301)?;
        let x = Mat::from_vec(2, 2, vec![0.31, 0.62, 0.55, 0.18]);
        let pred = model.forward(&x)?;
        let grad = Mat::from_vec(pred.rows(), pred.cols(), vec![1.0; pred.rows() * pred.cols()]);
        structural_ok &= model.backward(&grad)?.is_none();
        model.zero_grads();
    }

    // Differential half: FD vs analytic coordinate Jacobian at 20 interior
    // points per continuous kind, sampled away from cell planes and kinks.
    // The step keeps (omega*h)^2 truncation of the top encoding band a few
    // orders under the tolerance even after cancellation between terms.
    let h = 1e-6;
    let mut max_rel = 0.0_f64;
    for kind in [ModelKind::PeMlp, ModelKind::RhinoDiner, ModelKind::RhinoNgp] {
        let model = fit::seeded_model(kind, 2, 3, &mcfg, 302 + kind as u64)?;
        let planes = lookup_resolutions(kind, &mcfg);
        let mut rng = ChaCha8Rng::seed_from_u64(77 + kind as u64);
        for _ in 0..20 {
            let x = sample_clear_point(&model, &planes, h, &mut rng)?;
            let fd = model.coord_jacobian_fd(&x, h)?;
            let an = model.coord_jacobian_analytic(&x)?;
            for (f, a) in fd.data().iter().zip(an.data()) {
                let denom = f.abs().max(a.abs());
                if denom > 1e-7 {
                    max_rel = max_rel.max((f - a).abs() / denom);
                }
            }
        }
    }
    let pass = structural_ok && max_rel < 1e-3;
    Ok((
        "broken-chain-asymmetry",
        format!(
            "diner/ngp coordinate gradient: {}, continuous-kind FD vs analytic max rel err {max_rel:.3e}",
            if structural_ok { "absent" } else { "PRESENT" }
        ),
        "no coordinate path for lookups; rel err < 1e-3 at 20 points/kind".into(),
        pass,
    ))
}

/// Per-level grid resolutions whose cell planes finite differences must
/// not straddle.
fn lookup_resolutions(kind: ModelKind, mcfg: &crate::models::ModelConfig) -> Vec<Vec<usize>> {
    match kind {
        ModelKind::RhinoDiner => vec![mcfg.table_resolution.clone()],
        ModelKind::RhinoNgp => (0..mcfg.num_levels)
            .map(|l| {
                let r = (mcfg.base_resolution as f64 * mcfg.growth_factor.powi(l as i32)) as usize;
                vec![r; 2]
            })
            .collect(),
        _ => Vec::new(),
    }
}

/// Rejection-samples a coordinate whose full difference stencil (center and
/// the +-h endpoint along every dim) stays clear of lookup cell planes and
/// keeps every relu pre-activation on one side of its kink with margin.
fn sample_clear_point(
    model: &crate::models::Model,
    planes: &[Vec<usize>],
    h: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let d = model.d_in;
    'outer: for _ in 0..10_000 {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..0.95)).collect();
        for level in planes {
            for (k, &r) in level.iter().enumerate() {
                let u = x[k] * (r - 1) as f64;
                if (u - u.round()).abs() < 5.0 * h * (r - 1) as f64 {
                    continue 'outer;
                }
            }
        }
        let mut probes = vec![x.clone()];
        for k in 0..d {
            for step in [h, -h] {
                let mut p = x.clone();
                p[k] += step;
                probes.push(p);
            }
        }
        let sigs: Vec<Vec<f64>> = probes
            .iter()
            .map(|p| model.relu_signature(&Mat::from_vec(1, d, p.clone())))
            .collect::<Result<_>>()?;
        let center = &sigs[0];
        for sig in &sigs {
            for (a, b) in sig.iter().zip(center) {
                if a.abs() < 1e-4 || a.signum() != b.signum() {
                    continue 'outer;
                }
            }
        }
        return Ok(x);
    }
    Err(Error::Usage("could not sample a plane-clear probe point".into()))
}

/// 3: on the stripe, the transform branch at least halves diner's held-out
/// MSE and improves ngp's.
fn criterion_stripe_interpolation(opts: &AcceptOpts) -> CriterionResult {
    let t0 = Instant::now();
    let mut ho = HashMap::new();
    for kind in ["diner", "rhino_diner", "ngp", "rhino_ngp"] {
        let mut vals = Vec::new();
        for seed in STRIPE_SEEDS {
            let m = cached_fit(&stripe_config(opts, kind, seed)?)?;
            vals.push(m.heldout_mse.unwrap());
        }
        ho.insert(kind, mean(&vals));
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = ho["rhino_diner"] < ho["diner"] / 2.0
        && ho["rhino_ngp"] < ho["ngp"]
        && secs < 120.0;
    Ok((
        "stripe-interpolation",
        format!(
            "held-out MSE diner {:.4e} vs rhino_diner {:.4e}, ngp {:.4e} vs rhino_ngp {:.4e} ({secs:.1}s)",
            ho["diner"], ho["rhino_diner"], ho["ngp"], ho["rhino_ngp"]
        ),
        "rhino_diner < diner/2 and rhino_ngp < ngp, 3-seed means, < 2 min".into(),
        pass,
    ))
}

/// 4: the full-resolution table out-fits the Fourier MLP on training pixels.
fn criterion_expressive_power(opts: &AcceptOpts) -> CriterionResult {
    let t0 = Instant::now();
    let diner = image_mean(opts, "diner", "mlp", |m| m.train_psnr)?;
    let pe = image_mean(opts, "pe_mlp", "mlp", |m| m.train_psnr)?;
    let secs = t0.elapsed().as_secs_f64();
    let pass = diner >= pe + 3.0 && secs < 300.0;
    Ok((
        "expressive-power-ordering",
        format!("train PSNR diner {diner:.2} dB vs pe_mlp {pe:.2} dB ({secs:.1}s)"),
        "diner >= pe_mlp + 3 dB, 3-seed means, < 5 min".into(),
        pass,
    ))
}

/// 5: the transform branch lifts held-out PSNR without hurting train PSNR.
fn criterion_regularization_gap(opts: &AcceptOpts) -> CriterionResult {
    let ho_diner = image_mean(opts, "diner", "mlp", |m| m.heldout_psnr)?;
    let ho_rdiner = image_mean(opts, "rhino_diner", "mlp", |m| m.heldout_psnr)?;
    let ho_ngp = image_mean(opts, "ngp", "mlp", |m| m.heldout_psnr)?;
    let ho_rngp = image_mean(opts, "rhino_ngp", "mlp", |m| m.heldout_psnr)?;
    let tr_diner = image_mean(opts, "diner", "mlp", |m| m.train_psnr)?;
    let tr_rdiner = image_mean(opts, "rhino_diner", "mlp", |m| m.train_psnr)?;
    let tr_ngp = image_mean(opts, "ngp", "mlp", |m| m.train_psnr)?;
    let tr_rngp = image_mean(opts, "rhino_ngp", "mlp", |m| m.train_psnr)?;
    let pass = ho_rdiner >= ho_diner + 2.0
        && ho_rngp >= ho_ngp + 1.0
        && tr_rdiner >= tr_diner - 0.5
        && tr_rngp >= tr_ngp - 0.5;
    Ok((
        "regularization-gap",
        format!(
            "held-out PSNR rhino_diner {ho_rdiner:.2} vs diner {ho_diner:.2}, rhino_ngp {ho_rngp:.2} vs ngp {ho_ngp:.2}; train rhino_diner {tr_rdiner:.2} vs diner {tr_diner:.2}, rhino_ngp {tr_rngp:.2} vs ngp {tr_ngp:.2}"
        ),
        "held-out: rhino_diner >= diner+2 dB, rhino_ngp >= ngp+1 dB; train: rhino >= backbone-0.5 dB".into(),
        pass,
    ))
}

/// 6: rhino_ngp reconstructs the analytic sphere to high occupancy IoU.
fn criterion_sdf_iou(opts: &AcceptOpts) -> CriterionResult {
    let t0 = Instant::now();
    let m = cached_fit(&sdf_config(opts, 31)?)?;
    let iou = m.iou.unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let pass = iou >= 0.97 && secs < 300.0;
    Ok((
        "sdf-iou",
        format!("IoU {iou:.4} on the 64^3 grid after 2000 iterations ({secs:.1}s)"),
        "IoU >= 0.97, < 5 min".into(),
        pass,
    ))
}

/// 7: metrics and the optimizer hit their closed-form values exactly.
fn criterion_metric_exactness(_opts: &AcceptOpts) -> CriterionResult {
    // Uniform error 0.1 at peak 1 is exactly 20 dB.
    let gt = Mat::from_vec(4, 4, vec![0.4; 16]);
    let pred = Mat::from_vec(4, 4, vec![0.5; 16]);
    let psnr_err = (metrics::psnr(&pred, &gt, 1.0)? - 20.0).abs();

    // 1D counting case: pred occupies cells [0,10), gt [5,15) of 20.
    let pred_sdf: Vec<f64> = (0..20).map(|i| if i < 10 { -1.0 } else { 1.0 }).collect();
    let gt_sdf: Vec<f64> = (0..20).map(|i| if (5..15).contains(&i) { -1.0 } else { 1.0 }).collect();
    let iou = metrics::iou(&pred_sdf, &gt_sdf)?;
    let iou_exact = iou == 1.0 / 3.0;

    // One Adam step from w=1, g=1 moves by exactly -lr/(1+eps).
    let mut p = Parameter::new("w", (1, 1), vec![1.0]);
    p.grads[0] = 1.0;
    let mut adam = Adam::new(AdamConfig::default(), &[&p]);
    adam.step(&mut [&mut p])?;
    let expected = 1.0 - 1e-3 / (1.0 + 1e-8);
    let adam_err = (p.values[0] - expected).abs();

    let pass = psnr_err <= 1e-9 && iou_exact && adam_err <= 1e-12;
    Ok((
        "metric-exactness",
        format!(
            "psnr dev {psnr_err:.2e}, iou == 1/3 {iou_exact}, adam dev {adam_err:.2e}"
        ),
        "psnr +-1e-9, iou exact, adam +-1e-12".into(),
        pass,
    ))
}

/// 8: equal config and seed reproduce byte-identical artifacts.
fn criterion_determinism(opts: &AcceptOpts) -> CriterionResult {
    use crate::cli::execute_run;
    let scratch = opts.scratch_dir.join("determinism");
    let configs = [
        (
            "stripe",
            "seed = 41\noutput_dir = \"unused\"\n[task]\nkind = \"stripe\"\n[model]\nkind = \"diner\"\n[optim]\niters = 150\nbatch_size = 32\neval_interval = 50\n",
        ),
        (
            "sdf",
            "seed = 42\noutput_dir = \"unused\"\n[task]\nkind = \"sdf\"\nsize = 16\n[model]\nkind = \"rhino_ngp\"\n[optim]\niters = 30\nbatch_size = 256\neval_interval = 10\n",
        ),
    ];
    let mut all_equal = true;
    let mut detail = String::new();
    for (tag, text) in configs {
        let mut digests = Vec::new();
        for rep in 0..2 {
            let mut cfg = config::parse(text, &opts.overrides)?;
            let dir = scratch.join(format!("{tag}_{rep}"));
            let _ = std::fs::remove_dir_all(&dir);
            cfg.output_dir = dir.display().to_string();
            execute_run(&cfg)?;
            digests.push((
                std::fs::read(dir.join("metrics.csv"))?,
                std::fs::read(dir.join("checkpoint"))?,
            ));
        }
        let csv_eq = digests[0].0 == digests[1].0;
        let ckpt_eq = digests[0].1 == digests[1].1;
        all_equal &= csv_eq && ckpt_eq;
        write!(
            detail,
            "{tag}: metrics.csv {} checkpoint {}; ",
            if csv_eq { "identical" } else { "DIFFER" },
            if ckpt_eq { "identical" } else { "DIFFER" }
        )
        .unwrap();
    }
    Ok((
        "determinism",
        detail.trim_end_matches("; ").to_string(),
        "byte-identical metrics.csv and checkpoints on rerun".into(),
        all_equal,
    ))
}

/// 9: with the transform disabled, the held-out advantage of criterion 5
/// collapses, so the gap is attributable to the analytic branch.
fn criterion_negative_control(opts: &AcceptOpts) -> CriterionResult {
    let ho_diner = image_mean(opts, "diner", "mlp", |m| m.heldout_psnr)?;
    let ho_disabled = image_mean(opts, "rhino_diner", "disabled", |m| m.heldout_psnr)?;
    let gap = ho_disabled - ho_diner;
    let pass = gap < 0.5;
    Ok((
        "transform-negative-control",
        format!(
            "held-out PSNR rhino_diner(disabled) {ho_disabled:.2} vs diner {ho_diner:.2}, gap {gap:.2} dB"
        ),
        "gap < 0.5 dB".into(),
        pass,
    ))
}
