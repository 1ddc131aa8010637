//! Central finite-difference oracles for every backward rule in the crate.
//!
//! Each suite draws random double-precision configurations, computes a random
//! linear functional of the forward output as a scalar loss, obtains analytic
//! gradients from the backward pass, and compares them against central
//! differences (h=1e-5) element by element. Agreement means relative error
//! under the suite tolerance, with a 1e-8 absolute floor for near-zero
//! gradients. Relu configurations are redrawn until every pre-activation
//! clears a margin, so no stencil straddles the kink.

use crate::diffcore::{concat_forward, ActLayer, Activation, Linear, Parameter};
use crate::encodings::{FullResTable, GridParams, MultiResHashGrid, PositionalEncoding};
use crate::mat::Mat;
use crate::models::{Model, ModelConfig, ModelKind, TransformKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const ABS_FLOOR: f64 = 1e-8;
const KINK_MARGIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default)]
pub struct GradCheckOpts {
    /// Deliberately offsets the first analytic gradient of every suite, a
    /// negative control that must make the whole check fail.
    pub corrupt: bool,
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    pub configs: usize,
    pub checks: usize,
    pub max_rel: f64,
    pub failures: Vec<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

struct Checker {
    tol: f64,
    checks: usize,
    max_rel: f64,
    failures: Vec<String>,
    corrupt_pending: bool,
}

impl Checker {
    fn new(tol: f64, opts: GradCheckOpts) -> Checker {
        Checker { tol, checks: 0, max_rel: 0.0, failures: Vec::new(), corrupt_pending: opts.corrupt }
    }

    fn compare(&mut self, what: &str, mut analytic: f64, numeric: f64) {
        if self.corrupt_pending {
            analytic += 1e-3;
            self.corrupt_pending = false;
        }
        self.checks += 1;
        let diff = (analytic - numeric).abs();
        if diff < ABS_FLOOR {
            return;
        }
        let rel = diff / analytic.abs().max(numeric.abs());
        self.max_rel = self.max_rel.max(rel);
        if rel >= self.tol && self.failures.len() < 5 {
            self.failures.push(format!(
                "{what}: analytic {analytic:.12e} vs numeric {numeric:.12e} (rel {rel:.3e})"
            ));
        }
    }

    fn finish(self, name: &str, configs: usize) -> CheckReport {
        CheckReport {
            name: name.to_string(),
            configs,
            checks: self.checks,
            max_rel: self.max_rel,
            failures: self.failures,
        }
    }
}

/// Scalar loss: sum of the elementwise product with a fixed weighting matrix.
/// Its gradient w.r.t. the output is the weighting matrix itself.
fn weighted_sum(out: &Mat, s: &Mat) -> f64 {
    out.data().iter().zip(s.data()).map(|(a, b)| a * b).sum()
}

fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    m.data_mut().iter_mut().for_each(|v| *v = rng.random_range(lo..hi));
    m
}

pub fn check_linear(opts: GradCheckOpts) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut c = Checker::new(1e-5, opts);
    let configs = 100;
    for cfg in 0..configs {
        let (n, d_in, d_out) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..6));
        let mut lin = Linear::from_params(
            Parameter::new("w", (d_out, d_in), rand_mat(&mut rng, d_out, d_in, -1.0, 1.0).data().to_vec()),
            Parameter::new("b", (d_out, 1), rand_mat(&mut rng, d_out, 1, -1.0, 1.0).data().to_vec()),
        )
        .unwrap();
        let input = rand_mat(&mut rng, n, d_in, -1.0, 1.0);
        let s = rand_mat(&mut rng, n, d_out, -1.0, 1.0);
        lin.forward(&input).unwrap();
        let dinput = lin.backward(&s).unwrap();
        let loss = |l: &Linear, x: &Mat| weighted_sum(&l.forward_frozen(x).unwrap(), &s);

        for i in 0..lin.w.len() {
            let orig = lin.w.values[i];
            lin.w.values[i] = orig + H;
            let fp = loss(&lin, &input);
            lin.w.values[i] = orig - H;
            let fm = loss(&lin, &input);
            lin.w.values[i] = orig;
            c.compare(&format!("cfg {cfg} w[{i}]"), lin.w.grads[i], (fp - fm) / (2.0 * H));
        }
        for i in 0..lin.b.len() {
            let orig = lin.b.values[i];
            lin.b.values[i] = orig + H;
            let fp = loss(&lin, &input);
            lin.b.values[i] = orig - H;
            let fm = loss(&lin, &input);
            lin.b.values[i] = orig;
            c.compare(&format!("cfg {cfg} b[{i}]"), lin.b.grads[i], (fp - fm) / (2.0 * H));
        }
        let mut input = input;
        for i in 0..input.data().len() {
            let orig = input.data()[i];
            input.data_mut()[i] = orig + H;
            let fp = loss(&lin, &input);
            input.data_mut()[i] = orig - H;
            let fm = loss(&lin, &input);
            input.data_mut()[i] = orig;
            c.compare(&format!("cfg {cfg} input[{i}]"), dinput.data()[i], (fp - fm) / (2.0 * H));
        }
    }
    c.finish("linear", configs)
}

pub fn check_activations(opts: GradCheckOpts) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut c = Checker::new(1e-5, opts);
    let configs = 120;
    for cfg in 0..configs {
        let act = match cfg % 3 {
            0 => Activation::Relu,
            1 => Activation::Sine(rng.random_range(0.5..31.0)),
            _ => Activation::Identity,
        };
        let (n, d) = (rng.random_range(1..5), rng.random_range(1..6));
        let mut input = rand_mat(&mut rng, n, d, -1.0, 1.0);
        if act == Activation::Relu {
            for v in input.data_mut().iter_mut() {
                while v.abs() < KINK_MARGIN {
                    *v = rng.random_range(-1.0..1.0);
                }
            }
        }
        let s = rand_mat(&mut rng, n, d, -1.0, 1.0);
        let mut layer = ActLayer::new(act);
        layer.forward(&input);
        let dinput = layer.backward(&s).unwrap();
        for i in 0..input.data().len() {
            let orig = input.data()[i];
            input.data_mut()[i] = orig + H;
            let fp = weighted_sum(&layer.forward_frozen(&input), &s);
            input.data_mut()[i] = orig - H;
            let fm = weighted_sum(&layer.forward_frozen(&input), &s);
            input.data_mut()[i] = orig;
            c.compare(&format!("cfg {cfg} x[{i}]"), dinput.data()[i], (fp - fm) / (2.0 * H));
        }
    }
    c.finish("activations", configs)
}

pub fn check_concat(opts: GradCheckOpts) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut c = Checker::new(1e-5, opts);
    let configs = 100;
    for cfg in 0..configs {
        let (n, p, q) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(0..4));
        let mut a = rand_mat(&mut rng, n, p, -1.0, 1.0);
        let mut b = rand_mat(&mut rng, n, q, -1.0, 1.0);
        let s = rand_mat(&mut rng, n, p + q, -1.0, 1.0);
        let (da, db) = crate::diffcore::concat_backward(&s, p).unwrap();
        let loss = |a: &Mat, b: &Mat| weighted_sum(&concat_forward(a, b).unwrap(), &s);
        for i in 0..a.data().len() {
            let orig = a.data()[i];
            a.data_mut()[i] = orig + H;
            let fp = loss(&a, &b);
            a.data_mut()[i] = orig - H;
            let fm = loss(&a, &b);
            a.data_mut()[i] = orig;
            c.compare(&format!("cfg {cfg} a[{i}]"), da.data()[i], (fp - fm) / (2.0 * H));
        }
        for i in 0..b.data().len() {
            let orig = b.data()[i];
            b.data_mut()[i] = orig + H;
            let fp = loss(&a, &b);
            b.data_mut()[i] = orig - H;
            let fm = loss(&a, &b);
            b.data_mut()[i] = orig;
            c.compare(&format!("cfg {cfg} b[{i}]"), db.data()[i], (fp - fm) / (2.0 * H));
        }
    }
    c.finish("concat", configs)
}

pub fn check_mse(opts: GradCheckOpts) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut c = Checker::new(1e-6, opts);
    let configs = 100;
    for cfg in 0..configs {
        let (n, d) = (rng.random_range(1..6), rng.random_range(1..5));
        let mut pred = rand_mat(&mut rng, n, d, -1.0, 1.0);
        let target = rand_mat(&mut rng, n, d, -1.0, 1.0);
        let (_, grad) = crate::diffcore::mse_loss(&pred, &target).unwrap();
        for i in 0..pred.data().len() {
            let orig = pred.data()[i];
            pred.data_mut()[i] = orig + H;
            let fp = crate::diffcore::mse_loss(&pred, &target).unwrap().0;
            pred.data_mut()[i] = orig - H;
            let fm = crate::diffcore::mse_loss(&pred, &target).unwrap().0;
            pred.data_mut()[i] = orig;
            c.compare(&format!("cfg {cfg} pred[{i}]"), grad.data()[i], (fp - fm) / (2.0 * H));
        }
    }
    c.finish("mse", configs)
}

pub fn check_positional_encoding(opts: GradCheckOpts) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut c = Checker::new(1e-5, opts);
    let configs = 100;
    for cfg in 0..configs {
        let d = rng.random_range(1..4);
        let pe = PositionalEncoding::new(rng.random_range(1..6), d).unwrap();
        let n = rng.random_range(1..4);
        let mut x = rand_mat(&mut rng, n, d, 0.05, 0.95);
        let s = rand_mat(&mut rng, n, pe.out_width(), -1.0, 1.0);
        let dx = pe.backward(&x, &s);
        for i in 0..x.data().len() {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + H;
            let fp = weighted_sum(&pe.forward(&x), &s);
            x.data_mut()[i] = orig - H;
            let fm = weighted_sum(&pe.forward(&x), &s);
            x.data_mut()[i] = orig;
            c.compare(&format!("cfg {cfg} x[{i}]"), dx.data()[i], (fp - fm) / (2.0 * H));
        }
    }
    c.finish("positional_encoding", configs)
}

pub fn check_table_entries(opts: GradCheckOpts) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut c = Checker::new(1e-6, opts);
    let configs = 100;
    for cfg in 0..configs {
        let d = rng.random_range(1..4);
        let res: Vec<usize> = (0..d).map(|_| rng.random_range(2..5)).collect();
        let f = rng.random_range(1..3);
        let len = res.iter().product::<usize>() * f;
        let values: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut t = FullResTable::with_entries(res, f, values).unwrap();
        let n = rng.random_range(1..4);
        let x = rand_mat(&mut rng, n, d, 0.0, 1.0);
        let s = rand_mat(&mut rng, n, f, -1.0, 1.0);
        t.backward(&x, &s).unwrap();
        let grads = t.entries.grads.clone();
        for i in 0..t.entries.len() {
            let orig = t.entries.values[i];
            t.entries.values[i] = orig + H;
            let fp = weighted_sum(&t.forward(&x).unwrap(), &s);
            t.entries.values[i] = orig - H;
            let fm = weighted_sum(&t.forward(&x).unwrap(), &s);
            t.entries.values[i] = orig;
            c.compare(&format!("cfg {cfg} entry[{i}]"), grads[i], (fp - fm) / (2.0 * H));
        }
    }
    c.finish("table_entries", configs)
}

pub fn check_grid_entries(opts: GradCheckOpts) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut c = Checker::new(1e-6, opts);
    let configs = 100;
    for cfg in 0..configs {
        let d = rng.random_range(1..4);
        let p = GridParams {
            num_levels: rng.random_range(1..4),
            log2_table_size: rng.random_range(3..6),
            feature_width: rng.random_range(1..3),
            base_resolution: rng.random_range(2..4),
            growth_factor: rng.random_range(1.3..2.2),
            ..GridParams::default()
        };
        let mut g = MultiResHashGrid::new(d, p, &mut rng).unwrap();
        for level in g.levels.iter_mut() {
            level.entries.values.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let n = rng.random_range(1..4);
        let x = rand_mat(&mut rng, n, d, 0.0, 1.0);
        let s = rand_mat(&mut rng, n, g.out_width(), -1.0, 1.0);
        g.backward(&x, &s).unwrap();
        let grads: Vec<Vec<f64>> = g.levels.iter().map(|l| l.entries.grads.clone()).collect();
        for li in 0..g.levels.len() {
            for i in 0..g.levels[li].entries.len() {
                let orig = g.levels[li].entries.values[i];
                g.levels[li].entries.values[i] = orig + H;
                let fp = weighted_sum(&g.forward(&x).unwrap(), &s);
                g.levels[li].entries.values[i] = orig - H;
                let fm = weighted_sum(&g.forward(&x).unwrap(), &s);
                g.levels[li].entries.values[i] = orig;
                c.compare(&format!("cfg {cfg} l{li}[{i}]"), grads[li][i], (fp - fm) / (2.0 * H));
            }
        }
    }
    c.finish("grid_entries", configs)
}

fn small_model_config(rng: &mut ChaCha8Rng, d_in: usize) -> ModelConfig {
    ModelConfig {
        feature_width: rng.random_range(1..3),
        table_resolution: (0..d_in).map(|_| rng.random_range(2..5)).collect(),
        num_levels: 2,
        log2_table_size: 4,
        base_resolution: rng.random_range(2..4),
        growth_factor: 1.7,
        pe_num_freqs: rng.random_range(2..4),
        transform_num_freqs: rng.random_range(1..4),
        hidden_layers: rng.random_range(1..3),
        hidden_width: rng.random_range(4..9),
        siren_w0: 30.0,
        transform: TransformKind::Mlp,
    }
}

/// Full-element finite-difference sweep over one model kind: every parameter
/// of every configuration, plus the coordinate gradient for the kinds whose
/// entire forward map is continuous in x.
pub fn check_model_kind(kind: ModelKind, opts: GradCheckOpts) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(108 + kind as u64);
    let mut c = Checker::new(1e-5, opts);
    let configs = 20;
    for cfg in 0..configs {
        let d_in = rng.random_range(1..4);
        let d_out = rng.random_range(1..3);
        let mcfg = small_model_config(&mut rng, d_in);
        let mut model = Model::build(kind, d_in, d_out, &mcfg, &mut rng).unwrap();
        // Lookup entries initialize near zero, which pins the trunk
        // pre-activations wherever the biases landed; rescale them so the
        // coordinates actually reach the relu layers and the kink-margin
        // redraw below has something to vary.
        for p in model.params_mut() {
            if p.name == "table" || p.name.starts_with("grid.") {
                p.values.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            }
        }
        let n = rng.random_range(1..4);

        // Coordinates are redrawn until every relu pre-activation clears the
        // kink margin, so the difference stencil stays on one linear piece.
        let mut coords = rand_mat(&mut rng, n, d_in, 0.05, 0.95);
        let mut tries = 0;
        while model.relu_kink_margin(&coords).unwrap() < KINK_MARGIN {
            coords = rand_mat(&mut rng, n, d_in, 0.05, 0.95);
            tries += 1;
            assert!(tries < 1000, "could not find a kink-free configuration");
        }
        let s = rand_mat(&mut rng, n, d_out, -1.0, 1.0);
        model.forward(&coords).unwrap();
        let coord_grad = model.backward(&s).unwrap();
        let analytic: Vec<(String, Vec<f64>)> =
            model.params().iter().map(|p| (p.name.clone(), p.grads.clone())).collect();

        let loss = |m: &Model, x: &Mat| weighted_sum(&m.predict(x).unwrap(), &s);
        for (pi, (pname, grads)) in analytic.iter().enumerate() {
            for i in 0..grads.len() {
                let orig = model.params()[pi].values[i];
                model.params_mut()[pi].values[i] = orig + H;
                let fp = loss(&model, &coords);
                model.params_mut()[pi].values[i] = orig - H;
                let fm = loss(&model, &coords);
                model.params_mut()[pi].values[i] = orig;
                c.compare(&format!("cfg {cfg} {pname}[{i}]"), grads[i], (fp - fm) / (2.0 * H));
            }
        }

        // The backward coordinate gradient covers the full chain only for
        // kinds without a lookup branch; lookup slopes never enter backward.
        if matches!(kind, ModelKind::Siren | ModelKind::PeMlp) {
            let dx = coord_grad.expect("continuous kinds must emit a coordinate gradient");
            let mut coords = coords;
            for i in 0..coords.data().len() {
                let orig = coords.data()[i];
                coords.data_mut()[i] = orig + H;
                let fp = loss(&model, &coords);
                coords.data_mut()[i] = orig - H;
                let fm = loss(&model, &coords);
                coords.data_mut()[i] = orig;
                c.compare(&format!("cfg {cfg} coord[{i}]"), dx.data()[i], (fp - fm) / (2.0 * H));
            }
        }
    }
    c.finish(&format!("model_{kind}"), configs)
}

/// Every suite in order; the complete oracle for backward correctness.
pub fn run_all(opts: GradCheckOpts) -> Vec<CheckReport> {
    let mut reports = vec![
        check_linear(opts),
        check_activations(opts),
        check_concat(opts),
        check_mse(opts),
        check_positional_encoding(opts),
        check_table_entries(opts),
        check_grid_entries(opts),
    ];
    for kind in ModelKind::all() {
        reports.push(check_model_kind(kind, opts));
    }
    reports
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupt_hook_fails_the_linear_suite() {
        let r = check_linear(GradCheckOpts { corrupt: true });
        assert!(!r.passed());
    }
}
