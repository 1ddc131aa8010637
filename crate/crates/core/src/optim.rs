//! Adam with bias correction. Lookup entries ("table", "grid.*") may train at
//! a higher rate than network weights; both rates live in the config. Grads
//! are left untouched by `step`; the caller zeroes them.

use crate::diffcore::Parameter;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    /// Rate for network weights (trunk and transform).
    pub lr: f64,
    /// Rate for learned lookup entries.
    pub table_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Cosine decay of both rates to zero over `total_iters` steps.
    pub cosine_decay: bool,
    pub total_iters: usize,
}

impl Default for AdamConfig {
    fn default() -> AdamConfig {
        AdamConfig {
            lr: 1e-3,
            table_lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            cosine_decay: false,
            total_iters: 0,
        }
    }
}

struct Slot {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
}

pub struct Adam {
    cfg: AdamConfig,
    step_count: usize,
    slots: Vec<Slot>,
}

fn is_lookup_entries(name: &str) -> bool {
    name == "table" || name.starts_with("grid.")
}

impl Adam {
    /// One moment slot per parameter, in the same order as `params`. Slot
    /// rates come from the parameter name, so the caller must pass the same
    /// parameter list to every `step`.
    pub fn new(cfg: AdamConfig, params: &[&Parameter]) -> Adam {
        let slots = params
            .iter()
            .map(|p| Slot {
                lr: if is_lookup_entries(&p.name) { cfg.table_lr } else { cfg.lr },
                m: vec![0.0; p.len()],
                v: vec![0.0; p.len()],
            })
            .collect();
        Adam { cfg, step_count: 0, slots }
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn step(&mut self, params: &mut [&mut Parameter]) -> Result<()> {
        if params.len() != self.slots.len() {
            return Err(Error::Usage(format!(
                "optimizer has {} slots but received {} parameters",
                self.slots.len(),
                params.len()
            )));
        }
        for p in params.iter() {
            if p.grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter '{}' is not finite",
                    p.name
                )));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1c = 1.0 - self.cfg.beta1.powi(t);
        let b2c = 1.0 - self.cfg.beta2.powi(t);
        let decay = if self.cfg.cosine_decay && self.cfg.total_iters > 0 {
            let progress = ((self.step_count - 1) as f64 / self.cfg.total_iters as f64).min(1.0);
            0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        } else {
            1.0
        };
        for (slot, p) in self.slots.iter_mut().zip(params.iter_mut()) {
            debug_assert_eq!(slot.m.len(), p.len());
            let lr = slot.lr * decay;
            for i in 0..p.len() {
                let g = p.grads[i];
                slot.m[i] = self.cfg.beta1 * slot.m[i] + (1.0 - self.cfg.beta1) * g;
                slot.v[i] = self.cfg.beta2 * slot.v[i] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = slot.m[i] / b1c;
                let v_hat = slot.v[i] / b2c;
                p.values[i] -= lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(name: &str, v: f64) -> Parameter {
        Parameter::new(name, (1, 1), vec![v])
    }

    #[test]
    fn zero_grad_leaves_values_unchanged() {
        let mut p = scalar_param("w", 0.7);
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        adam.step(&mut [&mut p]).unwrap();
        assert_eq!(p.values[0], 0.7);
    }

    #[test]
    fn single_step_hand_case() {
        // g=1 on the first step: m_hat = v_hat = 1, delta = -lr/(1+eps).
        let mut p = scalar_param("w", 0.0);
        p.grads[0] = 1.0;
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        adam.step(&mut [&mut p]).unwrap();
        let expect = -1e-3 / (1.0 + 1e-8);
        assert!((p.values[0] - expect).abs() < 1e-12, "{} vs {expect}", p.values[0]);
    }

    #[test]
    fn consecutive_steps_move_against_gradient_sign() {
        let mut p = scalar_param("w", 1.0);
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        let mut prev = p.values[0];
        for _ in 0..2 {
            p.grads[0] = 2.5;
            adam.step(&mut [&mut p]).unwrap();
            assert!(p.values[0] < prev);
            prev = p.values[0];
        }
    }

    #[test]
    fn nan_grad_aborts_naming_the_parameter() {
        let mut p = scalar_param("trunk.0.w", 1.0);
        p.grads[0] = f64::NAN;
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        let err = adam.step(&mut [&mut p]).unwrap_err();
        assert_eq!(err.kind(), "non_finite");
        assert!(err.to_string().contains("trunk.0.w"));
    }

    #[test]
    fn lookup_entries_use_table_rate() {
        let table = scalar_param("table", 0.0);
        let grid = scalar_param("grid.l3", 0.0);
        let net = scalar_param("trunk.0.w", 0.0);
        let adam = Adam::new(AdamConfig::default(), &[&table, &grid, &net]);
        assert_eq!(adam.slots[0].lr, 1e-2);
        assert_eq!(adam.slots[1].lr, 1e-2);
        assert_eq!(adam.slots[2].lr, 1e-3);
    }

    #[test]
    fn quadratic_scale_test() {
        // f(w) = w^2 from w=1: 5000 steps at lr=1e-3 reach |w| < 1e-2.
        let mut p = scalar_param("w", 1.0);
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        for _ in 0..5000 {
            p.grads[0] = 2.0 * p.values[0];
            adam.step(&mut [&mut p]).unwrap();
            p.zero_grads();
        }
        assert!(p.values[0].abs() < 1e-2, "w = {}", p.values[0]);
    }

    #[test]
    fn cosine_decay_reaches_zero_rate() {
        let mut p = scalar_param("w", 1.0);
        let cfg = AdamConfig { cosine_decay: true, total_iters: 10, ..AdamConfig::default() };
        let mut adam = Adam::new(cfg, &[&p]);
        for _ in 0..10 {
            p.grads[0] = 1.0;
            adam.step(&mut [&mut p]).unwrap();
            p.zero_grads();
        }
        // Step 11 runs at progress >= 1, i.e. zero rate.
        let before = p.values[0];
        p.grads[0] = 1.0;
        adam.step(&mut [&mut p]).unwrap();
        assert_eq!(p.values[0], before);
    }
}
