//! 3D signed-distance regression. There is no fixed train set: every
//! iteration draws a fresh supervision batch, half uniform over the unit
//! cube and half concentrated near the zero level set, and the model is
//! scored by occupancy IoU against the analytic shape on a dense grid.

use super::fit::EvalMetrics;
use super::metrics;
use crate::diffcore::Batch;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::models::Model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::TAU;

/// Std-dev of the gaussian displacement applied to surface points.
const SURFACE_NOISE: f64 = 0.02;
/// ChaCha streams 1 and 2 belong to the training loop; per-iteration
/// sampling starts above them so the streams never collide.
const SAMPLE_STREAM_BASE: u64 = 3;

#[derive(Clone, Copy, Debug)]
pub enum SdfShape {
    Sphere { center: [f64; 3], radius: f64 },
    /// Axis-aligned torus around the z axis through `center`.
    Torus { center: [f64; 3], major: f64, minor: f64 },
}

impl SdfShape {
    pub fn sphere() -> SdfShape {
        SdfShape::Sphere { center: [0.5; 3], radius: 0.3 }
    }

    pub fn torus() -> SdfShape {
        SdfShape::Torus { center: [0.5; 3], major: 0.3, minor: 0.12 }
    }

    /// Exact signed distance, negative inside.
    pub fn eval(&self, p: [f64; 3]) -> f64 {
        match *self {
            SdfShape::Sphere { center, radius } => {
                let d: f64 = (0..3).map(|k| (p[k] - center[k]).powi(2)).sum();
                d.sqrt() - radius
            }
            SdfShape::Torus { center, major, minor } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                let dz = p[2] - center[2];
                let ring = dx.hypot(dy) - major;
                ring.hypot(dz) - minor
            }
        }
    }

    /// A uniformly distributed point on the zero level set.
    fn surface_point(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        match *self {
            SdfShape::Sphere { center, radius } => loop {
                let v: [f64; 3] = [
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ];
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if norm > 1e-9 {
                    return [
                        center[0] + radius * v[0] / norm,
                        center[1] + radius * v[1] / norm,
                        center[2] + radius * v[2] / norm,
                    ];
                }
            },
            SdfShape::Torus { center, major, minor } => {
                let theta = rng.random_range(0.0..TAU);
                let phi = rng.random_range(0.0..TAU);
                let ring = major + minor * phi.cos();
                [
                    center[0] + ring * theta.cos(),
                    center[1] + ring * theta.sin(),
                    center[2] + minor * phi.sin(),
                ]
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct SdfTask {
    pub shape: SdfShape,
    /// Evaluation grid resolution per axis.
    pub grid: usize,
    pub batch_size: usize,
}

impl SdfTask {
    pub fn new(shape: SdfShape, grid: usize, batch_size: usize) -> Result<SdfTask> {
        if grid < 2 {
            return Err(Error::Config("sdf evaluation grid must be at least 2".into()));
        }
        if batch_size < 2 {
            return Err(Error::Config("sdf batch size must be at least 2".into()));
        }
        Ok(SdfTask { shape, grid, batch_size })
    }

    /// Draws the supervision batch for one iteration. A pure function of
    /// (seed, iter): the generator is reseeded on its own stream each call,
    /// so replaying an iteration reproduces its batch exactly. Displaced
    /// surface points are clamped into the cube and then re-labelled with
    /// the exact distance at the clamped location.
    pub fn sample_batch(&self, seed: u64, iter: usize) -> Result<Batch> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SAMPLE_STREAM_BASE + iter as u64);
        let n_uniform = self.batch_size / 2;
        let mut coords = Mat::zeros(self.batch_size, 3);
        let mut attrs = Mat::zeros(self.batch_size, 1);
        for i in 0..self.batch_size {
            let p = if i < n_uniform {
                [
                    rng.random_range(0.0..=1.0),
                    rng.random_range(0.0..=1.0),
                    rng.random_range(0.0..=1.0),
                ]
            } else {
                let s = self.shape.surface_point(&mut rng);
                let mut p = [0.0; 3];
                for k in 0..3 {
                    let noise: f64 = rng.sample(StandardNormal);
                    p[k] = (s[k] + SURFACE_NOISE * noise).clamp(0.0, 1.0);
                }
                p
            };
            coords.row_mut(i).copy_from_slice(&p);
            attrs.set(i, 0, self.shape.eval(p));
        }
        Batch::new(coords, attrs)
    }

    /// Grid coordinates i/(g-1) per axis, first axis outermost.
    pub fn eval_coords(&self) -> Mat {
        let g = self.grid;
        let mut coords = Mat::zeros(g * g * g, 3);
        let scale = 1.0 / (g - 1) as f64;
        let mut r = 0;
        for i in 0..g {
            for j in 0..g {
                for k in 0..g {
                    coords.set(r, 0, i as f64 * scale);
                    coords.set(r, 1, j as f64 * scale);
                    coords.set(r, 2, k as f64 * scale);
                    r += 1;
                }
            }
        }
        coords
    }

    /// Occupancy IoU between predicted and analytic distance on the grid.
    pub fn evaluate(&self, model: &Model) -> Result<EvalMetrics> {
        let coords = self.eval_coords();
        let pred = model.predict(&coords)?;
        let truth: Vec<f64> = (0..coords.rows())
            .map(|r| {
                let p = coords.row(r);
                self.shape.eval([p[0], p[1], p[2]])
            })
            .collect();
        let iou = metrics::iou(pred.data(), &truth)?;
        Ok(EvalMetrics {
            train_mse: None,
            train_psnr: None,
            heldout_mse: None,
            heldout_psnr: None,
            iou: Some(iou),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_distances_are_exact() {
        let s = SdfShape::sphere();
        assert_eq!(s.eval([0.5, 0.5, 0.5]), -0.3);
        assert!((s.eval([0.0, 0.0, 0.0]) - (0.75f64.sqrt() - 0.3)).abs() < 1e-15);
        assert!(s.eval([0.5, 0.5, 0.8]).abs() < 1e-15);
    }

    #[test]
    fn torus_zero_on_ring_surface() {
        let t = SdfShape::torus();
        // On the tube: major circle point pushed out by minor radius.
        assert!(t.eval([0.5 + 0.3 + 0.12, 0.5, 0.5]).abs() < 1e-15);
        assert!(t.eval([0.5 + 0.3, 0.5, 0.5 + 0.12]).abs() < 1e-15);
        // Center of the tube cross-section is -minor.
        assert!((t.eval([0.8, 0.5, 0.5]) + 0.12).abs() < 1e-15);
    }

    #[test]
    fn sample_batch_is_pure_in_seed_and_iter() {
        let task = SdfTask::new(SdfShape::sphere(), 8, 64).unwrap();
        let a = task.sample_batch(7, 3).unwrap();
        let b = task.sample_batch(7, 3).unwrap();
        assert_eq!(a.coords, b.coords);
        assert_eq!(a.attrs, b.attrs);
        let c = task.sample_batch(7, 4).unwrap();
        assert_ne!(a.coords, c.coords);
    }

    #[test]
    fn surface_half_hugs_the_zero_level_set() {
        let task = SdfTask::new(SdfShape::sphere(), 8, 200).unwrap();
        let batch = task.sample_batch(11, 0).unwrap();
        let near: Vec<f64> = (100..200).map(|i| batch.attrs.get(i, 0).abs()).collect();
        let mean = near.iter().sum::<f64>() / near.len() as f64;
        assert!(mean < 0.03, "mean |sdf| near surface {mean}");
        assert!(near.iter().all(|&v| v < 0.2));
    }

    #[test]
    fn labels_match_exact_distance_at_clamped_points() {
        let task = SdfTask::new(SdfShape::torus(), 8, 50).unwrap();
        let batch = task.sample_batch(5, 12).unwrap();
        for i in 0..50 {
            let p = batch.coords.row(i);
            assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(batch.attrs.get(i, 0), task.shape.eval([p[0], p[1], p[2]]));
        }
    }

    #[test]
    fn eval_grid_covers_the_cube_corners() {
        let task = SdfTask::new(SdfShape::sphere(), 4, 10).unwrap();
        let c = task.eval_coords();
        assert_eq!(c.rows(), 64);
        assert_eq!(c.row(0), &[0.0, 0.0, 0.0]);
        assert_eq!(c.row(63), &[1.0, 1.0, 1.0]);
        // First axis outermost.
        assert_eq!(c.row(16), &[1.0 / 3.0, 0.0, 0.0]);
    }
}
