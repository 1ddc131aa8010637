//! Experiment drivers: supervised coordinate->attribute datasets with a
//! train/held-out split, their metrics, the training loop, and the slicing
//! and continuity diagnostics.

pub mod diagnostics;
pub mod fit;
pub mod image;
pub mod metrics;
pub mod sdf;
pub mod stripe;

use crate::diffcore::Batch;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::models::Model;
use fit::EvalMetrics;
pub use image::{ImageContent, ImageTask};
pub use sdf::{SdfShape, SdfTask};
pub use stripe::StripeTask;

/// A fittable dataset. Stripe and image hold a fixed train split; the SDF
/// task draws a fresh point batch every iteration.
#[derive(Clone, Debug)]
pub enum Task {
    Stripe(StripeTask),
    Image(ImageTask),
    Sdf(SdfTask),
}

impl Task {
    pub fn d_in(&self) -> usize {
        match self {
            Task::Stripe(_) => 1,
            Task::Image(_) => 2,
            Task::Sdf(_) => 3,
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Task::Stripe(_) | Task::Image(_) => 3,
            Task::Sdf(_) => 1,
        }
    }

    /// Node counts for a key table with one node per training lattice point
    /// (plus the closing node at 1.0). When the stride divides the grid size
    /// the training coordinates sit exactly on table nodes, so lookups there
    /// reduce to exact per-sample keys, while held-out coordinates fall
    /// strictly inside cells and read interpolated keys. The SDF task trains
    /// on random points, so its table simply matches the evaluation grid.
    pub fn table_resolution(&self) -> Vec<usize> {
        match self {
            Task::Stripe(t) => vec![t.n_points / 2 + 1],
            Task::Image(t) => vec![t.height / t.stride + 1, t.width / t.stride + 1],
            Task::Sdf(t) => vec![t.grid; 3],
        }
    }

    /// The fixed training set, or None when batches are drawn per iteration.
    pub fn train_set(&self) -> Option<&Batch> {
        match self {
            Task::Stripe(t) => Some(&t.train),
            Task::Image(t) => Some(&t.train),
            Task::Sdf(_) => None,
        }
    }

    pub fn sample_batch(&self, seed: u64, iter: usize) -> Result<Batch> {
        match self {
            Task::Sdf(t) => t.sample_batch(seed, iter),
            _ => Err(Error::Usage("only the sdf task samples per-iteration batches".into())),
        }
    }

    /// True if the coordinate belongs to the held-out split. Feeds the
    /// per-batch split-discipline assertion.
    pub fn is_heldout(&self, coord: &[f64]) -> bool {
        match self {
            Task::Stripe(t) => t.is_heldout(coord),
            Task::Image(t) => t.is_heldout(coord),
            Task::Sdf(_) => false,
        }
    }

    /// Full evaluation on a frozen model: train/held-out PSNR and clamped
    /// MSE for color signals, occupancy IoU for the SDF.
    pub fn evaluate(&self, model: &Model) -> Result<EvalMetrics> {
        match self {
            Task::Stripe(t) => t.evaluate(model),
            Task::Image(t) => t.evaluate(model),
            Task::Sdf(t) => t.evaluate(model),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Task::Stripe(_) => "stripe",
            Task::Image(_) => "image",
            Task::Sdf(_) => "sdf",
        }
    }
}

/// Gathers the listed rows of a matrix into a new matrix.
pub(crate) fn gather_rows(m: &Mat, idx: &[usize]) -> Mat {
    let mut out = Mat::zeros(idx.len(), m.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(m.row(i));
    }
    out
}
