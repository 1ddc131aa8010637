//! 1D piecewise-constant color stripe. Even positions train, odd positions
//! are held out, so every interior held-out point has a trained neighbor on
//! each side and interpolation quality is isolated from extrapolation.

use super::fit::EvalMetrics;
use super::{gather_rows, metrics};
use crate::diffcore::Batch;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::models::Model;

/// Eight visually distinct band colors, cycled when there are more bands.
const PALETTE: [[f64; 3]; 8] = [
    [0.90, 0.10, 0.15],
    [0.10, 0.75, 0.20],
    [0.15, 0.25, 0.90],
    [0.95, 0.85, 0.10],
    [0.85, 0.15, 0.85],
    [0.10, 0.80, 0.90],
    [0.95, 0.55, 0.10],
    [0.20, 0.20, 0.22],
];

#[derive(Clone, Debug)]
pub struct StripeTask {
    pub n_points: usize,
    pub band_width: usize,
    /// All n coordinates (x = i/n) and their colors. With even n the trained
    /// (even) positions land exactly on the nodes of a (n/2+1)-entry key
    /// table and the held-out (odd) positions land exactly mid-cell.
    pub coords: Mat,
    pub colors: Mat,
    pub train_idx: Vec<usize>,
    pub heldout_idx: Vec<usize>,
    pub train: Batch,
}

impl StripeTask {
    pub fn new(n_points: usize, band_width: usize) -> Result<StripeTask> {
        if n_points < 4 {
            return Err(Error::Config("stripe needs at least 4 points".into()));
        }
        if band_width == 0 {
            return Err(Error::Config("stripe band width must be >= 1".into()));
        }
        let mut coords = Mat::zeros(n_points, 1);
        let mut colors = Mat::zeros(n_points, 3);
        for i in 0..n_points {
            coords.set(i, 0, i as f64 / n_points as f64);
            colors.row_mut(i).copy_from_slice(&PALETTE[(i / band_width) % PALETTE.len()]);
        }
        let train_idx: Vec<usize> = (0..n_points).step_by(2).collect();
        let heldout_idx: Vec<usize> = (1..n_points).step_by(2).collect();
        let train = Batch::new(gather_rows(&coords, &train_idx), gather_rows(&colors, &train_idx))?;
        Ok(StripeTask { n_points, band_width, coords, colors, train_idx, heldout_idx, train })
    }

    /// Held-out points are the odd grid positions.
    pub fn is_heldout(&self, coord: &[f64]) -> bool {
        let u = coord[0] * self.n_points as f64;
        let i = u.round();
        (u - i).abs() < 1e-9 && (i as usize) % 2 == 1
    }

    pub fn evaluate(&self, model: &Model) -> Result<EvalMetrics> {
        let pred = model.predict(&self.coords)?;
        let tr_pred = gather_rows(&pred, &self.train_idx);
        let tr_gt = gather_rows(&self.colors, &self.train_idx);
        let ho_pred = gather_rows(&pred, &self.heldout_idx);
        let ho_gt = gather_rows(&self.colors, &self.heldout_idx);
        Ok(EvalMetrics {
            train_mse: Some(metrics::clamped_mse(&tr_pred, &tr_gt, 1.0)?),
            train_psnr: Some(metrics::psnr(&tr_pred, &tr_gt, 1.0)?),
            heldout_mse: Some(metrics::clamped_mse(&ho_pred, &ho_gt, 1.0)?),
            heldout_psnr: Some(metrics::psnr(&ho_pred, &ho_gt, 1.0)?),
            iou: None,
        })
    }
}
