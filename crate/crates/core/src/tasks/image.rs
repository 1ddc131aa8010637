//! 2D image regression on a procedural RGB test card. Training pixels form a
//! regular 2x2-strided lattice (one quarter of all pixels); the rest are held
//! out to measure interpolation. The card mixes smooth color gradients with
//! sharp structure (a disc edge, a checker field, concentric rings) so that
//! memorization-heavy models show their expressive power on the train split
//! while interpolation quality separates on the held-out split.

use super::fit::EvalMetrics;
use super::{gather_rows, metrics};
use crate::diffcore::Batch;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::models::Model;
use std::f64::consts::PI;

#[derive(Clone, Debug)]
pub struct ImageTask {
    pub height: usize,
    pub width: usize,
    /// Stride of the train lattice per dimension (2 for factor-4 sampling).
    pub stride: usize,
    /// Row-major (height*width) x 3 ground truth in [0,1].
    pub pixels: Mat,
    /// Row-major (height*width) x 2 coordinates (row/h, col/w). With even
    /// sizes the strided train lattice lands exactly on the nodes of a
    /// (h/stride+1, w/stride+1) key table; held-out pixels fall inside cells.
    pub coords: Mat,
    pub train_idx: Vec<usize>,
    pub heldout_idx: Vec<usize>,
    pub train: Batch,
}

/// What the ground-truth image contains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageContent {
    /// The procedural test card below.
    Procedural,
    /// A single flat color, used for exact-convergence checks.
    Constant,
}

const CONSTANT_COLOR: [f64; 3] = [0.5, 0.35, 0.7];

/// Procedural test card, a pure function of the pixel grid.
pub fn procedural_pixel(y: f64, x: f64) -> [f64; 3] {
    // Smooth base gradients.
    let mut r = 0.5 + 0.33 * (2.0 * PI * (1.3 * x + 0.6 * y)).sin();
    let mut g = 0.5 + 0.33 * (2.0 * PI * (0.5 * x - 1.5 * y) + 1.1).sin();
    let mut b = 0.5 + 0.33 * (2.0 * PI * (0.9 * x * y + 0.4 * x + 0.2)).cos();

    // Concentric rings around the upper-left third (wavelength ~8 px at 64x64).
    let d1 = ((x - 0.32).powi(2) + (y - 0.36).powi(2)).sqrt();
    let ring = 0.18 * (2.0 * PI * 8.0 * d1).sin();
    r += ring;
    g += 0.5 * ring;

    // A hard-edged disc in the lower right.
    let d2 = ((x - 0.72).powi(2) + (y - 0.68).powi(2)).sqrt();
    if d2 < 0.17 {
        r = 0.15 + 0.2 * ring;
        g = 0.75;
        b = 0.25;
    }

    // A quantized checker field in the lower-left corner (cells of 1/8).
    if x < 0.45 && y > 0.55 {
        let cell = ((x * 8.0).floor() + (y * 8.0).floor()) as i64;
        let shift = if cell % 2 == 0 { 0.22 } else { -0.22 };
        r += shift;
        g += shift;
        b -= shift;
    }

    [r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0)]
}

impl ImageTask {
    pub fn new(height: usize, width: usize, sampling_factor: usize) -> Result<ImageTask> {
        ImageTask::with_content(ImageContent::Procedural, height, width, sampling_factor)
    }

    /// `sampling_factor` is the train-set dilution: a factor f keeps 1/f of
    /// the pixels on a sqrt(f)-strided lattice, so it must be a square.
    pub fn with_content(
        content: ImageContent,
        height: usize,
        width: usize,
        sampling_factor: usize,
    ) -> Result<ImageTask> {
        if height < 2 || width < 2 {
            return Err(Error::Config("image needs at least 2x2 pixels".into()));
        }
        let stride = (sampling_factor as f64).sqrt().round() as usize;
        if stride == 0 || stride * stride != sampling_factor {
            return Err(Error::Config(format!(
                "sampling factor must be a perfect square, got {sampling_factor}"
            )));
        }
        let n = height * width;
        let mut pixels = Mat::zeros(n, 3);
        let mut coords = Mat::zeros(n, 2);
        let mut train_idx = Vec::new();
        let mut heldout_idx = Vec::new();
        for row in 0..height {
            for col in 0..width {
                let i = row * width + col;
                let y = row as f64 / height as f64;
                let x = col as f64 / width as f64;
                coords.set(i, 0, y);
                coords.set(i, 1, x);
                let px = match content {
                    ImageContent::Procedural => procedural_pixel(y, x),
                    ImageContent::Constant => CONSTANT_COLOR,
                };
                pixels.row_mut(i).copy_from_slice(&px);
                if row % stride == 0 && col % stride == 0 {
                    train_idx.push(i);
                } else {
                    heldout_idx.push(i);
                }
            }
        }
        let train = Batch::new(gather_rows(&coords, &train_idx), gather_rows(&pixels, &train_idx))?;
        Ok(ImageTask { height, width, stride, pixels, coords, train_idx, heldout_idx, train })
    }

    pub fn is_heldout(&self, coord: &[f64]) -> bool {
        let u0 = coord[0] * self.height as f64;
        let u1 = coord[1] * self.width as f64;
        let (r0, r1) = (u0.round(), u1.round());
        if (u0 - r0).abs() >= 1e-9 || (u1 - r1).abs() >= 1e-9 {
            return false;
        }
        (r0 as usize) % self.stride != 0 || (r1 as usize) % self.stride != 0
    }

    pub fn evaluate(&self, model: &Model) -> Result<EvalMetrics> {
        let pred = model.predict(&self.coords)?;
        let tr_pred = gather_rows(&pred, &self.train_idx);
        let tr_gt = gather_rows(&self.pixels, &self.train_idx);
        let (heldout_mse, heldout_psnr) = if self.heldout_idx.is_empty() {
            (None, None)
        } else {
            let ho_pred = gather_rows(&pred, &self.heldout_idx);
            let ho_gt = gather_rows(&self.pixels, &self.heldout_idx);
            (
                Some(metrics::clamped_mse(&ho_pred, &ho_gt, 1.0)?),
                Some(metrics::psnr(&ho_pred, &ho_gt, 1.0)?),
            )
        };
        Ok(EvalMetrics {
            train_mse: Some(metrics::clamped_mse(&tr_pred, &tr_gt, 1.0)?),
            train_psnr: Some(metrics::psnr(&tr_pred, &tr_gt, 1.0)?),
            heldout_mse,
            heldout_psnr,
            iou: None,
        })
    }

    /// Full-grid prediction as 8-bit RGB rows, round-half-up quantization.
    pub fn render(&self, model: &Model) -> Result<Vec<u8>> {
        let pred = model.predict(&self.coords)?;
        Ok(pred
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_4_train_count_is_exact() {
        for (h, w) in [(64, 64), (63, 65), (8, 8)] {
            let t = ImageTask::new(h, w, 4).unwrap();
            assert_eq!(t.train_idx.len(), h.div_ceil(2) * w.div_ceil(2), "{h}x{w}");
            assert_eq!(t.train_idx.len() + t.heldout_idx.len(), h * w);
        }
    }

    #[test]
    fn train_lattice_is_even_rows_and_columns() {
        let t = ImageTask::new(16, 16, 4).unwrap();
        for &i in &t.train_idx {
            let (row, col) = (i / 16, i % 16);
            assert!(row % 2 == 0 && col % 2 == 0);
        }
    }

    #[test]
    fn factor_1_trains_on_everything() {
        let t = ImageTask::new(8, 8, 1).unwrap();
        assert_eq!(t.train_idx.len(), 64);
        assert!(t.heldout_idx.is_empty());
    }

    #[test]
    fn non_square_factor_is_config_error() {
        assert_eq!(ImageTask::new(8, 8, 3).unwrap_err().kind(), "config");
    }

    #[test]
    fn pixels_stay_in_unit_range() {
        let t = ImageTask::new(64, 64, 4).unwrap();
        assert!(t.pixels.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn constant_content_is_flat() {
        let t = ImageTask::with_content(ImageContent::Constant, 8, 8, 4).unwrap();
        for i in 0..64 {
            assert_eq!(t.pixels.row(i), &CONSTANT_COLOR);
        }
    }

    #[test]
    fn heldout_membership_matches_split() {
        let t = ImageTask::new(16, 16, 4).unwrap();
        assert!(t.is_heldout(t.coords.row(t.heldout_idx[0])));
        assert!(!t.is_heldout(t.coords.row(t.train_idx[0])));
    }
}
