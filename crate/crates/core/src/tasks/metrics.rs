//! Reconstruction metrics. Color predictions are clamped to [0, peak] before
//! comparison; the optimization loss never clamps.

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Mean squared error after clamping predictions to [0, peak].
pub fn clamped_mse(pred: &Mat, gt: &Mat, peak: f64) -> Result<f64> {
    if pred.rows() != gt.rows() || pred.cols() != gt.cols() {
        return Err(Error::Config(format!(
            "metric shape mismatch: {}x{} vs {}x{}",
            pred.rows(),
            pred.cols(),
            gt.rows(),
            gt.cols()
        )));
    }
    if pred.rows() == 0 {
        return Err(Error::Usage("metric over an empty set".into()));
    }
    let n = (pred.rows() * pred.cols()) as f64;
    let mut acc = 0.0;
    for (p, g) in pred.data().iter().zip(gt.data()) {
        let d = p.clamp(0.0, peak) - g;
        acc += d * d;
    }
    Ok(acc / n)
}

/// Peak signal-to-noise ratio in dB, capped at 100 (exact reconstruction).
pub fn psnr(pred: &Mat, gt: &Mat, peak: f64) -> Result<f64> {
    let mse = clamped_mse(pred, gt, peak)?;
    if mse.is_nan() {
        return Ok(f64::NAN);
    }
    if mse == 0.0 {
        return Ok(100.0);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(100.0))
}

/// Intersection-over-union of occupancy (value <= 0) between two signed
/// distance grids. An empty union counts as perfect agreement.
pub fn iou(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Config(format!(
            "iou grid size mismatch: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        let (po, go) = (p <= 0.0, g <= 0.0);
        if po && go {
            inter += 1;
        }
        if po || go {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_exact_match_caps_at_100() {
        let a = Mat::from_vec(2, 2, vec![0.1, 0.5, 0.9, 0.3]);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), 100.0);
    }

    #[test]
    fn psnr_uniform_errors() {
        let gt = Mat::from_vec(2, 2, vec![0.5; 4]);
        let p1 = Mat::from_vec(2, 2, vec![0.6; 4]);
        assert!((psnr(&p1, &gt, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let p2 = Mat::from_vec(2, 2, vec![0.51; 4]);
        assert!((psnr(&p2, &gt, 1.0).unwrap() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_clamps_predictions_first() {
        let gt = Mat::from_vec(1, 1, vec![1.0]);
        let wild = Mat::from_vec(1, 1, vec![25.0]);
        assert_eq!(psnr(&wild, &gt, 1.0).unwrap(), 100.0);
    }

    #[test]
    fn psnr_monotone_in_error() {
        let gt = Mat::from_vec(1, 3, vec![0.5; 3]);
        let mut last = f64::INFINITY;
        for e in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let p = Mat::from_vec(1, 3, vec![0.5 + e; 3]);
            let v = psnr(&p, &gt, 1.0).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn iou_examples() {
        let a = vec![-1.0, -1.0, 1.0, 1.0];
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let b = vec![1.0, 1.0, -1.0, -1.0];
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn iou_counting_case() {
        // pred occupies cells [0,10), gt occupies [5,15) on a 20-cell line:
        // overlap 5, union 15.
        let pred: Vec<f64> = (0..20).map(|i| if i < 10 { -1.0 } else { 1.0 }).collect();
        let gt: Vec<f64> = (0..20).map(|i| if (5..15).contains(&i) { -1.0 } else { 1.0 }).collect();
        assert_eq!(iou(&pred, &gt).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn iou_empty_union_is_one() {
        let a = vec![1.0, 2.0];
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }
}
