//! Inspection instruments for a trained model: a 2D sweep of the trunk over
//! its (feature, transform) input plane, and a finite-difference continuity
//! profile along a coordinate segment.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::models::Model;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Selects a 2D slice through a trunk whose input is wider than two
/// columns: sweep `dim_x` and `dim_y`, pin every other input to `fixed`.
#[derive(Clone, Debug)]
pub struct SliceSpec {
    pub dim_x: usize,
    pub dim_y: usize,
    /// One value per trunk input column; the swept columns are ignored.
    pub fixed: Vec<f64>,
}

/// Per-axis sweep range, padded 5% beyond the observed values.
fn sweep_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (-0.5, 0.5);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Sweeps the trunk on an m x m lattice spanning the branch-input values
/// observed at the training and held-out coordinates, writing raster.csv,
/// raster.png and points.csv into `out_dir`. Trunks wider than two inputs
/// need a `SliceSpec`; trunks narrower than two cannot be sliced.
pub fn export_slices(
    model: &Model,
    train_coords: &Mat,
    heldout_coords: &Mat,
    m: usize,
    spec: Option<&SliceSpec>,
    out_dir: &Path,
) -> Result<()> {
    let width = model.trunk_in_width();
    if width < 2 {
        return Err(Error::Config(format!(
            "slicing needs a trunk with at least 2 inputs, this model has {width}"
        )));
    }
    if width > 2 && spec.is_none() {
        return Err(Error::Config(format!(
            "trunk takes {width} inputs; a 2D slice spec fixing the others is required"
        )));
    }
    if m < 2 {
        return Err(Error::Config("slice lattice needs at least 2 samples per axis".into()));
    }
    let default_spec = SliceSpec { dim_x: 0, dim_y: 1, fixed: vec![0.0; width] };
    let spec = spec.unwrap_or(&default_spec);
    if spec.dim_x >= width || spec.dim_y >= width || spec.dim_x == spec.dim_y {
        return Err(Error::Config(format!(
            "slice dims ({}, {}) invalid for a {width}-input trunk",
            spec.dim_x, spec.dim_y
        )));
    }
    if spec.fixed.len() != width {
        return Err(Error::Config(format!(
            "slice spec fixes {} values but the trunk takes {width}",
            spec.fixed.len()
        )));
    }

    let b_train = model.branch_inputs(train_coords)?;
    let b_held = if heldout_coords.rows() > 0 {
        Some(model.branch_inputs(heldout_coords)?)
    } else {
        None
    };
    let col = |m: &Mat, c: usize| -> Vec<f64> { (0..m.rows()).map(|r| m.get(r, c)).collect() };
    let mut xs = col(&b_train, spec.dim_x);
    let mut ys = col(&b_train, spec.dim_y);
    if let Some(bh) = &b_held {
        xs.extend(col(bh, spec.dim_x));
        ys.extend(col(bh, spec.dim_y));
    }
    let (x_lo, x_hi) = sweep_range(xs.iter().copied());
    let (y_lo, y_hi) = sweep_range(ys.iter().copied());

    let mut lattice = Mat::zeros(m * m, width);
    for iy in 0..m {
        let y = y_lo + (y_hi - y_lo) * iy as f64 / (m - 1) as f64;
        for ix in 0..m {
            let x = x_lo + (x_hi - x_lo) * ix as f64 / (m - 1) as f64;
            let row = lattice.row_mut(iy * m + ix);
            row.copy_from_slice(&spec.fixed);
            row[spec.dim_x] = x;
            row[spec.dim_y] = y;
        }
    }
    let out = model.trunk_eval(&lattice)?;

    fs::create_dir_all(out_dir)?;
    let mut csv = String::from("ix,iy,x,y");
    for c in 0..out.cols() {
        write!(csv, ",out{c}").unwrap();
    }
    csv.push('\n');
    for iy in 0..m {
        for ix in 0..m {
            let r = iy * m + ix;
            write!(csv, "{ix},{iy},{},{}", lattice.get(r, spec.dim_x), lattice.get(r, spec.dim_y))
                .unwrap();
            for c in 0..out.cols() {
                write!(csv, ",{}", out.get(r, c)).unwrap();
            }
            csv.push('\n');
        }
    }
    fs::write(out_dir.join("raster.csv"), csv)?;

    let png = out_dir.join("raster.png");
    if out.cols() == 3 {
        let mut buf = Vec::with_capacity(m * m * 3);
        for r in 0..m * m {
            for c in 0..3 {
                buf.push(quantize(out.get(r, c)));
            }
        }
        let img = image::RgbImage::from_raw(m as u32, m as u32, buf)
            .expect("buffer sized to lattice");
        img.save(&png).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    } else {
        // Single channel, normalized over the raster (flat raster -> mid gray).
        let (lo, hi) = sweep_range((0..m * m).map(|r| out.get(r, 0)));
        let mut buf = Vec::with_capacity(m * m);
        for r in 0..m * m {
            buf.push(quantize((out.get(r, 0) - lo) / (hi - lo)));
        }
        let img = image::GrayImage::from_raw(m as u32, m as u32, buf)
            .expect("buffer sized to lattice");
        img.save(&png).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }

    let mut pts = String::from("split,x,y\n");
    let mut dump = |label: &str, b: &Mat| {
        for r in 0..b.rows() {
            writeln!(pts, "{label},{},{}", b.get(r, spec.dim_x), b.get(r, spec.dim_y)).unwrap();
        }
    };
    dump("train", &b_train);
    if let Some(bh) = &b_held {
        dump("heldout", bh);
    }
    fs::write(out_dir.join("points.csv"), pts)?;
    Ok(())
}

/// Finite-difference slopes |f(x_{k+1}) - f(x_k)| / |x_{k+1} - x_k| at
/// `samples` evenly spaced points from `a` to `b` (returns samples-1
/// slopes; vector outputs use the Euclidean norm of the difference).
pub fn continuity_profile(model: &Model, a: &[f64], b: &[f64], samples: usize) -> Result<Vec<f64>> {
    if a.len() != model.d_in || b.len() != model.d_in {
        return Err(Error::Config(format!(
            "segment endpoints must have {} coordinates",
            model.d_in
        )));
    }
    if samples < 2 {
        return Err(Error::Config("continuity profile needs at least 2 samples".into()));
    }
    let seg_len: f64 = a.iter().zip(b).map(|(p, q)| (q - p).powi(2)).sum::<f64>().sqrt();
    if seg_len == 0.0 {
        return Err(Error::Usage("continuity profile segment is degenerate".into()));
    }
    let mut coords = Mat::zeros(samples, model.d_in);
    for k in 0..samples {
        let t = k as f64 / (samples - 1) as f64;
        for (j, v) in coords.row_mut(k).iter_mut().enumerate() {
            *v = a[j] + t * (b[j] - a[j]);
        }
    }
    let pred = model.predict(&coords)?;
    let step = seg_len / (samples - 1) as f64;
    Ok((0..samples - 1)
        .map(|k| {
            let d: f64 = pred
                .row(k)
                .iter()
                .zip(pred.row(k + 1))
                .map(|(u, v)| (v - u).powi(2))
                .sum::<f64>()
                .sqrt();
            d / step
        })
        .collect())
}

/// One slope per line, indexed by the left sample of its interval.
pub fn profile_csv(slopes: &[f64]) -> String {
    let mut out = String::from("k,slope\n");
    for (k, s) in slopes.iter().enumerate() {
        writeln!(out, "{k},{s}").unwrap();
    }
    out
}
