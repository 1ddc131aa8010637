//! Minimal reverse-mode differentiation: named parameter buffers, dense
//! layers, elementwise activations, column concatenation, and MSE loss.
//!
//! There is no tape. Every model in this crate is a fixed feed-forward
//! composition, so each building block carries its own forward context and an
//! explicit backward rule. Gradients accumulate with `+=` and are zeroed by
//! the caller; this lets two branches that share a downstream trunk both
//! deposit into the same buffers.

use crate::error::{Error, Result};
use crate::mat::Mat;

/// A named, flat buffer of trainable values with a paired gradient buffer.
/// `grads` always has exactly the length of `values`.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
    pub shape: (usize, usize),
}

impl Parameter {
    pub fn new(name: &str, shape: (usize, usize), values: Vec<f64>) -> Parameter {
        assert_eq!(values.len(), shape.0 * shape.1, "values length must equal rows*cols");
        let grads = vec![0.0; values.len()];
        Parameter { name: name.to_string(), values, grads, shape }
    }

    pub fn zeros(name: &str, shape: (usize, usize)) -> Parameter {
        Parameter::new(name, shape, vec![0.0; shape.0 * shape.1])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// NaN/Inf anywhere in values or grads is a detectable error state.
    pub fn check_finite(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter '{}' has non-finite values", self.name)));
        }
        if self.grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("parameter '{}' has non-finite grads", self.name)));
        }
        Ok(())
    }
}

/// A supervised batch: coordinates in [0,1]^d_in paired with target attributes.
#[derive(Clone, Debug)]
pub struct Batch {
    pub coords: Mat,
    pub attrs: Mat,
}

impl Batch {
    pub fn new(coords: Mat, attrs: Mat) -> Result<Batch> {
        if coords.rows() == 0 {
            return Err(Error::Usage("batch must contain at least one sample".into()));
        }
        if coords.rows() != attrs.rows() {
            return Err(Error::Config(format!(
                "batch coords rows {} != attrs rows {}",
                coords.rows(),
                attrs.rows()
            )));
        }
        check_domain(&coords)?;
        Ok(Batch { coords, attrs })
    }

    pub fn len(&self) -> usize {
        self.coords.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.rows() == 0
    }
}

/// Rejects any coordinate outside [0,1].
pub fn check_domain(coords: &Mat) -> Result<()> {
    for r in 0..coords.rows() {
        for (k, &v) in coords.row(r).iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!(
                    "coordinate {v} at row {r}, dim {k} is outside [0,1]"
                )));
            }
        }
    }
    Ok(())
}

/// Elementwise activation. `sine` carries its frequency scale w0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    Sine(f64),
    Identity,
}

impl Activation {
    pub fn sine(w0: f64) -> Result<Activation> {
        if w0 > 0.0 {
            Ok(Activation::Sine(w0))
        } else {
            Err(Error::Config(format!("sine activation requires w0 > 0, got {w0}")))
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sine(w0) => (w0 * x).sin(),
            Activation::Identity => x,
        }
    }

    /// Derivative at the pre-activation. The relu subgradient at exactly 0 is 0.
    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sine(w0) => w0 * (w0 * x).cos(),
            Activation::Identity => 1.0,
        }
    }
}

/// Dense layer y = W x + b with weight shape (out, in), bias length out.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: Parameter,
    pub b: Parameter,
    ctx: Option<Mat>,
}

impl Linear {
    pub fn from_params(w: Parameter, b: Parameter) -> Result<Linear> {
        if b.len() != w.shape.0 {
            return Err(Error::Config(format!(
                "bias length {} does not match weight rows {}",
                b.len(),
                w.shape.0
            )));
        }
        Ok(Linear { w, b, ctx: None })
    }

    pub fn d_in(&self) -> usize {
        self.w.shape.1
    }

    pub fn d_out(&self) -> usize {
        self.w.shape.0
    }

    /// Forward pass that retains the input for a later backward.
    pub fn forward(&mut self, input: &Mat) -> Result<Mat> {
        let out = self.forward_frozen(input)?;
        self.ctx = Some(input.clone());
        Ok(out)
    }

    /// Pure forward pass: no context is retained, safe on a shared reference.
    pub fn forward_frozen(&self, input: &Mat) -> Result<Mat> {
        let (d_out, d_in) = self.w.shape;
        if input.cols() != d_in {
            return Err(Error::Config(format!(
                "linear '{}' expects {} input columns, got {}",
                self.w.name,
                d_in,
                input.cols()
            )));
        }
        let mut out = Mat::zeros(input.rows(), d_out);
        for r in 0..input.rows() {
            let x = input.row(r);
            let o = out.row_mut(r);
            for j in 0..d_out {
                let wrow = &self.w.values[j * d_in..(j + 1) * d_in];
                let mut acc = self.b.values[j];
                for i in 0..d_in {
                    acc += wrow[i] * x[i];
                }
                o[j] = acc;
            }
        }
        Ok(out)
    }

    /// Accumulates into `w.grads` and `b.grads`, returns the input gradient.
    pub fn backward(&mut self, upstream: &Mat) -> Result<Mat> {
        let input = self.ctx.as_ref().ok_or_else(|| {
            Error::Usage(format!("linear '{}': backward without a prior forward", self.w.name))
        })?;
        let (d_out, d_in) = self.w.shape;
        if upstream.cols() != d_out || upstream.rows() != input.rows() {
            return Err(Error::Config(format!(
                "linear '{}' backward expects {}x{} upstream, got {}x{}",
                self.w.name,
                input.rows(),
                d_out,
                upstream.rows(),
                upstream.cols()
            )));
        }
        let mut dinput = Mat::zeros(input.rows(), d_in);
        for r in 0..input.rows() {
            let x = input.row(r);
            let up = upstream.row(r);
            let dx = dinput.row_mut(r);
            for j in 0..d_out {
                let g = up[j];
                self.b.grads[j] += g;
                let wrow = &self.w.values[j * d_in..(j + 1) * d_in];
                let gwrow = &mut self.w.grads[j * d_in..(j + 1) * d_in];
                for i in 0..d_in {
                    gwrow[i] += g * x[i];
                    dx[i] += g * wrow[i];
                }
            }
        }
        Ok(dinput)
    }
}

/// Activation layer that retains its pre-activation input for backward.
#[derive(Clone, Debug)]
pub struct ActLayer {
    pub act: Activation,
    ctx: Option<Mat>,
}

impl ActLayer {
    pub fn new(act: Activation) -> ActLayer {
        ActLayer { act, ctx: None }
    }

    pub fn forward(&mut self, input: &Mat) -> Mat {
        let out = self.forward_frozen(input);
        self.ctx = Some(input.clone());
        out
    }

    pub fn forward_frozen(&self, input: &Mat) -> Mat {
        let mut out = input.clone();
        out.data_mut().iter_mut().for_each(|v| *v = self.act.apply(*v));
        out
    }

    pub fn backward(&mut self, upstream: &Mat) -> Result<Mat> {
        let input = self
            .ctx
            .as_ref()
            .ok_or_else(|| Error::Usage("activation: backward without a prior forward".into()))?;
        if upstream.rows() != input.rows() || upstream.cols() != input.cols() {
            return Err(Error::Config("activation backward shape mismatch".into()));
        }
        let mut out = input.clone();
        for (o, u) in out.data_mut().iter_mut().zip(upstream.data()) {
            *o = self.act.deriv(*o) * u;
        }
        Ok(out)
    }
}

/// Column-wise concatenation, `a`'s columns first.
pub fn concat_forward(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.rows() != b.rows() {
        return Err(Error::Config(format!(
            "concat row mismatch: {} vs {}",
            a.rows(),
            b.rows()
        )));
    }
    let mut out = Mat::zeros(a.rows(), a.cols() + b.cols());
    for r in 0..a.rows() {
        let o = out.row_mut(r);
        o[..a.cols()].copy_from_slice(a.row(r));
        o[a.cols()..].copy_from_slice(b.row(r));
    }
    Ok(out)
}

/// Routes upstream columns [0,p) to the first branch and [p,..) to the second.
pub fn concat_backward(upstream: &Mat, p: usize) -> Result<(Mat, Mat)> {
    if p > upstream.cols() {
        return Err(Error::Config(format!(
            "concat split point {} exceeds {} columns",
            p,
            upstream.cols()
        )));
    }
    Ok((upstream.columns(0, p), upstream.columns(p, upstream.cols() - p)))
}

/// Mean squared error over all n*d entries, with its gradient w.r.t. `pred`.
pub fn mse_loss(pred: &Mat, target: &Mat) -> Result<(f64, Mat)> {
    if pred.rows() != target.rows() || pred.cols() != target.cols() {
        return Err(Error::Config(format!(
            "mse shape mismatch: {}x{} vs {}x{}",
            pred.rows(),
            pred.cols(),
            target.rows(),
            target.cols()
        )));
    }
    if pred.rows() == 0 {
        return Err(Error::Usage("mse over an empty batch".into()));
    }
    let n = (pred.rows() * pred.cols()) as f64;
    let mut grad = pred.clone();
    let mut loss = 0.0;
    for (g, t) in grad.data_mut().iter_mut().zip(target.data()) {
        let diff = *g - t;
        loss += diff * diff;
        *g = 2.0 / n * diff;
    }
    Ok((loss / n, grad))
}
