//! Model assembly: a coordinate encoder, an optional analytical branch T(x),
//! and a shared MLP trunk.
//!
//! Gradient routing is the point of the exercise. Continuous encoders (the
//! identity, the Fourier encoding, and T) propagate coordinate gradients;
//! table lookups do not. A model's `backward` therefore returns the
//! coordinate gradient as an `Option`: `None` means no path from output to
//! coordinate exists, which is the structural signature of the pure lookup
//! models (`diner`, `ngp`).

use crate::diffcore::{
    check_domain, concat_backward, concat_forward, ActLayer, Activation, Linear, Parameter,
};
use crate::encodings::{FullResTable, GridParams, MultiResHashGrid, PositionalEncoding};
use crate::error::{Error, Result};
use crate::mat::Mat;
use rand::Rng;
use std::fmt;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

/// Hidden width of the analytical branch.
const T_HIDDEN_WIDTH: usize = 64;

/// Rows evaluated per chunk during pure prediction, to bound transient memory
/// on large evaluation grids.
const PREDICT_CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Siren,
    PeMlp,
    Diner,
    Ngp,
    RhinoDiner,
    RhinoNgp,
}

impl ModelKind {
    pub fn all() -> [ModelKind; 6] {
        [
            ModelKind::Siren,
            ModelKind::PeMlp,
            ModelKind::Diner,
            ModelKind::Ngp,
            ModelKind::RhinoDiner,
            ModelKind::RhinoNgp,
        ]
    }

    /// Kinds carrying the analytical branch alongside a lookup encoder.
    pub fn is_rhino(self) -> bool {
        matches!(self, ModelKind::RhinoDiner | ModelKind::RhinoNgp)
    }

    /// Kinds whose first layer is a learned lookup (no coordinate gradient).
    pub fn uses_lookup(self) -> bool {
        matches!(
            self,
            ModelKind::Diner | ModelKind::Ngp | ModelKind::RhinoDiner | ModelKind::RhinoNgp
        )
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<ModelKind> {
        match s {
            "siren" => Ok(ModelKind::Siren),
            "pe_mlp" => Ok(ModelKind::PeMlp),
            "diner" => Ok(ModelKind::Diner),
            "ngp" => Ok(ModelKind::Ngp),
            "rhino_diner" => Ok(ModelKind::RhinoDiner),
            "rhino_ngp" => Ok(ModelKind::RhinoNgp),
            other => Err(Error::Config(format!(
                "unknown model kind '{other}' (expected siren, pe_mlp, diner, ngp, rhino_diner, rhino_ngp)"
            ))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::Siren => "siren",
            ModelKind::PeMlp => "pe_mlp",
            ModelKind::Diner => "diner",
            ModelKind::Ngp => "ngp",
            ModelKind::RhinoDiner => "rhino_diner",
            ModelKind::RhinoNgp => "rhino_ngp",
        };
        f.write_str(s)
    }
}

/// What stands in for T(x) on rhino kinds. `Identity` passes the coordinate
/// through unchanged; `Disabled` removes the branch entirely, reducing a
/// rhino model to its backbone (identical widths and weight draws).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformKind {
    Mlp,
    Identity,
    Disabled,
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<TransformKind> {
        match s {
            "mlp" => Ok(TransformKind::Mlp),
            "identity" => Ok(TransformKind::Identity),
            "disabled" => Ok(TransformKind::Disabled),
            other => Err(Error::Config(format!(
                "unknown transform '{other}' (expected mlp, identity, disabled)"
            ))),
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformKind::Mlp => "mlp",
            TransformKind::Identity => "identity",
            TransformKind::Disabled => "disabled",
        })
    }
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    /// Feature width F of table and grid entries.
    pub feature_width: usize,
    /// Node counts per dim for the full-resolution table; set by the task.
    pub table_resolution: Vec<usize>,
    pub num_levels: usize,
    pub log2_table_size: u32,
    pub base_resolution: usize,
    pub growth_factor: f64,
    /// Frequencies L of the Fourier encoding used as the pe_mlp preprocess.
    pub pe_num_freqs: usize,
    /// Frequencies of the Fourier encoding inside the T branch. Kept low
    /// relative to the training lattice so T stays smooth between training
    /// points; detail belongs to the hash features it accompanies.
    pub transform_num_freqs: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub siren_w0: f64,
    pub transform: TransformKind,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            feature_width: 2,
            table_resolution: Vec::new(),
            num_levels: 8,
            log2_table_size: 14,
            base_resolution: 16,
            growth_factor: 1.5,
            pe_num_freqs: 10,
            transform_num_freqs: 10,
            hidden_layers: 2,
            hidden_width: 64,
            siren_w0: 30.0,
            transform: TransformKind::Mlp,
        }
    }
}

/// First-layer feature map.
#[derive(Clone, Debug)]
pub enum Encoder {
    Identity { d_in: usize },
    Pe(PositionalEncoding),
    Table(FullResTable),
    Grid(MultiResHashGrid),
}

impl Encoder {
    pub fn out_width(&self) -> usize {
        match self {
            Encoder::Identity { d_in } => *d_in,
            Encoder::Pe(pe) => pe.out_width(),
            Encoder::Table(t) => t.out_width(),
            Encoder::Grid(g) => g.out_width(),
        }
    }

    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        match self {
            Encoder::Identity { .. } => Ok(x.clone()),
            Encoder::Pe(pe) => Ok(pe.forward(x)),
            Encoder::Table(t) => t.forward(x),
            Encoder::Grid(g) => g.forward(x),
        }
    }

    /// Returns the coordinate gradient if a chain-rule path to x exists.
    /// Lookup encoders accumulate into their entries and return `None`.
    pub fn backward(&mut self, x: &Mat, upstream: &Mat) -> Result<Option<Mat>> {
        match self {
            Encoder::Identity { .. } => Ok(Some(upstream.clone())),
            Encoder::Pe(pe) => Ok(Some(pe.backward(x, upstream))),
            Encoder::Table(t) => {
                t.backward(x, upstream)?;
                Ok(None)
            }
            Encoder::Grid(g) => {
                g.backward(x, upstream)?;
                Ok(None)
            }
        }
    }

    /// Local analytic Jacobian (out_width x d) of the encoder output in x.
    /// For lookups this is the piecewise interpolation slope, valid strictly
    /// inside a cell; it is a diagnostic, never part of training backward.
    pub fn local_jacobian(&self, x_row: &[f64]) -> Result<Mat> {
        match self {
            Encoder::Identity { d_in } => {
                let mut j = Mat::zeros(*d_in, *d_in);
                for k in 0..*d_in {
                    j.set(k, k, 1.0);
                }
                Ok(j)
            }
            Encoder::Pe(pe) => Ok(pe.jacobian(x_row)),
            Encoder::Table(t) => t.local_slope(x_row),
            Encoder::Grid(g) => g.local_slope(x_row),
        }
    }

    fn params(&self) -> Vec<&Parameter> {
        match self {
            Encoder::Identity { .. } | Encoder::Pe(_) => Vec::new(),
            Encoder::Table(t) => vec![&t.entries],
            Encoder::Grid(g) => g.levels.iter().map(|l| &l.entries).collect(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Encoder::Identity { .. } | Encoder::Pe(_) => Vec::new(),
            Encoder::Table(t) => vec![&mut t.entries],
            Encoder::Grid(g) => g.levels.iter_mut().map(|l| &mut l.entries).collect(),
        }
    }
}

/// The analytical branch: Fourier encoding, one hidden relu layer, and a
/// linear map back to d_in outputs. Continuous and differentiable everywhere.
#[derive(Clone, Debug)]
pub struct TransformNet {
    pub pe: PositionalEncoding,
    pub hidden: Linear,
    act: ActLayer,
    pub out: Linear,
    x_ctx: Option<Mat>,
}

impl TransformNet {
    fn new(d_in: usize, num_freqs: usize, rng: &mut impl Rng) -> Result<TransformNet> {
        let pe = PositionalEncoding::new(num_freqs, d_in)?;
        let hidden = init_linear("t.hidden", pe.out_width(), T_HIDDEN_WIDTH, relu_range(pe.out_width()), rng)?;
        let out = init_linear("t.out", T_HIDDEN_WIDTH, d_in, relu_range(T_HIDDEN_WIDTH), rng)?;
        Ok(TransformNet { pe, hidden, act: ActLayer::new(Activation::Relu), out, x_ctx: None })
    }

    pub fn forward(&mut self, x: &Mat) -> Result<Mat> {
        let enc = self.pe.forward(x);
        let h = self.act.forward(&self.hidden.forward(&enc)?);
        let out = self.out.forward(&h)?;
        self.x_ctx = Some(x.clone());
        Ok(out)
    }

    pub fn forward_frozen(&self, x: &Mat) -> Result<Mat> {
        let enc = self.pe.forward(x);
        let h = self.act.forward_frozen(&self.hidden.forward_frozen(&enc)?);
        self.out.forward_frozen(&h)
    }

    /// Full chain back to the coordinate: returns the n x d_in gradient.
    pub fn backward(&mut self, upstream: &Mat) -> Result<Mat> {
        let x = self
            .x_ctx
            .as_ref()
            .ok_or_else(|| Error::Usage("transform: backward without a prior forward".into()))?
            .clone();
        let dh = self.out.backward(upstream)?;
        let denc = self.hidden.backward(&self.act.backward(&dh)?)?;
        Ok(self.pe.backward(&x, &denc))
    }

    /// Analytic Jacobian dT/dx (d_in x d_in) at one coordinate.
    pub fn jacobian(&self, x_row: &[f64]) -> Result<Mat> {
        let x = Mat::from_vec(1, x_row.len(), x_row.to_vec());
        let enc = self.pe.forward(&x);
        let pre = self.hidden.forward_frozen(&enc)?;
        let j_pe = self.pe.jacobian(x_row);
        let j_h = propagate_linear(&self.hidden, &j_pe);
        let j_h = scale_rows_by_deriv(j_h, pre.row(0), Activation::Relu);
        Ok(propagate_linear(&self.out, &j_h))
    }
}

/// T(x) stand-ins: the learned analytical net or the raw coordinate.
#[derive(Clone, Debug)]
pub enum TBranch {
    Mlp(TransformNet),
    Identity,
}

impl TBranch {
    fn forward(&mut self, x: &Mat) -> Result<Mat> {
        match self {
            TBranch::Mlp(net) => net.forward(x),
            TBranch::Identity => Ok(x.clone()),
        }
    }

    fn forward_frozen(&self, x: &Mat) -> Result<Mat> {
        match self {
            TBranch::Mlp(net) => net.forward_frozen(x),
            TBranch::Identity => Ok(x.clone()),
        }
    }

    fn backward(&mut self, upstream: &Mat) -> Result<Option<Mat>> {
        match self {
            TBranch::Mlp(net) => Ok(Some(net.backward(upstream)?)),
            TBranch::Identity => Ok(Some(upstream.clone())),
        }
    }

    fn jacobian(&self, x_row: &[f64]) -> Result<Mat> {
        let d = x_row.len();
        match self {
            TBranch::Mlp(net) => net.jacobian(x_row),
            TBranch::Identity => {
                let mut j = Mat::zeros(d, d);
                for k in 0..d {
                    j.set(k, k, 1.0);
                }
                Ok(j)
            }
        }
    }

    fn params(&self) -> Vec<&Parameter> {
        match self {
            TBranch::Mlp(net) => vec![&net.hidden.w, &net.hidden.b, &net.out.w, &net.out.b],
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            TBranch::Mlp(net) => vec![&mut net.hidden.w, &mut net.hidden.b, &mut net.out.w, &mut net.out.b],
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrunkLayer {
    pub lin: Linear,
    pub act: ActLayer,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub kind: ModelKind,
    pub d_in: usize,
    pub d_out: usize,
    pub encoder: Encoder,
    pub transform: Option<TBranch>,
    pub trunk: Vec<TrunkLayer>,
    ctx: Option<Mat>,
}

fn relu_range(d_in: usize) -> f64 {
    (6.0 / d_in as f64).sqrt()
}

fn init_linear(name: &str, d_in: usize, d_out: usize, range: f64, rng: &mut impl Rng) -> Result<Linear> {
    let mut w = vec![0.0; d_out * d_in];
    for v in w.iter_mut() {
        *v = rng.random_range(-range..range);
    }
    Linear::from_params(
        Parameter::new(&format!("{name}.w"), (d_out, d_in), w),
        Parameter::zeros(&format!("{name}.b"), (d_out, 1)),
    )
}

/// J_out = W * J_in, the push of a Jacobian through a linear layer.
fn propagate_linear(lin: &Linear, j: &Mat) -> Mat {
    let (d_out, d_in) = lin.w.shape;
    debug_assert_eq!(j.rows(), d_in);
    let mut out = Mat::zeros(d_out, j.cols());
    for o in 0..d_out {
        let wrow = &lin.w.values[o * d_in..(o + 1) * d_in];
        let orow = out.row_mut(o);
        for i in 0..d_in {
            let w = wrow[i];
            let jrow = j.row(i);
            for c in 0..jrow.len() {
                orow[c] += w * jrow[c];
            }
        }
    }
    out
}

fn scale_rows_by_deriv(mut j: Mat, preact: &[f64], act: Activation) -> Mat {
    for r in 0..j.rows() {
        let d = act.deriv(preact[r]);
        j.row_mut(r).iter_mut().for_each(|v| *v *= d);
    }
    j
}

fn vstack(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols(), b.cols());
    let mut data = Vec::with_capacity((a.rows() + b.rows()) * a.cols());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Mat::from_vec(a.rows() + b.rows(), a.cols(), data)
}

impl Model {
    /// Assembles a model. Weight draws happen in a fixed order (encoder,
    /// transform, trunk) so a seeded rng reproduces the same initialization.
    pub fn build(
        kind: ModelKind,
        d_in: usize,
        d_out: usize,
        cfg: &ModelConfig,
        rng: &mut impl Rng,
    ) -> Result<Model> {
        if d_in == 0 || d_in > 3 {
            return Err(Error::Config(format!("d_in must be 1..=3, got {d_in}")));
        }
        if d_out == 0 {
            return Err(Error::Config("d_out must be >= 1".into()));
        }
        let encoder = match kind {
            ModelKind::Siren => Encoder::Identity { d_in },
            ModelKind::PeMlp => Encoder::Pe(PositionalEncoding::new(cfg.pe_num_freqs, d_in)?),
            ModelKind::Diner | ModelKind::RhinoDiner => {
                if cfg.table_resolution.len() != d_in {
                    return Err(Error::Config(format!(
                        "table resolution must give {d_in} dims, got {:?}",
                        cfg.table_resolution
                    )));
                }
                Encoder::Table(FullResTable::new(cfg.table_resolution.clone(), cfg.feature_width, rng)?)
            }
            ModelKind::Ngp | ModelKind::RhinoNgp => Encoder::Grid(MultiResHashGrid::new(
                d_in,
                GridParams {
                    num_levels: cfg.num_levels,
                    log2_table_size: cfg.log2_table_size,
                    feature_width: cfg.feature_width,
                    base_resolution: cfg.base_resolution,
                    growth_factor: cfg.growth_factor,
                },
                rng,
            )?),
        };
        let transform = if kind.is_rhino() {
            match cfg.transform {
                TransformKind::Mlp => {
                    Some(TBranch::Mlp(TransformNet::new(d_in, cfg.transform_num_freqs, rng)?))
                }
                TransformKind::Identity => Some(TBranch::Identity),
                // No branch at all: same widths, same weight draws, same fit
                // as the plain backbone, so any gap measured against it is
                // attributable to the coordinate branch alone.
                TransformKind::Disabled => None,
            }
        } else {
            None
        };
        let trunk_in = encoder.out_width() + if transform.is_some() { d_in } else { 0 };

        let mut trunk = Vec::with_capacity(cfg.hidden_layers + 1);
        let sine = matches!(kind, ModelKind::Siren);
        let w0 = cfg.siren_w0;
        let mut widths = vec![trunk_in];
        widths.extend(std::iter::repeat(cfg.hidden_width).take(cfg.hidden_layers));
        widths.push(d_out);
        for i in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[i], widths[i + 1]);
            let last = i == widths.len() - 2;
            let range = if sine {
                if i == 0 {
                    1.0 / fan_in as f64
                } else {
                    relu_range(fan_in) / w0
                }
            } else {
                relu_range(fan_in)
            };
            let act = if last {
                Activation::Identity
            } else if sine {
                Activation::sine(w0)?
            } else {
                Activation::Relu
            };
            trunk.push(TrunkLayer {
                lin: init_linear(&format!("trunk.{i}"), fan_in, fan_out, range, rng)?,
                act: ActLayer::new(act),
            });
        }

        Ok(Model { kind, d_in, d_out, encoder, transform, trunk, ctx: None })
    }

    pub fn trunk_in_width(&self) -> usize {
        self.encoder.out_width() + if self.transform.is_some() { self.d_in } else { 0 }
    }

    /// Training forward: retains per-layer contexts for backward.
    pub fn forward(&mut self, coords: &Mat) -> Result<Mat> {
        check_domain(coords)?;
        let enc = self.encoder.forward(coords)?;
        let mut z = match self.transform.as_mut() {
            None => enc,
            Some(tb) => concat_forward(&enc, &tb.forward(coords)?)?,
        };
        for layer in self.trunk.iter_mut() {
            z = layer.act.forward(&layer.lin.forward(&z)?);
        }
        self.ctx = Some(coords.clone());
        Ok(z)
    }

    /// Pure forward on a shared reference; evaluates in chunks.
    pub fn predict(&self, coords: &Mat) -> Result<Mat> {
        check_domain(coords)?;
        let mut out = Mat::zeros(coords.rows(), self.d_out);
        let mut start = 0;
        while start < coords.rows() {
            let len = PREDICT_CHUNK.min(coords.rows() - start);
            let mut chunk = Mat::zeros(len, coords.cols());
            for r in 0..len {
                chunk.row_mut(r).copy_from_slice(coords.row(start + r));
            }
            let enc = self.encoder.forward(&chunk)?;
            let mut z = match self.transform.as_ref() {
                None => enc,
                Some(tb) => concat_forward(&enc, &tb.forward_frozen(&chunk)?)?,
            };
            for layer in self.trunk.iter() {
                z = layer.act.forward_frozen(&layer.lin.forward_frozen(&z)?);
            }
            for r in 0..len {
                out.row_mut(start + r).copy_from_slice(z.row(r));
            }
            start += len;
        }
        Ok(out)
    }

    /// Evaluates the trunk alone on pre-built (encoder | T) feature rows.
    pub fn trunk_eval(&self, features: &Mat) -> Result<Mat> {
        let mut z = features.clone();
        for layer in self.trunk.iter() {
            z = layer.act.forward_frozen(&layer.lin.forward_frozen(&z)?);
        }
        Ok(z)
    }

    /// The encoder features and T output for given coordinates, before the
    /// trunk. Used by the slicing diagnostic.
    pub fn branch_inputs(&self, coords: &Mat) -> Result<Mat> {
        let enc = self.encoder.forward(coords)?;
        match self.transform.as_ref() {
            None => Ok(enc),
            Some(tb) => concat_forward(&enc, &tb.forward_frozen(coords)?),
        }
    }

    /// Smallest |pre-activation| over all relu layers for these coordinates.
    /// Finite-difference probes demand a margin here, or the stencil would
    /// straddle the relu kink.
    pub fn relu_kink_margin(&self, coords: &Mat) -> Result<f64> {
        Ok(self
            .relu_signature(coords)?
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(v.abs())))
    }

    /// Signed relu pre-activations (T hidden plus trunk) in a fixed order.
    /// Finite-difference stencils compare signatures across their probe
    /// points: matching signs mean the whole stencil shares one linear piece.
    pub fn relu_signature(&self, coords: &Mat) -> Result<Vec<f64>> {
        let mut sig = Vec::new();
        let mut track = |pre: &Mat, act: Activation| {
            if act == Activation::Relu {
                sig.extend_from_slice(pre.data());
            }
        };
        let enc = self.encoder.forward(coords)?;
        let mut z = match self.transform.as_ref() {
            None => enc,
            Some(tb) => {
                if let TBranch::Mlp(net) = tb {
                    let pre = net.hidden.forward_frozen(&net.pe.forward(coords))?;
                    track(&pre, Activation::Relu);
                }
                concat_forward(&enc, &tb.forward_frozen(coords)?)?
            }
        };
        for layer in self.trunk.iter() {
            let pre = layer.lin.forward_frozen(&z)?;
            track(&pre, layer.act.act);
            z = layer.act.forward_frozen(&pre);
        }
        Ok(sig)
    }

    /// Accumulates gradients into every reachable parameter and returns the
    /// coordinate gradient if any branch provides a chain-rule path to x.
    pub fn backward(&mut self, loss_grad: &Mat) -> Result<Option<Mat>> {
        let coords = self
            .ctx
            .as_ref()
            .ok_or_else(|| Error::Usage("model: backward without a prior forward".into()))?
            .clone();
        let mut g = loss_grad.clone();
        for layer in self.trunk.iter_mut().rev() {
            g = layer.lin.backward(&layer.act.backward(&g)?)?;
        }
        let enc_width = self.encoder.out_width();
        match self.transform.as_mut() {
            None => self.encoder.backward(&coords, &g),
            Some(tb) => {
                let (ge, gt) = concat_backward(&g, enc_width)?;
                let from_encoder = self.encoder.backward(&coords, &ge)?;
                let from_t = tb.backward(&gt)?;
                Ok(match (from_encoder, from_t) {
                    (None, None) => None,
                    (Some(a), None) => Some(a),
                    (None, Some(b)) => Some(b),
                    (Some(mut a), Some(b)) => {
                        for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                            *x += y;
                        }
                        Some(a)
                    }
                })
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grads();
        }
    }

    /// Fixed enumeration order: encoder entries, transform, trunk.
    pub fn params(&self) -> Vec<&Parameter> {
        let mut out = self.encoder.params();
        if let Some(tb) = self.transform.as_ref() {
            out.extend(tb.params());
        }
        for layer in self.trunk.iter() {
            out.push(&layer.lin.w);
            out.push(&layer.lin.b);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = self.encoder.params_mut();
        if let Some(tb) = self.transform.as_mut() {
            out.extend(tb.params_mut());
        }
        for layer in self.trunk.iter_mut() {
            out.push(&mut layer.lin.w);
            out.push(&mut layer.lin.b);
        }
        out
    }

    pub fn num_scalar_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Central finite-difference Jacobian (d_out x d_in) of the full model.
    /// Probes are clamped into [0,1]; at the boundary the stencil degrades to
    /// one-sided with the matching denominator.
    pub fn coord_jacobian_fd(&self, x_row: &[f64], h: f64) -> Result<Mat> {
        let d = x_row.len();
        let mut j = Mat::zeros(self.d_out, d);
        for k in 0..d {
            let mut xp = x_row.to_vec();
            let mut xm = x_row.to_vec();
            xp[k] = (x_row[k] + h).min(1.0);
            xm[k] = (x_row[k] - h).max(0.0);
            let denom = xp[k] - xm[k];
            let fp = self.predict(&Mat::from_vec(1, d, xp))?;
            let fm = self.predict(&Mat::from_vec(1, d, xm))?;
            for o in 0..self.d_out {
                j.set(o, k, (fp.get(0, o) - fm.get(0, o)) / denom);
            }
        }
        Ok(j)
    }

    /// Frobenius norm of the finite-difference coordinate Jacobian (h=1e-4):
    /// the probe that shows lookup models relying purely on interpolation
    /// slope while rhino adds a smooth analytic path.
    pub fn coord_jacobian_norm(&self, x_row: &[f64]) -> Result<f64> {
        let j = self.coord_jacobian_fd(x_row, 1e-4)?;
        Ok(j.data().iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// Analytic local Jacobian (d_out x d_in): encoder interpolation slope
    /// (valid strictly inside a cell) plus the T-branch chain, pushed through
    /// the trunk. Diagnostic counterpart of `coord_jacobian_fd`.
    pub fn coord_jacobian_analytic(&self, x_row: &[f64]) -> Result<Mat> {
        let d = x_row.len();
        let x = Mat::from_vec(1, d, x_row.to_vec());
        let enc_j = self.encoder.local_jacobian(x_row)?;
        let mut j = match self.transform.as_ref() {
            None => enc_j,
            Some(tb) => vstack(&enc_j, &tb.jacobian(x_row)?),
        };
        let mut z = self.branch_inputs(&x)?;
        for layer in self.trunk.iter() {
            let pre = layer.lin.forward_frozen(&z)?;
            j = propagate_linear(&layer.lin, &j);
            j = scale_rows_by_deriv(j, pre.row(0), layer.act.act);
            z = layer.act.forward_frozen(&pre);
        }
        Ok(j)
    }

    /// Binary checkpoint: name, shape, then little-endian doubles per
    /// parameter. Round-trips bit-exactly.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let params = self.params();
        w.write_all(b"INRCKPT1")?;
        w.write_all(&(params.len() as u32).to_le_bytes())?;
        for p in params {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(p.shape.0 as u32).to_le_bytes())?;
            w.write_all(&(p.shape.1 as u32).to_le_bytes())?;
            for v in p.values.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Loads values into an identically shaped model, matching by name.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"INRCKPT1" {
            return Err(Error::Config(format!("{}: not a checkpoint file", path.display())));
        }
        let count = read_u32(&mut r)? as usize;
        let mut entries = std::collections::HashMap::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Config("checkpoint contains a non-utf8 name".into()))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut values = vec![0.0f64; rows * cols];
            for v in values.iter_mut() {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            entries.insert(name, ((rows, cols), values));
        }
        for p in self.params_mut() {
            let (shape, values) = entries.remove(&p.name).ok_or_else(|| {
                Error::Config(format!("checkpoint is missing parameter '{}'", p.name))
            })?;
            if shape != p.shape {
                return Err(Error::Config(format!(
                    "checkpoint parameter '{}' has shape {:?}, model expects {:?}",
                    p.name, shape, p.shape
                )));
            }
            p.values = values;
        }
        if let Some(extra) = entries.keys().next() {
            return Err(Error::Config(format!(
                "checkpoint parameter '{extra}' does not exist in the model"
            )));
        }
        Ok(())
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg_with_table(res: Vec<usize>) -> ModelConfig {
        ModelConfig { table_resolution: res, ..ModelConfig::default() }
    }

    #[test]
    fn trunk_width_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Model::build(ModelKind::RhinoDiner, 2, 3, &cfg_with_table(vec![8, 8]), &mut rng).unwrap();
        assert_eq!(m.trunk_in_width(), m.encoder.out_width() + 2);
        assert_eq!(m.encoder.out_width(), 2);

        let m = Model::build(ModelKind::PeMlp, 2, 3, &ModelConfig::default(), &mut rng).unwrap();
        assert_eq!(m.trunk_in_width(), 40);
    }

    #[test]
    fn diner_64x64_table_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Model::build(ModelKind::Diner, 2, 3, &cfg_with_table(vec![64, 64]), &mut rng).unwrap();
        match &m.encoder {
            Encoder::Table(t) => assert_eq!(t.entries.len(), 64 * 64 * 2),
            _ => panic!("expected table encoder"),
        }
    }

    #[test]
    fn zero_params_relu_trunk_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = Model::build(ModelKind::Diner, 2, 3, &cfg_with_table(vec![4, 4]), &mut rng).unwrap();
        for p in m.params_mut() {
            p.values.iter_mut().for_each(|v| *v = 0.0);
        }
        let out = m.predict(&Mat::from_vec(2, 2, vec![0.2, 0.7, 0.9, 0.1])).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_loss_grad_leaves_grads_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = Model::build(ModelKind::RhinoNgp, 2, 1, &ModelConfig::default(), &mut rng).unwrap();
        let x = Mat::from_vec(2, 2, vec![0.3, 0.4, 0.8, 0.6]);
        m.forward(&x).unwrap();
        m.backward(&Mat::zeros(2, 1)).unwrap();
        for p in m.params() {
            assert!(p.grads.iter().all(|&g| g == 0.0), "grads of {} not zero", p.name);
        }
    }

    #[test]
    fn backward_without_forward_is_usage_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = Model::build(ModelKind::PeMlp, 1, 1, &ModelConfig::default(), &mut rng).unwrap();
        assert_eq!(m.backward(&Mat::zeros(1, 1)).unwrap_err().kind(), "usage");
    }

    #[test]
    fn lookup_kinds_emit_no_coordinate_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in [ModelKind::Diner, ModelKind::Ngp] {
            let mut m = Model::build(kind, 2, 1, &cfg_with_table(vec![8, 8]), &mut rng).unwrap();
            let x = Mat::from_vec(1, 2, vec![0.31, 0.57]);
            m.forward(&x).unwrap();
            assert!(m.backward(&Mat::from_vec(1, 1, vec![1.0])).unwrap().is_none());
        }
        for kind in [ModelKind::Siren, ModelKind::PeMlp, ModelKind::RhinoDiner, ModelKind::RhinoNgp] {
            let mut m = Model::build(kind, 2, 1, &cfg_with_table(vec![8, 8]), &mut rng).unwrap();
            let x = Mat::from_vec(1, 2, vec![0.31, 0.57]);
            m.forward(&x).unwrap();
            assert!(m.backward(&Mat::from_vec(1, 1, vec![1.0])).unwrap().is_some());
        }
    }

    #[test]
    fn unknown_kind_is_config_error() {
        assert_eq!("resnet".parse::<ModelKind>().unwrap_err().kind(), "config");
    }

    #[test]
    fn out_of_domain_forward_is_domain_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = Model::build(ModelKind::PeMlp, 1, 1, &ModelConfig::default(), &mut rng).unwrap();
        let err = m.forward(&Mat::from_vec(1, 1, vec![-0.1])).unwrap_err();
        assert_eq!(err.kind(), "domain");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Model::build(ModelKind::RhinoDiner, 2, 3, &cfg_with_table(vec![5, 5]), &mut rng).unwrap();
        let dir = std::env::temp_dir().join(format!("inrlab-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        m.save_checkpoint(&path).unwrap();

        let mut rng2 = ChaCha8Rng::seed_from_u64(99);
        let mut m2 = Model::build(ModelKind::RhinoDiner, 2, 3, &cfg_with_table(vec![5, 5]), &mut rng2).unwrap();
        m2.load_checkpoint(&path).unwrap();
        for (a, b) in m.params().iter().zip(m2.params()) {
            assert_eq!(a.values, b.values, "parameter {} differs", a.name);
        }
        let x = Mat::from_vec(1, 2, vec![0.37, 0.81]);
        assert_eq!(m.predict(&x).unwrap(), m2.predict(&x).unwrap());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn checkpoint_shape_mismatch_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Model::build(ModelKind::Diner, 2, 1, &cfg_with_table(vec![4, 4]), &mut rng).unwrap();
        let dir = std::env::temp_dir().join(format!("inrlab-ckpt-mismatch-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        m.save_checkpoint(&path).unwrap();
        let mut other = Model::build(ModelKind::Diner, 2, 1, &cfg_with_table(vec![5, 5]), &mut rng).unwrap();
        assert_eq!(other.load_checkpoint(&path).unwrap_err().kind(), "config");
        std::fs::remove_dir_all(&dir).ok();
    }
}
