//! Coordinate preprocessors. Two families with deliberately different
//! gradient routing:
//!
//! * `PositionalEncoding` is continuous and analytic; it exposes a Jacobian
//!   w.r.t. the coordinate, so gradients flow from the output back to x.
//! * `FullResTable` and `MultiResHashGrid` look up learned entries by grid
//!   position. Their backward accumulates only into the touched entries and
//!   emits NO gradient w.r.t. x: indexing is discrete, so the chain rule
//!   between the coordinate and the looked-up key does not exist.
//!
//! All lookups d-linearly interpolate the 2^d surrounding grid nodes with
//! weights that form a partition of unity, which makes every encoder C0 in x
//! and makes a query exactly on a node return exactly that node's entries.

use crate::diffcore::Parameter;
use crate::error::{Error, Result};
use crate::mat::Mat;
use rand::Rng;
use std::f64::consts::PI;

/// Fourier feature map; for each input dim k and frequency i < L emits the
/// pair (sin(2^i pi x_k), cos(2^i pi x_k)), dim-major, frequency-minor.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalEncoding {
    pub num_freqs: usize,
    pub d_in: usize,
}

impl PositionalEncoding {
    pub fn new(num_freqs: usize, d_in: usize) -> Result<PositionalEncoding> {
        if num_freqs == 0 {
            return Err(Error::Config("positional encoding requires at least one frequency".into()));
        }
        Ok(PositionalEncoding { num_freqs, d_in })
    }

    pub fn out_width(&self) -> usize {
        2 * self.num_freqs * self.d_in
    }

    fn freq(&self, i: usize) -> f64 {
        (1u64 << i) as f64 * PI
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let l = self.num_freqs;
        let mut out = Mat::zeros(x.rows(), self.out_width());
        for r in 0..x.rows() {
            let xr = x.row(r);
            let o = out.row_mut(r);
            for k in 0..self.d_in {
                for i in 0..l {
                    let arg = self.freq(i) * xr[k];
                    o[k * 2 * l + 2 * i] = arg.sin();
                    o[k * 2 * l + 2 * i + 1] = arg.cos();
                }
            }
        }
        out
    }

    /// Chain rule through the analytic map: returns the n x d_in coordinate
    /// gradient for the given upstream n x (2*L*d_in).
    pub fn backward(&self, x: &Mat, upstream: &Mat) -> Mat {
        let l = self.num_freqs;
        let mut dx = Mat::zeros(x.rows(), self.d_in);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let up = upstream.row(r);
            let d = dx.row_mut(r);
            for k in 0..self.d_in {
                let mut acc = 0.0;
                for i in 0..l {
                    let f = self.freq(i);
                    let arg = f * xr[k];
                    acc += up[k * 2 * l + 2 * i] * f * arg.cos();
                    acc -= up[k * 2 * l + 2 * i + 1] * f * arg.sin();
                }
                d[k] = acc;
            }
        }
        dx
    }

    /// Dense local Jacobian (out_width x d_in) at a single coordinate.
    pub fn jacobian(&self, x_row: &[f64]) -> Mat {
        let l = self.num_freqs;
        let mut j = Mat::zeros(self.out_width(), self.d_in);
        for k in 0..self.d_in {
            for i in 0..l {
                let f = self.freq(i);
                let arg = f * x_row[k];
                j.set(k * 2 * l + 2 * i, k, f * arg.cos());
                j.set(k * 2 * l + 2 * i + 1, k, -f * arg.sin());
            }
        }
        j
    }
}

/// Multiplicative hash constants per dimension; dim 0 uses 1 so that 1D
/// hashing degenerates to the identity before the modulus.
pub const HASH_PRIMES: [u64; 3] = [1, 2_654_435_761, 805_459_861];

/// XOR of per-dimension products, reduced mod the table size. Pure function.
pub fn spatial_hash(grid_index: &[usize], table_size: usize) -> usize {
    debug_assert!((1..=3).contains(&grid_index.len()));
    let mut h: u64 = 0;
    for (k, &i) in grid_index.iter().enumerate() {
        h ^= (i as u64).wrapping_mul(HASH_PRIMES[k]);
    }
    (h % table_size as u64) as usize
}

/// Row-major linear index, first dimension outermost.
pub fn row_major_index(grid_index: &[usize], resolution: &[usize]) -> usize {
    let mut acc = 0;
    for (&i, &r) in grid_index.iter().zip(resolution) {
        debug_assert!(i < r);
        acc = acc * r + i;
    }
    acc
}

/// Interpolation cell for one query point: base node, fractional offsets, and
/// iteration over the 2^d corners with their partition-of-unity weights.
struct Cell {
    d: usize,
    base: [usize; 3],
    frac: [f64; 3],
}

impl Cell {
    /// Maps x in [0,1]^d to the cell of the grid with `res[k]` nodes per dim
    /// (node spacing 1/(res[k]-1)). A query exactly on a node lands on that
    /// node with fractional offset 0 (or offset 1 from the previous node at
    /// the upper boundary), so interpolation reproduces node entries exactly.
    fn locate(x_row: &[f64], res: &[usize]) -> Result<Cell> {
        let d = x_row.len();
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for k in 0..d {
            let x = x_row[k];
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Domain(format!("coordinate {x} at dim {k} is outside [0,1]")));
            }
            let u = x * (res[k] - 1) as f64;
            let i0 = (u.floor() as usize).min(res[k] - 2);
            base[k] = i0;
            frac[k] = u - i0 as f64;
        }
        Ok(Cell { d, base, frac })
    }

    /// Weight of corner `c` (bit k selects the upper node along dim k).
    fn weight(&self, c: usize) -> f64 {
        let mut w = 1.0;
        for k in 0..self.d {
            w *= if c >> k & 1 == 1 { self.frac[k] } else { 1.0 - self.frac[k] };
        }
        w
    }

    /// d(weight of corner c)/dx_k, including the x -> u scale factor.
    fn weight_slope(&self, c: usize, k: usize, res: &[usize]) -> f64 {
        let mut w = (res[k] - 1) as f64;
        for j in 0..self.d {
            if j == k {
                if c >> j & 1 == 0 {
                    w = -w;
                }
            } else {
                w *= if c >> j & 1 == 1 { self.frac[j] } else { 1.0 - self.frac[j] };
            }
        }
        w
    }

    fn corner(&self, c: usize) -> [usize; 3] {
        let mut idx = self.base;
        for k in 0..self.d {
            idx[k] += (c >> k & 1) as usize;
        }
        idx
    }

    fn num_corners(&self) -> usize {
        1 << self.d
    }
}

/// One learned key vector per grid node at the full signal resolution; the
/// collision-free lookup table.
#[derive(Clone, Debug)]
pub struct FullResTable {
    pub resolution: Vec<usize>,
    pub feature_width: usize,
    pub entries: Parameter,
}

impl FullResTable {
    pub fn new(resolution: Vec<usize>, feature_width: usize, rng: &mut impl Rng) -> Result<FullResTable> {
        let mut t = FullResTable::with_entries(
            resolution.clone(),
            feature_width,
            vec![0.0; resolution.iter().product::<usize>() * feature_width],
        )?;
        for v in t.entries.values.iter_mut() {
            *v = rng.random_range(-1e-4..1e-4);
        }
        Ok(t)
    }

    pub fn with_entries(resolution: Vec<usize>, feature_width: usize, entries: Vec<f64>) -> Result<FullResTable> {
        if resolution.is_empty() || resolution.len() > 3 {
            return Err(Error::Config("table resolution must cover 1 to 3 dims".into()));
        }
        if resolution.iter().any(|&r| r < 2) {
            return Err(Error::Config("table needs at least 2 nodes per dim".into()));
        }
        if feature_width == 0 {
            return Err(Error::Config("feature width must be >= 1".into()));
        }
        let want = resolution.iter().product::<usize>() * feature_width;
        if entries.len() != want {
            return Err(Error::Config(format!("table expects {want} entries, got {}", entries.len())));
        }
        let n = entries.len();
        Ok(FullResTable {
            resolution,
            feature_width,
            entries: Parameter::new("table", (n / feature_width, feature_width), entries),
        })
    }

    pub fn d_in(&self) -> usize {
        self.resolution.len()
    }

    pub fn out_width(&self) -> usize {
        self.feature_width
    }

    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        let f = self.feature_width;
        let mut out = Mat::zeros(x.rows(), f);
        for r in 0..x.rows() {
            let cell = Cell::locate(x.row(r), &self.resolution)?;
            let o = out.row_mut(r);
            for c in 0..cell.num_corners() {
                let w = cell.weight(c);
                let slot = row_major_index(&cell.corner(c)[..cell.d], &self.resolution);
                let e = &self.entries.values[slot * f..(slot + 1) * f];
                for j in 0..f {
                    o[j] += w * e[j];
                }
            }
        }
        Ok(out)
    }

    /// Accumulates upstream * weight into the touched entries only. By
    /// construction there is no gradient w.r.t. x.
    pub fn backward(&mut self, x: &Mat, upstream: &Mat) -> Result<()> {
        let f = self.feature_width;
        if upstream.rows() != x.rows() || upstream.cols() != f {
            return Err(Error::Config("table backward shape mismatch".into()));
        }
        for r in 0..x.rows() {
            let cell = Cell::locate(x.row(r), &self.resolution)?;
            let up = upstream.row(r);
            for c in 0..cell.num_corners() {
                let w = cell.weight(c);
                let slot = row_major_index(&cell.corner(c)[..cell.d], &self.resolution);
                let g = &mut self.entries.grads[slot * f..(slot + 1) * f];
                for j in 0..f {
                    g[j] += w * up[j];
                }
            }
        }
        Ok(())
    }

    /// Piecewise slope of the interpolated features inside the current cell:
    /// a (feature_width x d) Jacobian. Diagnostic only; the training backward
    /// never uses it.
    pub fn local_slope(&self, x_row: &[f64]) -> Result<Mat> {
        let f = self.feature_width;
        let d = self.d_in();
        let cell = Cell::locate(x_row, &self.resolution)?;
        let mut jac = Mat::zeros(f, d);
        for c in 0..cell.num_corners() {
            let slot = row_major_index(&cell.corner(c)[..cell.d], &self.resolution);
            let e = &self.entries.values[slot * f..(slot + 1) * f];
            for k in 0..d {
                let dw = cell.weight_slope(c, k, &self.resolution);
                for j in 0..f {
                    *jac.row_mut(j).get_mut(k).unwrap() += dw * e[j];
                }
            }
        }
        Ok(jac)
    }
}

/// Geometry of one grid level.
#[derive(Clone, Debug)]
pub struct GridLevel {
    /// Nodes per dimension at this level.
    pub resolution: usize,
    /// Collision-free when every node fits in the table.
    pub dense: bool,
    pub entries: Parameter,
}

impl GridLevel {
    fn slot(&self, idx: &[usize], table_size: usize) -> usize {
        if self.dense {
            row_major_index(idx, &vec![self.resolution; idx.len()])
        } else {
            spatial_hash(idx, table_size)
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GridParams {
    pub num_levels: usize,
    pub log2_table_size: u32,
    pub feature_width: usize,
    pub base_resolution: usize,
    pub growth_factor: f64,
}

impl Default for GridParams {
    fn default() -> GridParams {
        GridParams {
            num_levels: 8,
            log2_table_size: 14,
            feature_width: 2,
            base_resolution: 16,
            growth_factor: 1.5,
        }
    }
}

/// Multi-resolution hash grid: per level, d-linear interpolation of hashed
/// corner entries; levels concatenated in ascending-resolution order.
#[derive(Clone, Debug)]
pub struct MultiResHashGrid {
    pub d_in: usize,
    pub feature_width: usize,
    pub table_size: usize,
    pub levels: Vec<GridLevel>,
}

impl MultiResHashGrid {
    pub fn new(d_in: usize, p: GridParams, rng: &mut impl Rng) -> Result<MultiResHashGrid> {
        if !(1..=3).contains(&d_in) {
            return Err(Error::Config("hash grid supports 1 to 3 input dims".into()));
        }
        if p.num_levels == 0 || p.feature_width == 0 {
            return Err(Error::Config("hash grid needs at least one level and feature".into()));
        }
        let table_size = 1usize << p.log2_table_size;
        let mut levels = Vec::with_capacity(p.num_levels);
        for l in 0..p.num_levels {
            let res = (p.base_resolution as f64 * p.growth_factor.powi(l as i32)).floor() as usize;
            if res < 2 {
                return Err(Error::Config(format!("level {l} resolution {res} is below 2 nodes")));
            }
            let nodes = res.pow(d_in as u32);
            let dense = nodes <= table_size;
            let len = nodes.min(table_size) * p.feature_width;
            let mut values = vec![0.0; len];
            for v in values.iter_mut() {
                *v = rng.random_range(-1e-4..1e-4);
            }
            levels.push(GridLevel {
                resolution: res,
                dense,
                entries: Parameter::new(&format!("grid.l{l}"), (len / p.feature_width, p.feature_width), values),
            });
        }
        Ok(MultiResHashGrid { d_in, feature_width: p.feature_width, table_size, levels })
    }

    pub fn out_width(&self) -> usize {
        self.levels.len() * self.feature_width
    }

    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        let f = self.feature_width;
        let mut out = Mat::zeros(x.rows(), self.out_width());
        for r in 0..x.rows() {
            let xr = x.row(r);
            let o = out.row_mut(r);
            for (li, level) in self.levels.iter().enumerate() {
                let res = vec![level.resolution; self.d_in];
                let cell = Cell::locate(xr, &res)?;
                for c in 0..cell.num_corners() {
                    let w = cell.weight(c);
                    let slot = level.slot(&cell.corner(c)[..cell.d], self.table_size);
                    let e = &level.entries.values[slot * f..(slot + 1) * f];
                    for j in 0..f {
                        o[li * f + j] += w * e[j];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Accumulates into level entries via the interpolation weights; colliding
    /// corners accumulate both contributions. No gradient w.r.t. x.
    pub fn backward(&mut self, x: &Mat, upstream: &Mat) -> Result<()> {
        let f = self.feature_width;
        if upstream.rows() != x.rows() || upstream.cols() != self.out_width() {
            return Err(Error::Config("hash grid backward shape mismatch".into()));
        }
        for r in 0..x.rows() {
            let xr = x.row(r);
            let up = upstream.row(r);
            for (li, level) in self.levels.iter_mut().enumerate() {
                let res = vec![level.resolution; xr.len()];
                let cell = Cell::locate(xr, &res)?;
                for c in 0..cell.num_corners() {
                    let w = cell.weight(c);
                    let slot = level.slot(&cell.corner(c)[..cell.d], self.table_size);
                    let g = &mut level.entries.grads[slot * f..(slot + 1) * f];
                    for j in 0..f {
                        g[j] += w * up[li * f + j];
                    }
                }
            }
        }
        Ok(())
    }

    /// Piecewise slope of all level features inside their current cells:
    /// an (out_width x d) Jacobian. Diagnostic only.
    pub fn local_slope(&self, x_row: &[f64]) -> Result<Mat> {
        let f = self.feature_width;
        let d = self.d_in;
        let mut jac = Mat::zeros(self.out_width(), d);
        for (li, level) in self.levels.iter().enumerate() {
            let res = vec![level.resolution; d];
            let cell = Cell::locate(x_row, &res)?;
            for c in 0..cell.num_corners() {
                let slot = level.slot(&cell.corner(c)[..cell.d], self.table_size);
                let e = &level.entries.values[slot * f..(slot + 1) * f];
                for k in 0..d {
                    let dw = cell.weight_slope(c, k, &res);
                    for j in 0..f {
                        *jac.row_mut(li * f + j).get_mut(k).unwrap() += dw * e[j];
                    }
                }
            }
        }
        Ok(jac)
    }
}
