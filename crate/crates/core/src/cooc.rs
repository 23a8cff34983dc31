//! Co-occurrence filters and co-occurrence tensors.
//!
//! A positive co-occurrence links two activations in *different* channels
//! that both exceed a threshold and lie within a `(2r+1) x (2r+1)` window of
//! each other. The co-occurrence tensor sums, for every thresholded
//! activation, the thresholded activations of the other channels in its
//! window, normalized by `D - 1`.
//!
//! Three routes are provided:
//!
//! * [`cooc_conv`]: a single multi-channel convolution of the thresholded
//!   tensor with a [`CoocFilter`] (the inference and training path);
//! * [`cooc_bruteforce`]: literal evaluation of the definition, used as the
//!   correctness oracle;
//! * [`shih_cooc_tensor`]: the max-correlation offset construction used as
//!   the runtime baseline.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{s, Array2, ArrayView3};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::{
    apply_mask, threshold_mask, ActivationTensor, BinaryMask, CoocTensor, Shape, Tensor3,
};

const FILTER_MAGIC: &[u8; 4] = b"COOF";
const FILTER_VERSION: u8 = 1;

/// Diagonal value used by the trainable filter at initialization.
pub const TRAINABLE_DIAG: f64 = 1e-10;

/// Default co-occurrence window radius.
pub const DEFAULT_RADIUS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
enum Weights {
    /// Every spatial tap of every off-diagonal channel pair holds `off`,
    /// every tap of a diagonal pair holds `diag`.
    Uniform { off: f64, diag: f64 },
    /// Dense `(out, in, row, col)` array of `D * D * S * S` values.
    Dense(Vec<f64>),
}

/// A `D x D x S x S` convolution kernel, `S = 2r + 1`.
///
/// The canonical filter has every weight equal to one except the channel
/// diagonal. It is stored implicitly until weights are materialized, since
/// the dense form at `D = 512, r = 4` is 21M values.
#[derive(Debug, Clone, PartialEq)]
pub struct CoocFilter {
    depth: usize,
    radius: usize,
    weights: Weights,
}

/// Canonical filter: weight 1 between distinct channels, `diag_value` on the
/// channel diagonal.
pub fn make_filter(depth: usize, radius: usize, diag_value: f64) -> Result<CoocFilter> {
    if depth < 2 {
        return Err(Error::Domain(format!(
            "co-occurrence needs at least two channels, got {depth}"
        )));
    }
    if !diag_value.is_finite() {
        return Err(Error::Domain("diagonal value must be finite".into()));
    }
    Ok(CoocFilter {
        depth,
        radius,
        weights: Weights::Uniform {
            off: 1.0,
            diag: diag_value,
        },
    })
}

impl CoocFilter {
    /// Builds a filter from a dense `(out, in, row, col)` weight array.
    pub fn from_weights(depth: usize, radius: usize, weights: Vec<f64>) -> Result<Self> {
        if depth < 2 {
            return Err(Error::Domain(format!(
                "co-occurrence needs at least two channels, got {depth}"
            )));
        }
        let s = 2 * radius + 1;
        if weights.len() != depth * depth * s * s {
            return Err(Error::Dimension(format!(
                "filter {depth}x{depth}x{s}x{s} needs {} weights, got {}",
                depth * depth * s * s,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Validation("non-finite filter weight".into()));
        }
        Ok(CoocFilter {
            depth,
            radius,
            weights: Weights::Dense(weights),
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn window(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn len(&self) -> usize {
        let s = self.window();
        self.depth * self.depth * s * s
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, out: usize, inp: usize, row: usize, col: usize) -> usize {
        let s = self.window();
        ((out * self.depth + inp) * s + row) * s + col
    }

    /// Weight for output channel `out`, input channel `inp`, window tap
    /// `(row, col)` with `row, col` in `0..S`.
    pub fn weight(&self, out: usize, inp: usize, row: usize, col: usize) -> f64 {
        match &self.weights {
            Weights::Uniform { off, diag } => {
                if out == inp {
                    *diag
                } else {
                    *off
                }
            }
            Weights::Dense(w) => w[self.index(out, inp, row, col)],
        }
    }

    /// `(off, diag)` if the filter is spatially constant with one shared
    /// off-diagonal value and one shared diagonal value.
    pub fn uniform_values(&self) -> Option<(f64, f64)> {
        match self.weights {
            Weights::Uniform { off, diag } => Some((off, diag)),
            Weights::Dense(_) => None,
        }
    }

    /// Dense copy of all weights in `(out, in, row, col)` order.
    pub fn to_dense(&self) -> Vec<f64> {
        match &self.weights {
            Weights::Dense(w) => w.clone(),
            Weights::Uniform { .. } => {
                let s = self.window();
                let mut w = Vec::with_capacity(self.len());
                for a in 0..self.depth {
                    for b in 0..self.depth {
                        let v = self.weight(a, b, 0, 0);
                        w.extend(std::iter::repeat_n(v, s * s));
                    }
                }
                w
            }
        }
    }

    /// Mutable access to the weights; materializes the dense form.
    pub fn weights_mut(&mut self) -> &mut [f64] {
        if let Weights::Uniform { .. } = self.weights {
            self.weights = Weights::Dense(self.to_dense());
        }
        match &mut self.weights {
            Weights::Dense(w) => w,
            Weights::Uniform { .. } => unreachable!(),
        }
    }

    pub fn scaled(&self, factor: f64) -> CoocFilter {
        let weights = match &self.weights {
            Weights::Uniform { off, diag } => Weights::Uniform {
                off: off * factor,
                diag: diag * factor,
            },
            Weights::Dense(w) => Weights::Dense(w.iter().map(|v| v * factor).collect()),
        };
        CoocFilter {
            weights,
            ..self.clone()
        }
    }

    /// Reorders the channels of the filter: output channel `perm[a]` of the
    /// result takes the weights of channel `a` here (same for inputs).
    pub fn permuted(&self, perm: &[usize]) -> Result<CoocFilter> {
        if perm.len() != self.depth {
            return Err(Error::Dimension("permutation length".into()));
        }
        if let Weights::Uniform { .. } = self.weights {
            return Ok(self.clone());
        }
        let s = self.window();
        let mut out = vec![0.0; self.len()];
        for a in 0..self.depth {
            for b in 0..self.depth {
                for r in 0..s {
                    for c in 0..s {
                        out[self.index(perm[a], perm[b], r, c)] = self.weight(a, b, r, c);
                    }
                }
            }
        }
        CoocFilter::from_weights(self.depth, self.radius, out)
    }
}

pub fn save_filter(f: &CoocFilter, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_filter(f)).map_err(|e| Error::io(path, e))
}

pub fn load_filter(path: impl AsRef<Path>) -> Result<CoocFilter> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_filter(&bytes)
}

/// `COOF`, version 1, `u32` depth, `u32` window size, `f32` weights.
pub fn encode_filter(f: &CoocFilter) -> Vec<u8> {
    let mut w = Writer::with_capacity(13 + 4 * f.len());
    w.bytes(FILTER_MAGIC);
    w.u8(FILTER_VERSION);
    w.u32(f.depth as u32);
    w.u32(f.window() as u32);
    w.f64_as_f32(&f.to_dense());
    w.finish()
}

pub fn decode_filter(bytes: &[u8]) -> Result<CoocFilter> {
    let mut r = Reader::new(bytes);
    r.magic(FILTER_MAGIC, FILTER_VERSION)?;
    let depth = r.u32()? as usize;
    let window = r.u32()? as usize;
    if window.is_multiple_of(2) {
        return Err(Error::Format(format!("window size {window} is not odd")));
    }
    let count = depth * depth * window * window;
    if r.remaining() != count * 4 {
        return Err(Error::Corrupt(format!(
            "filter needs {} payload bytes, found {}",
            count * 4,
            r.remaining()
        )));
    }
    let weights = r.f64_from_f32(count)?;
    r.finish()?;
    CoocFilter::from_weights(depth, window / 2, weights)
}

/// Co-occurrence tensor through the convolution route.
///
/// The tensor is thresholded at `thr` (strictly greater), convolved with
/// `filter` under zero padding of width `r`, divided by `D - 1` and masked
/// again so only thresholded activations carry co-occurrence mass.
pub fn cooc_conv(t: &ActivationTensor, filter: &CoocFilter, thr: f64) -> Result<CoocTensor> {
    check_depth(t, filter)?;
    let mask = threshold_mask(t, thr);
    let masked = apply_mask(t, &mask)?;
    let conv = match filter.uniform_values() {
        Some((off, diag)) => conv_uniform(&masked, filter.radius, off, diag),
        None => conv_direct(&masked, filter),
    };
    Ok(finish_cooc(conv, &mask))
}

/// Same as [`cooc_conv`] but always through the direct window
/// accumulation, whatever the filter structure.
pub fn cooc_conv_direct(t: &ActivationTensor, filter: &CoocFilter, thr: f64) -> Result<CoocTensor> {
    check_depth(t, filter)?;
    let mask = threshold_mask(t, thr);
    let masked = apply_mask(t, &mask)?;
    Ok(finish_cooc(conv_direct(&masked, filter), &mask))
}

fn check_depth(t: &ActivationTensor, filter: &CoocFilter) -> Result<()> {
    if t.shape().d != filter.depth {
        return Err(Error::Dimension(format!(
            "tensor depth {} vs filter depth {}",
            t.shape().d,
            filter.depth
        )));
    }
    Ok(())
}

fn finish_cooc(mut conv: CoocTensor, mask: &BinaryMask) -> CoocTensor {
    let scale = 1.0 / (conv.shape().d as f64 - 1.0);
    for (v, &keep) in conv.data_mut().iter_mut().zip(mask.data()) {
        *v = if keep { *v * scale } else { 0.0 };
    }
    conv
}

/// Inclusive window `[c - r, c + r]` clipped to `0..len`.
#[inline]
pub(crate) fn window_range(c: usize, r: usize, len: usize) -> (usize, usize) {
    (c.saturating_sub(r), (c + r).min(len - 1))
}

/// Multi-channel 2-D convolution (cross-correlation, as in deep learning
/// frameworks) with zero padding `r`:
/// `out(i,j,k) = sum_b sum_{du,dv} W(k,b,du+r,dv+r) x(i+du, j+dv, b)`.
pub(crate) fn conv_direct(x: &ActivationTensor, filter: &CoocFilter) -> CoocTensor {
    let shape = x.shape();
    let (d, r, s) = (shape.d, filter.radius, filter.window());
    // Re-lay the kernel as (row, col, out, in) so one window tap is a
    // contiguous D x D block.
    let mut taps = vec![0.0; filter.len()];
    for a in 0..d {
        for b in 0..d {
            for du in 0..s {
                for dv in 0..s {
                    taps[((du * s + dv) * d + a) * d + b] = filter.weight(a, b, du, dv);
                }
            }
        }
    }
    let mut out = CoocTensor::zeros(shape);
    let mut slab = vec![0.0f64; d];
    for i in 0..shape.m {
        for j in 0..shape.n {
            let base = shape.index(i, j, 0);
            let (u0, u1) = window_range(i, r, shape.m);
            let (v0, v1) = window_range(j, r, shape.n);
            for u in u0..=u1 {
                for v in v0..=v1 {
                    for (dst, &src) in slab.iter_mut().zip(x.channels(u, v)) {
                        *dst = f64::from(src);
                    }
                    if slab.iter().all(|&a| a == 0.0) {
                        continue;
                    }
                    let du = u + r - i;
                    let dv = v + r - j;
                    let block = &taps[(du * s + dv) * d * d..(du * s + dv + 1) * d * d];
                    let acc = &mut out.data_mut()[base..base + d];
                    for (k, row) in block.chunks_exact(d).enumerate() {
                        acc[k] += row.iter().zip(&slab).map(|(w, a)| w * a).sum::<f64>();
                    }
                }
            }
        }
    }
    out
}

/// Convolution with a spatially constant filter whose weights are `off`
/// between distinct channels and `diag` on the diagonal:
/// `out(i,j,k) = off * box(sum_b x_b)(i,j) + (diag - off) * box(x_k)(i,j)`,
/// where `box` sums the clipped window. Uses summed-area tables, so the cost
/// is independent of `r` and linear in `D`.
fn conv_uniform(x: &ActivationTensor, r: usize, off: f64, diag: f64) -> CoocTensor {
    let shape = x.shape();
    let (m, n, d) = (shape.m, shape.n, shape.d);
    // Integral image over (m+1) x (n+1) x (d+1); the last channel slot
    // holds the all-channel total.
    let w = d + 1;
    let stride_row = (n + 1) * w;
    let mut sat = vec![0.0f64; (m + 1) * stride_row];
    let mut row_acc = vec![0.0f64; w];
    for i in 0..m {
        row_acc.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            let mut total = 0.0;
            for (acc, &a) in row_acc.iter_mut().zip(x.channels(i, j)) {
                let a = f64::from(a);
                *acc += a;
                total += a;
            }
            row_acc[d] += total;
            let cur = (i + 1) * stride_row + (j + 1) * w;
            let above = i * stride_row + (j + 1) * w;
            for c in 0..w {
                sat[cur + c] = sat[above + c] + row_acc[c];
            }
        }
    }
    let mut out = CoocTensor::zeros(shape);
    let mut boxed = vec![0.0f64; w];
    for i in 0..m {
        let (u0, u1) = window_range(i, r, m);
        for j in 0..n {
            let (v0, v1) = window_range(j, r, n);
            let br = (u1 + 1) * stride_row + (v1 + 1) * w;
            let bl = (u1 + 1) * stride_row + v0 * w;
            let tr = u0 * stride_row + (v1 + 1) * w;
            let tl = u0 * stride_row + v0 * w;
            for c in 0..w {
                boxed[c] = sat[br + c] - sat[bl + c] - sat[tr + c] + sat[tl + c];
            }
            let total = boxed[d];
            let base = shape.index(i, j, 0);
            for (k, dst) in out.data_mut()[base..base + d].iter_mut().enumerate() {
                *dst = off * total + (diag - off) * boxed[k];
            }
        }
    }
    out
}

/// Literal evaluation of the co-occurrence definition. Quadratic in the
/// window area and in `D`; meant as a reference.
pub fn cooc_bruteforce(t: &ActivationTensor, r: usize, thr: f64) -> Result<CoocTensor> {
    let shape = t.shape();
    if shape.d < 2 {
        return Err(Error::Domain(format!(
            "co-occurrence needs at least two channels, got {}",
            shape.d
        )));
    }
    let norm = 1.0 / (shape.d as f64 - 1.0);
    let mut out = CoocTensor::zeros(shape);
    for i in 0..shape.m {
        for j in 0..shape.n {
            for k in 0..shape.d {
                if f64::from(t.get(i, j, k)) <= thr {
                    continue;
                }
                let mut sum = 0.0;
                for u in 0..shape.m {
                    for v in 0..shape.n {
                        if i.abs_diff(u) > r || j.abs_diff(v) > r {
                            continue;
                        }
                        for w in 0..shape.d {
                            let a = f64::from(t.get(u, v, w));
                            if w != k && a > thr {
                                sum += a;
                            }
                        }
                    }
                }
                out.set(i, j, k, sum * norm);
            }
        }
    }
    Ok(out)
}

/// Per-channel total co-occurrence mass over all spatial locations.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelCoocVector {
    values: Vec<f64>,
}

impl ChannelCoocVector {
    pub fn new(values: Vec<f64>) -> Self {
        ChannelCoocVector { values }
    }

    pub fn depth(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

pub fn channel_cooc_vector(c: &CoocTensor) -> ChannelCoocVector {
    let d = c.shape().d;
    let mut values = vec![0.0; d];
    for slab in c.data().chunks_exact(d) {
        for (acc, v) in values.iter_mut().zip(slab) {
            *acc += v;
        }
    }
    ChannelCoocVector { values }
}

/// Pairwise Pearson correlation between channel co-occurrence vectors.
///
/// A constant vector has no defined correlation; its row and column are set
/// to zero (diagonal stays one) and a warning is logged.
pub fn cooc_correlation_matrix(vs: &[ChannelCoocVector]) -> Result<DMatrix<f64>> {
    if vs.len() < 2 {
        return Err(Error::Domain(format!(
            "correlation needs at least two vectors, got {}",
            vs.len()
        )));
    }
    let d = vs[0].depth();
    if let Some(bad) = vs.iter().find(|v| v.depth() != d) {
        return Err(Error::Dimension(format!(
            "vector depth {} vs {d}",
            bad.depth()
        )));
    }
    let centered: Vec<Option<Vec<f64>>> = vs
        .iter()
        .enumerate()
        .map(|(idx, v)| {
            let mean = v.total() / d as f64;
            let c: Vec<f64> = v.values.iter().map(|x| x - mean).collect();
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                log::warn!("co-occurrence vector {idx} has zero variance");
                None
            } else {
                Some(c.into_iter().map(|x| x / norm).collect())
            }
        })
        .collect();
    let n = vs.len();
    let mut out = DMatrix::<f64>::identity(n, n);
    for a in 0..n {
        for b in (a + 1)..n {
            let rho = match (&centered[a], &centered[b]) {
                (Some(x), Some(y)) => crate::tensor::dot(x, y).clamp(-1.0, 1.0),
                _ => 0.0,
            };
            out[(a, b)] = rho;
            out[(b, a)] = rho;
        }
    }
    Ok(out)
}

/// A spatial displacement: `dx` shifts columns, `dy` shifts rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Offset {
    pub dx: i32,
    pub dy: i32,
}

impl Offset {
    pub fn new(dx: i32, dy: i32) -> Self {
        Offset { dx, dy }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetSet {
    offsets: Vec<Offset>,
}

impl OffsetSet {
    pub fn new(offsets: Vec<Offset>) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::Domain("offset set is empty".into()));
        }
        Ok(OffsetSet { offsets })
    }

    /// The full `(2r+1)^2` grid, row-major (row shift outer).
    pub fn grid(r: usize) -> Self {
        let r = r as i32;
        let offsets = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| Offset { dx, dy }))
            .collect();
        OffsetSet { offsets }
    }

    pub fn offsets(&self) -> &[Offset] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Rows `i` (or columns) for which both `i` and `i + delta` are in `0..len`.
fn overlap(delta: i32, len: usize) -> Option<(usize, usize)> {
    let len = len as i64;
    let lo = 0.max(-(delta as i64));
    let hi = len.min(len - delta as i64);
    (lo < hi).then_some((lo as usize, hi as usize))
}

/// `max_o sum_p a^k_p a^w_{p+o}` over the offset set, with out-of-range
/// positions contributing zero.
pub fn shih_correlation(
    t: &ActivationTensor,
    k: usize,
    w: usize,
    offsets: &OffsetSet,
) -> Result<f64> {
    let shape = t.shape();
    if k >= shape.d || w >= shape.d {
        return Err(Error::Dimension(format!(
            "channel pair ({k}, {w}) out of range for depth {}",
            shape.d
        )));
    }
    if offsets.is_empty() {
        return Err(Error::Domain("offset set is empty".into()));
    }
    let mut best = f64::NEG_INFINITY;
    for o in offsets.offsets() {
        let mut sum = 0.0;
        if let (Some((i0, i1)), Some((j0, j1))) = (overlap(o.dy, shape.m), overlap(o.dx, shape.n)) {
            for i in i0..i1 {
                for j in j0..j1 {
                    let u = (i as i64 + o.dy as i64) as usize;
                    let v = (j as i64 + o.dx as i64) as usize;
                    sum += f64::from(t.get(i, j, k)) * f64::from(t.get(u, v, w));
                }
            }
        }
        if sum > best {
            best = sum;
        }
    }
    Ok(best)
}

/// Max-correlation co-occurrence baseline.
///
/// For every ordered channel pair `(k, w)` the offset `o*` maximizing the
/// correlation is selected (first in set order on ties), the map
/// `a^k_p * a^w_{p+o*}` is formed, and the maps are summed over `w` to give
/// one channel per `k`.
pub fn shih_cooc_tensor(t: &ActivationTensor, offsets: &OffsetSet) -> Result<CoocTensor> {
    if offsets.is_empty() {
        return Err(Error::Domain("offset set is empty".into()));
    }
    let shape = t.shape();
    let (m, n, d) = (shape.m, shape.n, shape.d);
    let wide: Vec<f64> = t.data().iter().map(|&v| f64::from(v)).collect();
    let a = ArrayView3::from_shape((m, n, d), &wide).expect("shape checked at construction");

    // Correlation of every channel pair at every offset, as one
    // (overlap x D)^T (overlap x D) product per offset.
    let mut best_val = vec![f64::NEG_INFINITY; d * d];
    let mut best_off = vec![0usize; d * d];
    for (oi, o) in offsets.offsets().iter().enumerate() {
        let gram = match (overlap(o.dy, m), overlap(o.dx, n)) {
            (Some((i0, i1)), Some((j0, j1))) => {
                let rows = (i1 - i0) * (j1 - j0);
                let src = a.slice(s![i0..i1, j0..j1, ..]).to_owned();
                let u0 = (i0 as i64 + o.dy as i64) as usize;
                let v0 = (j0 as i64 + o.dx as i64) as usize;
                let dst = a
                    .slice(s![u0..u0 + (i1 - i0), v0..v0 + (j1 - j0), ..])
                    .to_owned();
                let src = src.into_shape_with_order((rows, d)).expect("contiguous");
                let dst = dst.into_shape_with_order((rows, d)).expect("contiguous");
                src.t().dot(&dst)
            }
            _ => Array2::zeros((d, d)),
        };
        for k in 0..d {
            for w in 0..d {
                let v = gram[(k, w)];
                if v > best_val[k * d + w] {
                    best_val[k * d + w] = v;
                    best_off[k * d + w] = oi;
                }
            }
        }
    }

    let mut out = CoocTensor::zeros(shape);
    let mut partner = vec![0.0f64; m * n];
    for k in 0..d {
        partner.iter_mut().for_each(|v| *v = 0.0);
        for w in 0..d {
            let o = offsets.offsets()[best_off[k * d + w]];
            let (Some((i0, i1)), Some((j0, j1))) = (overlap(o.dy, m), overlap(o.dx, n)) else {
                continue;
            };
            for i in i0..i1 {
                let u = (i as i64 + o.dy as i64) as usize;
                for j in j0..j1 {
                    let v = (j as i64 + o.dx as i64) as usize;
                    partner[i * n + j] += wide[(u * n + v) * d + w];
                }
            }
        }
        for p in 0..m * n {
            out.data_mut()[p * d + k] = wide[p * d + k] * partner[p];
        }
    }
    Ok(out)
}

/// Channel-permuted copy: channel `k` of the input becomes channel
/// `perm[k]` of the output.
pub fn permute_channels<T: Copy + Default>(t: &Tensor3<T>, perm: &[usize]) -> Result<Tensor3<T>> {
    let shape: Shape = t.shape();
    if perm.len() != shape.d {
        return Err(Error::Dimension("permutation length".into()));
    }
    let mut data = vec![T::default(); shape.len()];
    for (src, dst) in t
        .data()
        .chunks_exact(shape.d)
        .zip(data.chunks_exact_mut(shape.d))
    {
        for (k, &v) in src.iter().enumerate() {
            dst[perm[k]] = v;
        }
    }
    Tensor3::from_vec(shape, data)
}
