//! Aggregation of an activation tensor and its co-occurrence tensor into a
//! single descriptor: co-occurrence weighted sum pooling, (compact)
//! bilinear pooling and fixed spatial priors.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::cooc::ChannelCoocVector;
use crate::error::{Error, Result};
use crate::sketch::{CircularAccumulator, CircularMethod, SketchParams};
use crate::tensor::{ActivationTensor, CoocTensor, Descriptor, Shape, Tensor3};

/// Default power-normalization exponents for the spatial weights.
pub const DEFAULT_POWER_A: f64 = 2.0;
pub const DEFAULT_POWER_B: f64 = 2.0;
/// Default guard in the channel weights.
pub const DEFAULT_EPS: f64 = 1e-6;

/// An `M x N` weight map over spatial locations.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    m: usize,
    n: usize,
    values: Vec<f64>,
}

impl SpatialWeights {
    pub fn new(m: usize, n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != m * n {
            return Err(Error::Dimension(format!(
                "{m}x{n} weights need {} values, got {}",
                m * n,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite spatial weight".into()));
        }
        Ok(SpatialWeights { m, n, values })
    }

    pub fn ones(m: usize, n: usize) -> Self {
        SpatialWeights {
            m,
            n,
            values: vec![1.0; m * n],
        }
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Elementwise product of two maps of the same size.
    pub fn product(&self, other: &SpatialWeights) -> Result<SpatialWeights> {
        self.check(other.m, other.n)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        Ok(SpatialWeights {
            m: self.m,
            n: self.n,
            values,
        })
    }

    fn check(&self, m: usize, n: usize) -> Result<()> {
        if self.m != m || self.n != n {
            return Err(Error::Dimension(format!(
                "spatial weights {}x{} vs tensor {m}x{n}",
                self.m, self.n
            )));
        }
        Ok(())
    }

    /// One CSV row per image row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks_exact(self.n) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    /// Binary 8-bit PGM, min-max scaled to `[0, 255]`. A constant map is
    /// written as all zeros.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let mut out = format!("P5\n{} {}\n255\n", self.n, self.m).into_bytes();
        let span = hi - lo;
        out.extend(self.values.iter().map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        }));
        out
    }
}

/// Per-channel weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelWeights {
    values: Vec<f64>,
}

impl ChannelWeights {
    pub fn new(values: Vec<f64>) -> Self {
        ChannelWeights { values }
    }

    pub fn ones(d: usize) -> Self {
        ChannelWeights {
            values: vec![1.0; d],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Power-normalized spatial co-occurrence weights:
/// `alpha(i,j) = (S(i,j) / ||S||_a)^(1/b)` with `S(i,j) = sum_k C(i,j,k)`.
pub fn spatial_cooc_weights(c: &CoocTensor, a: f64, b: f64) -> Result<SpatialWeights> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Domain(format!(
            "power exponents must be positive, got a={a}, b={b}"
        )));
    }
    let shape = c.shape();
    let s: Vec<f64> = c
        .data()
        .chunks_exact(shape.d)
        .map(|slab| slab.iter().sum())
        .collect();
    let denom = s.iter().map(|v| v.abs().powf(a)).sum::<f64>().powf(1.0 / a);
    if denom == 0.0 {
        log::warn!("degenerate image: no spatial co-occurrence mass");
        return SpatialWeights::new(shape.m, shape.n, vec![0.0; s.len()]);
    }
    let values = s.into_iter().map(|v| (v / denom).powf(1.0 / b)).collect();
    SpatialWeights::new(shape.m, shape.n, values)
}

/// Inverse-frequency channel weights:
/// `beta(k) = ln(sum_l V(l) / (eps + V(k)))`.
pub fn channel_cooc_weights(v: &ChannelCoocVector, eps: f64) -> Result<ChannelWeights> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    let total = v.total();
    if total == 0.0 {
        log::warn!("degenerate image: no channel co-occurrence mass");
        return Ok(ChannelWeights::new(vec![0.0; v.depth()]));
    }
    Ok(ChannelWeights::new(
        v.values()
            .iter()
            .map(|&x| (total / (eps + x)).ln())
            .collect(),
    ))
}

/// Top-down prior: row `i` gets `(M - i) / M`.
pub fn spatial_mask_topdown(m: usize, n: usize) -> SpatialWeights {
    let values = (0..m)
        .flat_map(|i| std::iter::repeat_n((m - i) as f64 / m as f64, n))
        .collect();
    SpatialWeights { m, n, values }
}

/// Center prior: isotropic Gaussian at the map center with
/// `sigma = min(M, N) / 3`.
pub fn spatial_mask_center(m: usize, n: usize) -> SpatialWeights {
    let sigma = m.min(n) as f64 / 3.0;
    let ci = (m as f64 - 1.0) / 2.0;
    let cj = (n as f64 - 1.0) / 2.0;
    let values = (0..m)
        .flat_map(|i| {
            (0..n).map(move |j| {
                let r2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
                (-r2 / (2.0 * sigma * sigma)).exp()
            })
        })
        .collect();
    SpatialWeights { m, n, values }
}

/// `f(k) = sum_{i,j} mask(i,j) alpha(i,j) beta(k) A(i,j,k)`, not normalized.
pub fn linear_weighted_pool(
    t: &ActivationTensor,
    alpha: &SpatialWeights,
    beta: &ChannelWeights,
    mask: Option<&SpatialWeights>,
) -> Result<Descriptor> {
    let shape = t.shape();
    alpha.check(shape.m, shape.n)?;
    if let Some(mask) = mask {
        mask.check(shape.m, shape.n)?;
    }
    if beta.values.len() != shape.d {
        return Err(Error::Dimension(format!(
            "{} channel weights vs depth {}",
            beta.values.len(),
            shape.d
        )));
    }
    let mut f = vec![0.0; shape.d];
    for (p, slab) in t.data().chunks_exact(shape.d).enumerate() {
        let w = alpha.values[p] * mask.map_or(1.0, |m| m.values[p]);
        if w == 0.0 {
            continue;
        }
        for (acc, &a) in f.iter_mut().zip(slab) {
            *acc += w * f64::from(a);
        }
    }
    for (acc, b) in f.iter_mut().zip(&beta.values) {
        *acc *= b;
    }
    Ok(Descriptor::new(f))
}

/// Per-channel spatial mean.
pub fn sum_pool(t: &ActivationTensor) -> Descriptor {
    let shape = t.shape();
    let mut f = vec![0.0; shape.d];
    for slab in t.data().chunks_exact(shape.d) {
        for (acc, &a) in f.iter_mut().zip(slab) {
            *acc += f64::from(a);
        }
    }
    let scale = 1.0 / shape.locations() as f64;
    Descriptor::new(f.into_iter().map(|v| v * scale).collect())
}

fn check_same_shape(t: Shape, c: Shape) -> Result<()> {
    if t != c {
        return Err(Error::Dimension(format!(
            "activation tensor {t} vs co-occurrence tensor {c}"
        )));
    }
    Ok(())
}

/// `B(k,w) = sum_{i,j} A(i,j,k) C(i,j,w)`.
pub fn bilinear_pool(t: &ActivationTensor, c: &CoocTensor) -> Result<DMatrix<f64>> {
    let shape = t.shape();
    check_same_shape(shape, c.shape())?;
    let d = shape.d;
    let mut b = DMatrix::<f64>::zeros(d, d);
    for (slab_a, slab_c) in t.data().chunks_exact(d).zip(c.data().chunks_exact(d)) {
        for (w, &cw) in slab_c.iter().enumerate() {
            if cw == 0.0 {
                continue;
            }
            let mut col = b.column_mut(w);
            for (k, &ak) in slab_a.iter().enumerate() {
                col[k] += f64::from(ak) * cw;
            }
        }
    }
    Ok(b)
}

/// Compact bilinear pooling: count-sketch both branches at every location
/// and accumulate their circular convolution. Inner products between
/// outputs estimate inner products between the full bilinear matrices.
pub fn compact_bilinear_pool(
    t: &ActivationTensor,
    c: &CoocTensor,
    p: &SketchParams,
    mask: Option<&SpatialWeights>,
) -> Result<Descriptor> {
    compact_bilinear_pool_with(t, c, p, mask, CircularMethod::Auto)
}

pub fn compact_bilinear_pool_with(
    t: &ActivationTensor,
    c: &CoocTensor,
    p: &SketchParams,
    mask: Option<&SpatialWeights>,
    method: CircularMethod,
) -> Result<Descriptor> {
    let shape = t.shape();
    check_same_shape(shape, c.shape())?;
    if p.depth() != shape.d {
        return Err(Error::Dimension(format!(
            "sketch depth {} vs tensor depth {}",
            p.depth(),
            shape.d
        )));
    }
    if let Some(mask) = mask {
        mask.check(shape.m, shape.n)?;
    }
    let d = shape.d;
    let dim = p.dim();
    let mut acc = CircularAccumulator::new(dim, method);
    let mut a = vec![0.0; d];
    let mut sx = vec![0.0; dim];
    let mut sy = vec![0.0; dim];
    for (loc, (slab_a, slab_c)) in t
        .data()
        .chunks_exact(d)
        .zip(c.data().chunks_exact(d))
        .enumerate()
    {
        let w = mask.map_or(1.0, |m| m.values[loc]);
        if w == 0.0 || slab_c.iter().all(|&v| v == 0.0) {
            continue;
        }
        for (dst, &src) in a.iter_mut().zip(slab_a) {
            *dst = w * f64::from(src);
        }
        if a.iter().all(|&v| v == 0.0) {
            continue;
        }
        p.first.project_into(&a, &mut sx);
        p.second.project_into(slab_c, &mut sy);
        acc.add(&sx, &sy);
    }
    Ok(Descriptor::new(acc.finish()))
}

/// `A'(i,j,k) = mask(i,j) A(i,j,k)`.
pub fn masked_tensor(t: &ActivationTensor, mask: &SpatialWeights) -> Result<ActivationTensor> {
    let shape = t.shape();
    mask.check(shape.m, shape.n)?;
    let mut data = t.data().to_vec();
    for (slab, &w) in data.chunks_exact_mut(shape.d).zip(&mask.values) {
        for v in slab {
            *v = (f64::from(*v) * w) as f32;
        }
    }
    Tensor3::from_vec(shape, data)
}

/// `sign(x) sqrt(|x|)` elementwise.
pub fn signed_sqrt(d: &Descriptor) -> Descriptor {
    Descriptor::new(
        d.values()
            .iter()
            .map(|&v| v.signum() * v.abs().sqrt())
            .collect(),
    )
}
