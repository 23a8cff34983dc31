//! Dense `M x N x D` tensors, the COOCT file container, masking and
//! descriptor normalization.
//!
//! Storage is row-major with the channel index varying fastest, so the
//! `D` activations of one spatial location form a contiguous slab.

use std::fs;
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

const TENSOR_MAGIC: &[u8; 4] = b"COOC";
const TENSOR_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    /// Rows (`i`).
    pub m: usize,
    /// Columns (`j`).
    pub n: usize,
    /// Channels (`k`).
    pub d: usize,
}

impl Shape {
    pub fn new(m: usize, n: usize, d: usize) -> Self {
        Shape { m, n, d }
    }

    pub fn len(&self) -> usize {
        self.m * self.n * self.d
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn locations(&self) -> usize {
        self.m * self.n
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.d + k
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.m, self.n, self.d)
    }
}

/// A dense three-way array in `(i, j, k)` channel-fastest layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    shape: Shape,
    data: Vec<T>,
}

/// Activations of one convolutional layer. Stored in single precision,
/// which is also the on-disk precision.
pub type ActivationTensor = Tensor3<f32>;

/// Per-location, per-channel co-occurrence mass. Computed in double
/// precision.
pub type CoocTensor = Tensor3<f64>;

/// Thresholded support of an activation tensor.
pub type BinaryMask = Tensor3<bool>;

impl<T: Copy> Tensor3<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.m == 0 || shape.n == 0 || shape.d == 0 {
            return Err(Error::Dimension(format!(
                "tensor dimensions must be positive, got {shape}"
            )));
        }
        if data.len() != shape.len() {
            return Err(Error::Dimension(format!(
                "shape {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor3 { shape, data })
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        assert!(
            shape.m > 0 && shape.n > 0 && shape.d > 0,
            "tensor dimensions must be positive"
        );
        Tensor3 {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.shape.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: T) {
        let idx = self.shape.index(i, j, k);
        self.data[idx] = value;
    }

    /// The `D` channel values at spatial location `(i, j)`.
    #[inline]
    pub fn channels(&self, i: usize, j: usize) -> &[T] {
        let start = self.shape.index(i, j, 0);
        &self.data[start..start + self.shape.d]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Tensor3<U> {
        Tensor3 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Tensor3<f32> {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    /// Widen to double precision (exact).
    pub fn to_f64(&self) -> Tensor3<f64> {
        self.map(f64::from)
    }
}

impl Tensor3<f64> {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Reads a COOCT tensor file.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<ActivationTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        Error::Corrupt(msg) => Error::Corrupt(format!("{}: {msg}", path.display())),
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Writes a COOCT tensor file.
pub fn save_tensor(t: &ActivationTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn encode_tensor(t: &ActivationTensor) -> Vec<u8> {
    let shape = t.shape();
    let mut w = Writer::with_capacity(17 + 4 * shape.len());
    w.bytes(TENSOR_MAGIC);
    w.u8(TENSOR_VERSION);
    w.u32(shape.m as u32);
    w.u32(shape.n as u32);
    w.u32(shape.d as u32);
    w.f32_slice(t.data());
    w.finish()
}

pub fn decode_tensor(bytes: &[u8]) -> Result<ActivationTensor> {
    let mut r = Reader::new(bytes);
    r.magic(TENSOR_MAGIC, TENSOR_VERSION)?;
    let m = r.u32()? as usize;
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    if m == 0 || n == 0 || d == 0 {
        return Err(Error::Format(format!("non-positive shape {m}x{n}x{d}")));
    }
    let count = m
        .checked_mul(n)
        .and_then(|v| v.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("shape {m}x{n}x{d} overflows")))?;
    if r.remaining() != count * 4 {
        return Err(Error::Corrupt(format!(
            "shape {m}x{n}x{d} needs {} payload bytes, found {}",
            count * 4,
            r.remaining()
        )));
    }
    let data = r.f32_vec(count)?;
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "non-finite value {} at element {pos}",
            data[pos]
        )));
    }
    Tensor3::from_vec(Shape::new(m, n, d), data)
}

/// Mean of all activations; the default co-occurrence threshold.
pub fn mean_activation(t: &ActivationTensor) -> f64 {
    let sum: f64 = t.data().iter().map(|&v| f64::from(v)).sum();
    sum / t.shape().len() as f64
}

/// Marks activations strictly greater than `thr`.
pub fn threshold_mask(t: &ActivationTensor, thr: f64) -> BinaryMask {
    t.map(|v| f64::from(v) > thr)
}

pub fn apply_mask(t: &ActivationTensor, mask: &BinaryMask) -> Result<ActivationTensor> {
    if t.shape() != mask.shape() {
        return Err(Error::Dimension(format!(
            "tensor {} vs mask {}",
            t.shape(),
            mask.shape()
        )));
    }
    let data = t
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&v, &keep)| if keep { v } else { 0.0 })
        .collect();
    Tensor3::from_vec(t.shape(), data)
}

/// A real-valued image descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    values: Vec<f64>,
}

impl Descriptor {
    pub fn new(values: Vec<f64>) -> Self {
        Descriptor { values }
    }

    pub fn zeros(dim: usize) -> Self {
        Descriptor {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn dot(&self, other: &Descriptor) -> f64 {
        dot(&self.values, &other.values)
    }

    /// Stored as a `1 x 1 x dim` tensor so descriptors share the COOCT
    /// container.
    pub fn to_tensor(&self) -> ActivationTensor {
        let data = self.values.iter().map(|&v| v as f32).collect();
        Tensor3::from_vec(Shape::new(1, 1, self.dim()), data)
            .expect("descriptor dimension must be positive")
    }

    pub fn from_tensor(t: &ActivationTensor) -> Result<Self> {
        let s = t.shape();
        if s.m != 1 || s.n != 1 {
            return Err(Error::Dimension(format!(
                "descriptor container must be 1x1xD, got {s}"
            )));
        }
        Ok(Descriptor::new(
            t.data().iter().map(|&v| f64::from(v)).collect(),
        ))
    }
}

impl From<Vec<f64>> for Descriptor {
    fn from(values: Vec<f64>) -> Self {
        Descriptor::new(values)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scales `v` to unit Euclidean norm. The zero vector is returned
/// unchanged and a degenerate-descriptor warning is logged.
pub fn l2norm(v: &Descriptor) -> Descriptor {
    let norm = v.norm();
    if norm == 0.0 {
        log::warn!("degenerate descriptor: zero vector left unnormalized");
        return v.clone();
    }
    Descriptor::new(v.values.iter().map(|x| x / norm).collect())
}
