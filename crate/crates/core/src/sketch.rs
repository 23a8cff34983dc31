//! Count sketches for compact bilinear pooling.
//!
//! Each input branch gets its own hash `h: [0, D) -> [0, d)` and sign
//! `s: [0, D) -> {-1, +1}`. Both are drawn from one SplitMix64 stream seeded
//! with `seed`, in the fixed order `h1[0..D]`, `s1[0..D]`, `h2[0..D]`,
//! `s2[0..D]`. A hash is the draw modulo `d`; a sign is `+1` when the draw's
//! least significant bit is set and `-1` otherwise.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Default sketch dimension.
pub const DEFAULT_SKETCH_DIM: usize = 8192;

/// SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountSketch {
    pub hash: Vec<usize>,
    pub sign: Vec<i8>,
}

impl CountSketch {
    /// `out(m) = sum_{k : h(k) = m} s(k) x(k)`; `out` is overwritten.
    pub fn project_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for ((&h, &s), &v) in self.hash.iter().zip(&self.sign).zip(x) {
            out[h] += f64::from(s) * v;
        }
    }

    pub fn project(&self, x: &[f64], dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        self.project_into(x, &mut out);
        out
    }
}

/// Hash/sign pairs for both bilinear branches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SketchParams {
    depth: usize,
    dim: usize,
    seed: u64,
    /// Applied to the activation branch.
    pub first: CountSketch,
    /// Applied to the co-occurrence branch.
    pub second: CountSketch,
}

impl SketchParams {
    pub fn generate(depth: usize, dim: usize, seed: u64) -> Result<Self> {
        if depth == 0 || dim == 0 {
            return Err(Error::Domain(format!(
                "sketch needs positive depth and dimension, got D={depth}, d={dim}"
            )));
        }
        let mut rng = SplitMix64::new(seed);
        let hashes = |rng: &mut SplitMix64| -> Vec<usize> {
            (0..depth)
                .map(|_| (rng.next_u64() % dim as u64) as usize)
                .collect()
        };
        let signs = |rng: &mut SplitMix64| -> Vec<i8> {
            (0..depth)
                .map(|_| if rng.next_u64() & 1 == 1 { 1 } else { -1 })
                .collect()
        };
        let h1 = hashes(&mut rng);
        let s1 = signs(&mut rng);
        let h2 = hashes(&mut rng);
        let s2 = signs(&mut rng);
        Ok(SketchParams {
            depth,
            dim,
            seed,
            first: CountSketch { hash: h1, sign: s1 },
            second: CountSketch { hash: h2, sign: s2 },
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// How the circular convolution of the two sketches is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CircularMethod {
    /// `O(d^2)` accumulation.
    Direct,
    /// Forward transforms, pointwise product, one inverse transform.
    Fft,
    /// Direct for `d <= 64`, transform otherwise.
    Auto,
}

/// Accumulates `sum_p x_p (*) y_p` (circular convolution) over a stream of
/// sketch pairs.
pub(crate) enum CircularAccumulator {
    Direct {
        acc: Vec<f64>,
    },
    Fft {
        forward: Arc<dyn Fft<f64>>,
        inverse: Arc<dyn Fft<f64>>,
        acc: Vec<Complex<f64>>,
        bx: Vec<Complex<f64>>,
        by: Vec<Complex<f64>>,
        scratch: Vec<Complex<f64>>,
    },
}

impl CircularAccumulator {
    pub fn new(dim: usize, method: CircularMethod) -> Self {
        let use_fft = match method {
            CircularMethod::Direct => false,
            CircularMethod::Fft => true,
            CircularMethod::Auto => dim > 64,
        };
        if !use_fft {
            return CircularAccumulator::Direct {
                acc: vec![0.0; dim],
            };
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(dim);
        let inverse = planner.plan_fft_inverse(dim);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        let zero = Complex::new(0.0, 0.0);
        CircularAccumulator::Fft {
            forward,
            inverse,
            acc: vec![zero; dim],
            bx: vec![zero; dim],
            by: vec![zero; dim],
            scratch: vec![zero; scratch_len],
        }
    }

    pub fn add(&mut self, x: &[f64], y: &[f64]) {
        match self {
            CircularAccumulator::Direct { acc } => {
                let d = acc.len();
                for (a, &xa) in x.iter().enumerate() {
                    if xa == 0.0 {
                        continue;
                    }
                    for (b, &yb) in y.iter().enumerate() {
                        let m = a + b;
                        acc[if m >= d { m - d } else { m }] += xa * yb;
                    }
                }
            }
            CircularAccumulator::Fft {
                forward,
                acc,
                bx,
                by,
                scratch,
                ..
            } => {
                for (dst, &v) in bx.iter_mut().zip(x) {
                    *dst = Complex::new(v, 0.0);
                }
                for (dst, &v) in by.iter_mut().zip(y) {
                    *dst = Complex::new(v, 0.0);
                }
                forward.process_with_scratch(bx, scratch);
                forward.process_with_scratch(by, scratch);
                for ((a, p), q) in acc.iter_mut().zip(bx.iter()).zip(by.iter()) {
                    *a += p * q;
                }
            }
        }
    }

    pub fn finish(self) -> Vec<f64> {
        match self {
            CircularAccumulator::Direct { acc } => acc,
            CircularAccumulator::Fft {
                inverse,
                mut acc,
                mut scratch,
                ..
            } => {
                let d = acc.len() as f64;
                inverse.process_with_scratch(&mut acc, &mut scratch);
                acc.into_iter().map(|c| c.re / d).collect()
            }
        }
    }
}

/// Circular convolution of two equal-length vectors.
pub fn circular_convolve(x: &[f64], y: &[f64], method: CircularMethod) -> Vec<f64> {
    assert_eq!(x.len(), y.len());
    let mut acc = CircularAccumulator::new(x.len(), method);
    acc.add(x, y);
    acc.finish()
}
