//! Wall-clock comparison of the convolution route against the
//! max-correlation baseline.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cooc::{cooc_conv, make_filter, shih_cooc_tensor, OffsetSet};
use crate::error::{Error, Result};
use crate::synthetic::uniform_tensor;
use crate::tensor::{mean_activation, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub shape: Shape,
    pub radius: usize,
    pub reps: usize,
    /// Mean milliseconds per call.
    pub conv_ms: f64,
    pub baseline_ms: f64,
    pub total: Duration,
}

impl BenchReport {
    /// Baseline time over convolution time.
    pub fn speedup(&self) -> f64 {
        self.baseline_ms / self.conv_ms
    }
}

/// Times both routes on one seeded uniform tensor. The offset set of the
/// baseline is the full `(2r+1)^2` grid, the same window as the filter.
/// Both routes get one untimed warm-up call.
pub fn run_bench(shape: Shape, radius: usize, reps: usize, seed: u64) -> Result<BenchReport> {
    if reps == 0 {
        return Err(Error::Domain("bench needs at least one repetition".into()));
    }
    let start = Instant::now();
    let t = uniform_tensor(&mut ChaCha8Rng::seed_from_u64(seed), shape);
    let filter = make_filter(shape.d, radius, 0.0)?;
    let thr = mean_activation(&t);
    let offsets = OffsetSet::grid(radius);

    let time = |f: &dyn Fn() -> Result<()>| -> Result<f64> {
        f()?;
        let t0 = Instant::now();
        for _ in 0..reps {
            f()?;
        }
        Ok(t0.elapsed().as_secs_f64() * 1e3 / reps as f64)
    };
    let conv_ms = time(&|| cooc_conv(&t, &filter, thr).map(drop))?;
    let baseline_ms = time(&|| shih_cooc_tensor(&t, &offsets).map(drop))?;

    Ok(BenchReport {
        shape,
        radius,
        reps,
        conv_ms,
        baseline_ms,
        total: start.elapsed(),
    })
}
