//! Seeded synthetic activation tensors with class structure, for tests,
//! demos and benchmarks that must run without a CNN.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{ActivationTensor, Shape, Tensor3};

/// Uniform `[0, 1)` activations.
pub fn uniform_tensor(rng: &mut impl Rng, shape: Shape) -> ActivationTensor {
    let data = (0..shape.len())
        .map(|_| rng.random_range(0.0f32..1.0))
        .collect();
    Tensor3::from_vec(shape, data).expect("shape has positive dims")
}

/// A landmark-like class: every channel responds with a class-specific
/// gain around a class-specific location.
#[derive(Debug, Clone)]
pub struct ClassPrototype {
    gains: Vec<f64>,
    centers: Vec<(f64, f64)>,
}

impl ClassPrototype {
    pub fn random(rng: &mut impl Rng, shape: Shape) -> Self {
        let gains = (0..shape.d)
            .map(|_| {
                // Heavy-tailed gains: few strong channels per class.
                let u: f64 = rng.random_range(0.0..1.0);
                u.powi(3)
            })
            .collect();
        let centers = (0..shape.d)
            .map(|_| {
                (
                    rng.random_range(0.0..shape.m as f64),
                    rng.random_range(0.0..shape.n as f64),
                )
            })
            .collect();
        ClassPrototype { gains, centers }
    }

    /// One noisy view of the class: channel centers jitter by up to
    /// `shift` cells, gains are perturbed multiplicatively and uniform
    /// background noise of amplitude `noise` is added.
    pub fn sample(
        &self,
        rng: &mut impl Rng,
        shape: Shape,
        noise: f64,
        shift: f64,
    ) -> ActivationTensor {
        let sigma = (shape.m.min(shape.n) as f64 / 4.0).max(0.75);
        let jitter = Normal::new(1.0, noise).expect("finite noise");
        let mut data = vec![0.0f32; shape.len()];
        for k in 0..shape.d {
            let gain = self.gains[k] * jitter.sample(rng).max(0.0);
            let ci = self.centers[k].0 + rng.random_range(-shift..=shift);
            let cj = self.centers[k].1 + rng.random_range(-shift..=shift);
            for i in 0..shape.m {
                for j in 0..shape.n {
                    let r2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
                    let bump = gain * (-r2 / (2.0 * sigma * sigma)).exp();
                    let bg = noise * rng.random_range(0.0..0.25);
                    data[shape.index(i, j, k)] = (bump + bg) as f32;
                }
            }
        }
        Tensor3::from_vec(shape, data).expect("shape has positive dims")
    }
}

/// A labeled set of `classes x per_class` tensors, class-major.
#[derive(Debug, Clone)]
pub struct ClassDataset {
    pub tensors: Vec<ActivationTensor>,
    pub labels: Vec<usize>,
    pub prototypes: Vec<ClassPrototype>,
}

pub fn class_dataset(
    seed: u64,
    classes: usize,
    per_class: usize,
    shape: Shape,
    noise: f64,
) -> ClassDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<ClassPrototype> = (0..classes)
        .map(|_| ClassPrototype::random(&mut rng, shape))
        .collect();
    let mut tensors = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, proto) in prototypes.iter().enumerate() {
        for _ in 0..per_class {
            tensors.push(proto.sample(&mut rng, shape, noise, 1.0));
            labels.push(c);
        }
    }
    ClassDataset {
        tensors,
        labels,
        prototypes,
    }
}
