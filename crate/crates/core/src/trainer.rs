//! Contrastive training of the co-occurrence filter.
//!
//! The descriptor of a tensor is
//! `l2norm(compact_bilinear_pool(A, cooc_conv(A, F, mean(A))))`, and only
//! the filter `F` is learned. The threshold mask depends on `A` alone, so
//! the whole chain is linear in `F` up to the final normalization and the
//! gradient is exact.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cooc::{cooc_conv, make_filter, window_range, CoocFilter, TRAINABLE_DIAG};
use crate::error::{Error, Result};
use crate::pooling::compact_bilinear_pool;
use crate::sketch::SketchParams;
use crate::tensor::{
    apply_mask, l2norm, mean_activation, threshold_mask, ActivationTensor, Descriptor,
};

/// Two tensors and whether they show the same object.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub a: ActivationTensor,
    pub b: ActivationTensor,
    pub similar: bool,
}

impl PairSample {
    pub fn new(a: ActivationTensor, b: ActivationTensor, similar: bool) -> Result<Self> {
        if a.shape().d != b.shape().d {
            return Err(Error::Dimension(format!(
                "pair depths differ: {} vs {}",
                a.shape().d,
                b.shape().d
            )));
        }
        Ok(PairSample { a, b, similar })
    }

    pub fn label(&self) -> f64 {
        if self.similar {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Contrastive margin `tau`.
    pub margin: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Drives pair shuffling and the validation split.
    pub seed: u64,
    /// Fraction of pairs held out for model selection.
    pub val_fraction: f64,
    pub radius: usize,
    /// Initial value of the filter's channel diagonal.
    pub diag_init: f64,
    pub sketch_dim: usize,
    pub sketch_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 0.7,
            learning_rate: 1e-9,
            beta1: 0.85,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 5,
            epochs: 30,
            seed: 0,
            val_fraction: 0.2,
            radius: crate::cooc::DEFAULT_RADIUS,
            diag_init: TRAINABLE_DIAG,
            sketch_dim: crate::sketch::DEFAULT_SKETCH_DIM,
            sketch_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Domain(msg));
        if !(self.margin > 0.0) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.learning_rate >= 0.0) {
            return bad(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad(format!(
                "Adam betas must lie in (0, 1), got {} and {}",
                self.beta1, self.beta2
            ));
        }
        if !(self.adam_eps > 0.0) {
            return bad("Adam epsilon must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.val_fraction
            ));
        }
        Ok(())
    }
}

/// Adam moment estimates for the filter weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            first: vec![0.0; len],
            second: vec![0.0; len],
            step: 0,
        }
    }
}

/// Descriptor of `t` under filter `f`; identical to the inference path.
pub fn forward_descriptor(
    t: &ActivationTensor,
    f: &CoocFilter,
    p: &SketchParams,
) -> Result<Descriptor> {
    Ok(l2norm(&unnormalized_descriptor(t, f, p)?))
}

fn unnormalized_descriptor(
    t: &ActivationTensor,
    f: &CoocFilter,
    p: &SketchParams,
) -> Result<Descriptor> {
    let c = cooc_conv(t, f, mean_activation(t))?;
    compact_bilinear_pool(t, &c, p, None)
}

/// `Y d^2 + (1 - Y) max(tau - d, 0)^2` with `d = ||fa - fb||`.
pub fn contrastive_loss(fa: &Descriptor, fb: &Descriptor, similar: bool, tau: f64) -> Result<f64> {
    let d = distance(fa, fb)?;
    Ok(if similar {
        d * d
    } else {
        (tau - d).max(0.0).powi(2)
    })
}

fn distance(fa: &Descriptor, fb: &Descriptor) -> Result<f64> {
    if fa.dim() != fb.dim() {
        return Err(Error::Dimension(format!(
            "descriptor dims {} vs {}",
            fa.dim(),
            fb.dim()
        )));
    }
    Ok(fa
        .values()
        .iter()
        .zip(fb.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Loss of one pair and its gradient with respect to every filter weight,
/// in the filter's `(out, in, row, col)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Either side produced a zero descriptor.
    pub degenerate: bool,
}

/// Exact gradient of the contrastive loss of `pair` with respect to `f`.
pub fn grad_filter(
    pair: &PairSample,
    f: &CoocFilter,
    p: &SketchParams,
    tau: f64,
) -> Result<PairGradient> {
    let ya = unnormalized_descriptor(&pair.a, f, p)?;
    let yb = unnormalized_descriptor(&pair.b, f, p)?;
    let fa = l2norm(&ya);
    let fb = l2norm(&yb);
    let degenerate = fa.is_zero() || fb.is_zero();
    let d = distance(&fa, &fb)?;
    let loss = contrastive_loss(&fa, &fb, pair.similar, tau)?;

    // dL/dfa = c (fa - fb), dL/dfb = -c (fa - fb).
    let coef = if pair.similar {
        2.0
    } else if d > 0.0 && d < tau {
        -2.0 * (tau - d) / d
    } else {
        0.0
    };
    let mut grad = vec![0.0; f.len()];
    if coef == 0.0 {
        return Ok(PairGradient {
            loss,
            grad,
            degenerate,
        });
    }
    let diff: Vec<f64> = fa
        .values()
        .iter()
        .zip(fb.values())
        .map(|(a, b)| coef * (a - b))
        .collect();
    let neg: Vec<f64> = diff.iter().map(|v| -v).collect();
    backprop(&pair.a, &ya, &fa, &diff, f, p, &mut grad);
    backprop(&pair.b, &yb, &fb, &neg, f, p, &mut grad);
    Ok(PairGradient {
        loss,
        grad,
        degenerate,
    })
}

/// Accumulates into `grad` the filter gradient of one side, given
/// `dL/df` for its normalized descriptor `f = y / ||y||`.
fn backprop(
    t: &ActivationTensor,
    y: &Descriptor,
    f_norm: &Descriptor,
    grad_f: &[f64],
    filter: &CoocFilter,
    p: &SketchParams,
    grad: &mut [f64],
) {
    let norm = y.norm();
    if norm == 0.0 {
        return;
    }
    // Through the normalization: (I - f f^T) g / ||y||.
    let proj: f64 = f_norm.values().iter().zip(grad_f).map(|(a, b)| a * b).sum();
    let grad_y: Vec<f64> = grad_f
        .iter()
        .zip(f_norm.values())
        .map(|(g, f)| (g - f * proj) / norm)
        .collect();

    let shape = t.shape();
    let (d, dim) = (shape.d, p.dim());
    let mask = threshold_mask(t, mean_activation(t));
    let masked = apply_mask(t, &mask).expect("mask built from the same tensor");
    let scale = 1.0 / (d as f64 - 1.0);

    // Gradient with respect to the raw convolution output, restricted to
    // thresholded activations.
    let mut grad_conv = vec![0.0; shape.len()];
    let mut sketch_a: Vec<(usize, f64)> = Vec::with_capacity(d);
    let mut dense = vec![0.0; dim];
    for loc in 0..shape.locations() {
        let keep = &mask.data()[loc * d..(loc + 1) * d];
        if !keep.iter().any(|&k| k) {
            continue;
        }
        let a: Vec<f64> = t.data()[loc * d..(loc + 1) * d]
            .iter()
            .map(|&v| f64::from(v))
            .collect();
        p.first.project_into(&a, &mut dense);
        sketch_a.clear();
        sketch_a.extend(
            dense
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, *v)),
        );
        for w in 0..d {
            if !keep[w] {
                continue;
            }
            let shift = p.second.hash[w];
            let mut acc = 0.0;
            for &(n, u) in &sketch_a {
                let m = n + shift;
                acc += u * grad_y[if m >= dim { m - dim } else { m }];
            }
            grad_conv[loc * d + w] = f64::from(p.second.sign[w]) * acc * scale;
        }
    }

    // conv(i,j,k) = sum_{b,du,dv} W(k,b,du,dv) x(i+du-r, j+dv-r, b)
    let r = filter.radius();
    let s = filter.window();
    for i in 0..shape.m {
        for j in 0..shape.n {
            let go = &grad_conv[shape.index(i, j, 0)..shape.index(i, j, 0) + d];
            if go.iter().all(|&g| g == 0.0) {
                continue;
            }
            let (u0, u1) = window_range(i, r, shape.m);
            let (v0, v1) = window_range(j, r, shape.n);
            for u in u0..=u1 {
                for v in v0..=v1 {
                    let x = masked.channels(u, v);
                    if x.iter().all(|&a| a == 0.0) {
                        continue;
                    }
                    let (du, dv) = (u + r - i, v + r - j);
                    for (k, &g) in go.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        for (b, &xb) in x.iter().enumerate() {
                            grad[((k * d + b) * s + du) * s + dv] += g * f64::from(xb);
                        }
                    }
                }
            }
        }
    }
}

/// One bias-corrected Adam update of `f` along `-g`.
pub fn adam_step(
    state: &mut AdamState,
    f: &mut CoocFilter,
    g: &[f64],
    cfg: &TrainConfig,
) -> Result<()> {
    if g.len() != f.len() || state.first.len() != f.len() {
        return Err(Error::Dimension(format!(
            "gradient {} / state {} vs filter {}",
            g.len(),
            state.first.len(),
            f.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let weights = f.weights_mut();
    for (((w, m), v), &gi) in weights
        .iter_mut()
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
        .zip(g)
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    /// 0 is the untrained filter.
    pub epoch: usize,
    pub train: f64,
    pub val: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Filter with the lowest validation loss (training loss when nothing
    /// is held out), including the untrained one.
    pub best: CoocFilter,
    pub best_epoch: usize,
    pub last: CoocFilter,
    pub history: Vec<EpochLoss>,
    pub sketch: SketchParams,
}

fn mean_loss(pairs: &[&PairSample], f: &CoocFilter, p: &SketchParams, tau: f64) -> Result<f64> {
    let losses: Vec<f64> = pairs
        .par_iter()
        .map(|pair| {
            let fa = forward_descriptor(&pair.a, f, p)?;
            let fb = forward_descriptor(&pair.b, f, p)?;
            contrastive_loss(&fa, &fb, pair.similar, tau)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Mini-batch training of a canonical filter from labeled pairs.
pub fn train(pairs: &[PairSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let Some(first) = pairs.first() else {
        return Err(Error::Domain("no training pairs".into()));
    };
    let depth = first.a.shape().d;
    if let Some(bad) = pairs
        .iter()
        .find(|p| p.a.shape().d != depth || p.b.shape().d != depth)
    {
        return Err(Error::Dimension(format!(
            "pair depth {}/{} vs {depth}",
            bad.a.shape().d,
            bad.b.shape().d
        )));
    }
    if !pairs.iter().any(|p| p.similar) || pairs.iter().all(|p| p.similar) {
        log::warn!("training pairs are all of one label; the loss has a trivial optimum");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if pairs.len() >= 2 {
        ((pairs.len() as f64 * cfg.val_fraction).round() as usize).min(pairs.len() - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let val: Vec<&PairSample> = val_idx.iter().map(|&i| &pairs[i]).collect();
    let mut train_set: Vec<&PairSample> = train_idx.iter().map(|&i| &pairs[i]).collect();

    let sketch = SketchParams::generate(depth, cfg.sketch_dim, cfg.sketch_seed)?;
    let mut filter = make_filter(depth, cfg.radius, cfg.diag_init)?;
    filter.weights_mut();
    let mut state = AdamState::new(filter.len());

    let evaluate = |f: &CoocFilter, epoch: usize, train_set: &[&PairSample]| -> Result<EpochLoss> {
        Ok(EpochLoss {
            epoch,
            train: mean_loss(train_set, f, &sketch, cfg.margin)?,
            val: if val.is_empty() {
                None
            } else {
                Some(mean_loss(&val, f, &sketch, cfg.margin)?)
            },
        })
    };
    let score = |e: &EpochLoss| e.val.unwrap_or(e.train);

    let initial = evaluate(&filter, 0, &train_set)?;
    let mut best = (score(&initial), 0usize, filter.clone());
    let mut history = vec![initial];

    for epoch in 1..=cfg.epochs {
        train_set.shuffle(&mut rng);
        for batch in train_set.chunks(cfg.batch_size) {
            let grads: Vec<PairGradient> = batch
                .par_iter()
                .map(|pair| grad_filter(pair, &filter, &sketch, cfg.margin))
                .collect::<Result<_>>()?;
            if grads.iter().all(|g| g.degenerate) {
                return Err(Error::Domain(format!(
                    "epoch {epoch}: every pair in a batch of {} has a zero descriptor \
                     (no activation above the mean threshold co-occurs)",
                    batch.len()
                )));
            }
            let mut mean = vec![0.0; filter.len()];
            for g in &grads {
                for (acc, v) in mean.iter_mut().zip(&g.grad) {
                    *acc += v;
                }
            }
            let inv = 1.0 / grads.len() as f64;
            mean.iter_mut().for_each(|v| *v *= inv);
            adam_step(&mut state, &mut filter, &mean, cfg)?;
        }
        let e = evaluate(&filter, epoch, &train_set)?;
        log::info!(
            "epoch {epoch}: train loss {:.6}{}",
            e.train,
            e.val
                .map(|v| format!(", val loss {v:.6}"))
                .unwrap_or_default()
        );
        if score(&e) < best.0 {
            best = (score(&e), epoch, filter.clone());
        }
        history.push(e);
    }

    Ok(TrainOutcome {
        best: best.2,
        best_epoch: best.1,
        last: filter,
        history,
        sketch,
    })
}
