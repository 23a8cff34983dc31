//! Per-image aggregation: activation tensor in, l2-normalized descriptor
//! out.

use std::fmt;
use std::str::FromStr;

use crate::cooc::{channel_cooc_vector, cooc_conv, make_filter, CoocFilter};
use crate::error::{Error, Result};
use crate::pooling::{
    bilinear_pool, channel_cooc_weights, compact_bilinear_pool, linear_weighted_pool,
    masked_tensor, signed_sqrt, spatial_cooc_weights, spatial_mask_center, spatial_mask_topdown,
    sum_pool, SpatialWeights, DEFAULT_EPS, DEFAULT_POWER_A, DEFAULT_POWER_B,
};
use crate::sketch::SketchParams;
use crate::tensor::{l2norm, mean_activation, ActivationTensor, Descriptor, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    /// Unweighted channel means.
    Ucrow,
    /// Channel and spatial co-occurrence weighted sum pooling.
    ChcoSct,
    /// Full `D x D` bilinear pooling of activations and co-occurrences.
    Bp,
    /// Count-sketch compact bilinear pooling.
    Cbp,
}

impl FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ucrow" => Ok(PoolMode::Ucrow),
            "chco-sct" => Ok(PoolMode::ChcoSct),
            "bp" => Ok(PoolMode::Bp),
            "cbp" => Ok(PoolMode::Cbp),
            other => Err(Error::Domain(format!("unknown pooling mode {other:?}"))),
        }
    }
}

impl fmt::Display for PoolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolMode::Ucrow => "ucrow",
            PoolMode::ChcoSct => "chco-sct",
            PoolMode::Bp => "bp",
            PoolMode::Cbp => "cbp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    #[default]
    None,
    TopDown,
    Center,
}

impl MaskMode {
    pub fn weights(&self, m: usize, n: usize) -> Option<SpatialWeights> {
        match self {
            MaskMode::None => None,
            MaskMode::TopDown => Some(spatial_mask_topdown(m, n)),
            MaskMode::Center => Some(spatial_mask_center(m, n)),
        }
    }
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MaskMode::None),
            "topdown" => Ok(MaskMode::TopDown),
            "center" => Ok(MaskMode::Center),
            other => Err(Error::Domain(format!("unknown mask mode {other:?}"))),
        }
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskMode::None => "none",
            MaskMode::TopDown => "topdown",
            MaskMode::Center => "center",
        })
    }
}

/// Where the co-occurrence threshold comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Mean activation of each tensor.
    Mean,
    Fixed(f64),
}

impl Threshold {
    pub fn resolve(&self, t: &ActivationTensor) -> f64 {
        match *self {
            Threshold::Mean => mean_activation(t),
            Threshold::Fixed(v) => v,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub pool: PoolMode,
    pub mask: MaskMode,
    pub radius: usize,
    /// Diagonal value of the canonical filter when no trained filter is
    /// given.
    pub diag: f64,
    pub threshold: Threshold,
    pub power_a: f64,
    pub power_b: f64,
    pub eps: f64,
    pub sketch_dim: usize,
    pub seed: u64,
    /// Signed square root before the final normalization (bilinear modes).
    pub signed_sqrt: bool,
    /// Trained filter; overrides `radius` and `diag`.
    pub filter: Option<CoocFilter>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            pool: PoolMode::ChcoSct,
            mask: MaskMode::None,
            radius: crate::cooc::DEFAULT_RADIUS,
            diag: 0.0,
            threshold: Threshold::Mean,
            power_a: DEFAULT_POWER_A,
            power_b: DEFAULT_POWER_B,
            eps: DEFAULT_EPS,
            sketch_dim: crate::sketch::DEFAULT_SKETCH_DIM,
            seed: 0,
            signed_sqrt: false,
            filter: None,
        }
    }
}

/// Aggregates tensors with one configuration. Holds the filter and the
/// sketch, which depend only on the depth, so they are built once.
#[derive(Debug, Clone)]
pub struct Aggregator {
    cfg: PipelineConfig,
    depth: usize,
    filter: Option<CoocFilter>,
    sketch: Option<SketchParams>,
}

impl Aggregator {
    pub fn new(cfg: PipelineConfig, depth: usize) -> Result<Self> {
        let filter = match (&cfg.filter, cfg.pool) {
            (_, PoolMode::Ucrow) => None,
            (Some(f), _) => {
                if f.depth() != depth {
                    return Err(Error::Dimension(format!(
                        "filter depth {} vs tensor depth {depth}",
                        f.depth()
                    )));
                }
                Some(f.clone())
            }
            (None, _) => Some(make_filter(depth, cfg.radius, cfg.diag)?),
        };
        let sketch = match cfg.pool {
            PoolMode::Cbp => Some(SketchParams::generate(depth, cfg.sketch_dim, cfg.seed)?),
            _ => None,
        };
        Ok(Aggregator {
            cfg,
            depth,
            filter,
            sketch,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// Output dimension for this depth.
    pub fn output_dim(&self) -> usize {
        match self.cfg.pool {
            PoolMode::Ucrow | PoolMode::ChcoSct => self.depth,
            PoolMode::Bp => self.depth * self.depth,
            PoolMode::Cbp => self.cfg.sketch_dim,
        }
    }

    /// The unnormalized descriptor.
    pub fn pool(&self, t: &ActivationTensor) -> Result<Descriptor> {
        let Shape { m, n, d } = t.shape();
        if d != self.depth {
            return Err(Error::Dimension(format!(
                "tensor depth {d} vs aggregator depth {}",
                self.depth
            )));
        }
        let mask = self.cfg.mask.weights(m, n);
        if self.cfg.pool == PoolMode::Ucrow {
            return Ok(match &mask {
                Some(w) => sum_pool(&masked_tensor(t, w)?),
                None => sum_pool(t),
            });
        }
        let filter = self.filter.as_ref().expect("built for co-occurrence modes");
        let c = cooc_conv(t, filter, self.cfg.threshold.resolve(t))?;
        let pooled = match self.cfg.pool {
            PoolMode::ChcoSct => {
                let alpha = spatial_cooc_weights(&c, self.cfg.power_a, self.cfg.power_b)?;
                let beta = channel_cooc_weights(&channel_cooc_vector(&c), self.cfg.eps)?;
                linear_weighted_pool(t, &alpha, &beta, mask.as_ref())?
            }
            PoolMode::Bp => {
                let b = match &mask {
                    Some(w) => bilinear_pool(&masked_tensor(t, w)?, &c)?,
                    None => bilinear_pool(t, &c)?,
                };
                // Row-major flattening.
                Descriptor::new(b.transpose().iter().copied().collect())
            }
            PoolMode::Cbp => {
                let sketch = self.sketch.as_ref().expect("built for cbp");
                compact_bilinear_pool(t, &c, sketch, mask.as_ref())?
            }
            PoolMode::Ucrow => unreachable!(),
        };
        Ok(pooled)
    }

    /// Pooled and, if configured, signed-square-rooted, before any
    /// normalization.
    pub fn unnormalized(&self, t: &ActivationTensor) -> Result<Descriptor> {
        let pooled = self.pool(t)?;
        Ok(if self.cfg.signed_sqrt {
            signed_sqrt(&pooled)
        } else {
            pooled
        })
    }

    /// l2-normalized descriptor.
    pub fn describe(&self, t: &ActivationTensor) -> Result<Descriptor> {
        Ok(l2norm(&self.unnormalized(t)?))
    }
}
