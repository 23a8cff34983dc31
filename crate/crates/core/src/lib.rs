//! Co-occurrence based image descriptors.
//!
//! The crate turns precomputed convolutional activation tensors into
//! compact retrieval descriptors. The pipeline per image is:
//!
//! 1. threshold the activations at their mean and compute the
//!    co-occurrence tensor with a single convolution ([`cooc`]);
//! 2. pool activations and co-occurrences into one vector, either by
//!    co-occurrence weighted sum pooling or by (compact) bilinear pooling
//!    ([`pooling`]);
//! 3. l2-normalize, PCA-whiten and l2-normalize again ([`postproc`]).
//!
//! Descriptors are ranked by Euclidean distance with optional query
//! expansion ([`retrieval`]) and scored with average precision ([`eval`]).
//! The co-occurrence filter can be trained with a contrastive objective
//! ([`trainer`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
mod binio;
pub mod cooc;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod pooling;
pub mod postproc;
pub mod retrieval;
pub mod sketch;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{ActivationTensor, BinaryMask, CoocTensor, Descriptor, Shape, Tensor3};
