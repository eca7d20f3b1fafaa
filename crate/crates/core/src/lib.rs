//! Hierarchical temporal attention for video-language alignment.
//!
//! - [`numerics`]: tensors, kernels and reverse-mode differentiation
//! - [`masks`]: token layout and the SlT / GST attention masks
//! - [`towers`]: the video encoder and a small text encoder
//! - [`alignment`]: dual-text info-NCE objective and AdamW training
//! - [`retrieval`]: similarity, dual-softmax re-scoring and recall metrics
//! - [`datapipe`]: transcript segmentation, multi-scale clips, summaries
//! - [`selftest`]: quick invariant checks used by `hta selftest`

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod datapipe;
pub mod error;
pub mod masks;
pub mod numerics;
pub mod retrieval;
pub mod selftest;
pub mod towers;

pub use error::{Error, Result};
