//! Continual classification with spectral adapter merging on
//! dual-imbalanced task streams.
//!
//! The crate builds synthetic class-incremental streams whose class
//! frequencies are long-tailed and whose per-step class counts follow a
//! geometric schedule, trains one bottleneck adapter per step (optionally
//! with Balanced Softmax), folds each trained adapter into a single
//! accumulated adapter by aligning weight matrices in a shared SVD basis
//! with class-count weighting and rank-wise gating, and evaluates the
//! resulting model with accumulated-accuracy metrics.

pub mod error;
pub mod harness;
pub mod linalg;
pub mod merge;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod selftest;
pub mod stream;
pub mod train;

pub use error::{Error, Result};
