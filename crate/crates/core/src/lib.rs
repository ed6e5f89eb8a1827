//! Statistical analysis of replicated spatial point patterns through kernel
//! embeddings.
//!
//! Each pattern is mapped to `sum_i k(., x_i)` for a Gaussian kernel `k`,
//! smoothed onto a common anchor grid, and projected onto the leading
//! eigenvectors of the anchor Gram matrix. The resulting finite feature
//! vectors feed Box's M, MANOVA and ANOVA tests and Gaussian discriminant
//! classifiers.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod config;
pub mod error;
pub mod experiments;
mod io;
pub mod kernel;
pub mod mvstats;
pub mod pipeline;
pub mod pointpat;
pub mod spectral;

pub use io::write_atomic;

pub use error::{Error, Result};
