//! Part-based analysis of font impressions.
//!
//! Glyph images are reduced to sets of 128-D local shape descriptors, a
//! permutation-invariant set network learns to predict a font's impression
//! words from those sets, and the learned per-part norms are accumulated over a
//! k-means codebook to show which local shapes drive which impressions.
//!
//! The crate is organised as the pipeline runs:
//!
//! - [`dataset`]: manifests, vocabulary filtering, splits and the synthetic
//!   glyph generator.
//! - [`sift`]: scale-space keypoints and unit-norm gradient descriptors.
//! - [`deepsets`]: the `f(Σ g(x))` regressor, its exact gradients and training.
//! - [`codebook`]: k-means visual words and importance-weighted histograms.
//! - [`analysis`]: delta matrix biclustering and impression similarity.
//! - [`eval`]: per-impression ranking, average precision and stability tables.
//! - [`pipeline`]: configuration and the cached, resumable CLI stages.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod codebook;
pub mod dataset;
pub mod deepsets;
mod error;
pub mod eval;
pub(crate) mod io;
mod par;
pub mod pipeline;
pub mod rng;
pub mod sift;

pub use error::{Error, Result};
