//! Nail-disease image classification: dataset ingestion and splitting,
//! preprocessing, a small differentiable CNN with pluggable backbones,
//! training with early stopping and FGSM adversarial training, evaluation,
//! Grad-CAM and Shapley explanations, and a synthetic dataset generator.

// `!(x < y)` comparisons are deliberate: NaN must take the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod explain;
pub mod models;
pub mod pipeline;
pub mod plot;
pub mod synthdata;
pub mod taxonomy;
pub mod training;

pub use error::{Error, Result};
pub use taxonomy::{LabelTaxonomy, CATEGORY_NAMES, NUM_CLASSES};
