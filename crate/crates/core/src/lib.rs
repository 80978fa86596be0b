//! Learn order, sigmoid-order and rectangle embeddings of transitive
//! relations, generate learn/dev/eval folds whose held-out pairs cannot be
//! recovered by transitive closure alone, and score models against the
//! closure baseline.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for callers that do not care.

pub mod cli;
pub mod embed;
pub mod error;
pub mod folds;
pub mod metrics;
pub mod poset;
pub mod scalar;
pub mod train;

pub use embed::{EmbeddingModel, LossHyper, ModelKind, PairGradient};
pub use error::{Error, Result};
pub use folds::{FoldSet, Label, LabeledPair, Protocol, SplitConfig};
pub use metrics::{Classification, EvalReport};
pub use poset::{Closure, ColumnOrder, NodeId, NodeKind, Pair, PartialOrder};
pub use scalar::Scalar;
pub use train::{HyperGrid, TrainConfig, TrainHistory};

pub type EmbeddingModel32 = EmbeddingModel<f32>;
pub type EmbeddingModel64 = EmbeddingModel<f64>;
pub type LossHyper32 = LossHyper<f32>;
pub type LossHyper64 = LossHyper<f64>;
pub type HyperGrid32 = HyperGrid<f32>;
pub type HyperGrid64 = HyperGrid<f64>;
