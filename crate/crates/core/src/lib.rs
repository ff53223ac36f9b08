//! Biomedical abbreviation expansion.
//!
//! Labeled disambiguation data is harvested from abstracts through the
//! `Definition (ABBR)` pattern, definitions are grouped into sense
//! inventories, and one classifier per abbreviation is trained over a
//! pluggable token representation. Numeric code is generic over
//! [`Scalar`] (`f32` or `f64`); the aliases below fix the precision.

pub mod atomic;
pub mod classifier;
pub mod corpus;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod expansion;
pub mod extraction;
pub mod grouping;
pub mod linalg;
pub mod metrics;
pub mod scalar;
pub mod synthetic;

pub use error::{Error, Result};
pub use scalar::{softmax, Scalar};

pub use classifier::{
    Architecture, ClassifierModel, ModelInput, Provider, TrainConfig, TrainedModel, Weights,
};
pub use corpus::{AbstractRecord, TokenizedSentence};
pub use dataset::{AbbrevDataset, LabeledInstance, Split};
pub use embedding::{
    ContextualFile, ContextualLayerRecord, ContextualSource, ContextualStore, Vocabulary,
};
pub use expansion::{Expansion, ModelRegistry};
pub use extraction::{DefinitionMention, RawLabeledInstance};
pub use grouping::{GroupingThresholds, MeshFeatureMap, SenseGroup, SenseInventory};
pub use metrics::{ConfusionMatrix, MetricsReport, Predictor};

/// Single-precision classifier, the default for training runs.
pub type Model32 = ClassifierModel<f32>;
/// Double-precision classifier, used for gradient checks.
pub type Model64 = ClassifierModel<f64>;
pub type Weights32 = Weights<f32>;
pub type Weights64 = Weights<f64>;
pub type Trained32 = TrainedModel<f32>;
pub type Trained64 = TrainedModel<f64>;
pub type Registry32 = ModelRegistry<f32>;
pub type Registry64 = ModelRegistry<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type Matrix64 = linalg::Matrix<f64>;
