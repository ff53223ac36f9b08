//! Per-abbreviation sense classifiers and their training.

mod adam;
mod ffn;
mod lstm;
mod model;
mod params;
mod train;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use ffn::{classify, Dense, FfnParams, FfnTrace};
pub use lstm::{
    bilstm_at, bilstm_at_backward, bilstm_forward, BiLstmParams, BiLstmStates, LstmCell, LstmTrace,
    PositionTrace,
};
pub use model::{
    argmax, fetch_contextual, Architecture, ClassifierModel, ModelInput, ModelPredictor,
    Prediction, Provider,
};
pub use params::{clip_global_norm, ParamBlock, Weights};
pub use train::{init_model, train_classifier, EpochLog, TrainConfig, TrainedModel, TrainingLog};
