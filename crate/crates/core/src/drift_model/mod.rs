//! Drift predictors: TransDrift and the No-Drift, Additive and MLP baselines.

mod instance;
mod model;
mod net;

pub use instance::DriftInstance;
pub use model::{
    additive_delta_closed_form, cosine_embedding_loss, fit_additive, train_model, EpochRecord, History, PredictorModel,
    COSINE_EPS, DEGENERATE_NORM,
};
pub use net::{
    AdditiveConfig, AdditiveLoss, MlpConfig, MlpNet, ModelConfig, Network, PredictorKind, Schedule, TransDriftConfig,
    TransDriftNet,
};
