//! Temporal graph neural network for road selection and road-variance
//! prediction, trained through the differentiable filter.

mod features;
mod gradcheck;
mod model;
mod select;
mod train;

pub use features::{
    build_features, normalized_adjacency, road_dim, user_features, EpochFeatures, FeatureConfig, FeatureMask,
    FeatureScales, PriorProbs, PriorSource, USER_DIM,
};
pub use model::{Batch, BatchStats, BnStats, HiddenState, Model, ModelConfig, ModelKind, StepOutput, TapeState};
pub use train::{
    sample_windows, train, unroll, IterationRecord, StepInput, TrainConfig, Training, TrainingDrive, Unrolled, Window,
};
pub use select::TgnnSelector;
pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport, ParameterCheck};
