//! Training loop, evaluation and prediction.

mod config;
mod history;
mod oracle_kl;
mod predict;
mod train;

pub use config::TrainConfig;
pub use history::{EpochRecord, TrainHistory};
pub use oracle_kl::OracleKl;
pub use predict::{check_schema, evaluate, predict, predict_params, Prediction};
pub use train::{batch_gradient, train, train_with_hook, BatchGradient, EpochContext, TrainOutcome, GRAD_CHUNK};
