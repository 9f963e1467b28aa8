//! Exponential-Gaussian mixture network (EGMN) for watch-time regression.
//!
//! A conditional mixture of one exponential and `K` Gaussians is predicted
//! per user-video interaction by a small feed-forward network. The crate
//! covers the whole loop:
//!
//! - [`dist`]: closed-form density, CDF, mean, quantiles and sampling of the
//!   exponential-Gaussian mixture.
//! - [`network`]: embeddings, ReLU backbone and the four parameter heads,
//!   with hand-derived reverse-mode gradients.
//! - [`objective`]: likelihood, entropy and regression losses, their
//!   weighted sum, and the Adagrad update.
//! - [`data`]: CSV ingestion, preprocessing, splitting and a synthetic world
//!   whose true per-pair distributions are known.
//! - [`metrics`]: MAE, XAUC, ROC AUC and histogram KL divergence.
//! - [`runner`]: training loop, evaluation and prediction.
//!
//! Batch work (per-example gradients, pair sampling, bin masses, Monte Carlo
//! draws) runs on rayon when the `parallel` feature is enabled and falls back
//! to a sequential loop otherwise. Both paths reduce in a fixed chunk order
//! and therefore produce bit-identical results.

pub mod data;
pub mod dist;
pub mod error;
pub mod metrics;
pub mod network;
pub mod objective;
pub mod par;
pub mod runner;

pub use dist::EgmParams;
pub use error::{EgmnError, Result};
pub use par::Execution;
