use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EgmnError, Result};
use crate::metrics::{DEFAULT_XAUC_PAIRS, DEFAULT_XAUC_SEED};
use crate::network::Architecture;
use crate::objective::{LossTerms, LossWeights};

/// Hyperparameters, seeds and ablation switches of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Gaussian component count.
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub hidden: Vec<usize>,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub xauc_seed: u64,
    pub xauc_pairs: usize,
    pub disable_exponential: bool,
    pub disable_gaussians: bool,
    pub drop_mle: bool,
    pub drop_entropy: bool,
    pub drop_reg: bool,
    /// Use the configured shuffle seed as is. When false the shuffle seed
    /// is mixed with OS entropy, so repeated runs differ.
    pub deterministic: bool,
    /// Return the weights of the epoch with the lowest eval MAE instead of
    /// the final ones.
    pub keep_best: bool,
    /// Seconds per model time unit; defaults to the mean training label.
    pub time_scale: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 10,
            alpha: 0.1,
            beta: 1.0,
            lr: 0.1,
            batch: 2048,
            epochs: 20,
            hidden: vec![128, 64],
            init_seed: 0,
            shuffle_seed: 1,
            xauc_seed: DEFAULT_XAUC_SEED,
            xauc_pairs: DEFAULT_XAUC_PAIRS,
            disable_exponential: false,
            disable_gaussians: false,
            drop_mle: false,
            drop_entropy: false,
            drop_reg: false,
            deterministic: false,
            keep_best: false,
            time_scale: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EgmnError::Config(m));
        if self.disable_exponential && self.disable_gaussians {
            return bad("disable_exponential and disable_gaussians cannot both be set".into());
        }
        if self.disable_exponential && self.k == 0 {
            return bad("disable_exponential needs k >= 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if self.xauc_pairs == 0 {
            return bad("xauc_pairs must be >= 1".into());
        }
        if let Some(s) = self.time_scale {
            if !(s.is_finite() && s > 0.0) {
                return bad(format!("time_scale must be > 0, got {s}"));
            }
        }
        if self.drop_mle && self.drop_entropy && self.drop_reg {
            return bad("all loss terms are dropped".into());
        }
        self.loss_weights().validate()
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn loss_terms(&self) -> LossTerms {
        LossTerms {
            mle: !self.drop_mle,
            entropy: !self.drop_entropy,
            reg: !self.drop_reg,
        }
    }

    /// Gaussian count after the ablation switches.
    pub fn effective_k(&self) -> usize {
        if self.disable_gaussians {
            0
        } else {
            self.k
        }
    }

    pub fn architecture(&self, time_scale: f64) -> Architecture {
        Architecture {
            hidden: self.hidden.clone(),
            k: self.effective_k(),
            exponential: !self.disable_exponential,
            time_scale,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| EgmnError::Config(format!("train config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
