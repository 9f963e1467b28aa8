use std::collections::BTreeMap;

use crate::data::synth::Oracle;
use crate::data::Dataset;
use crate::dist::EgmParams;
use crate::error::{EgmnError, Result};
use crate::metrics::{kl_from_masses, pair_bin_spec, param_masses, BinSpec};
use crate::par::Execution;

/// Mean binned `KL(oracle || model)` over the interactions of a dataset.
///
/// Each distinct user-video pair gets its own bins, spanning the oracle's
/// 99.5% quantile; the oracle masses are computed once.
pub struct OracleKl {
    pair_of: Vec<usize>,
    pairs: Vec<(BinSpec, Vec<f64>)>,
}

impl OracleKl {
    pub fn new(oracle: &Oracle, ds: &Dataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(EgmnError::Data("no interactions to compare".into()));
        }
        let mut index: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        let mut pairs = Vec::new();
        let mut pair_of = Vec::with_capacity(ds.len());
        for r in ds.records() {
            let key = (r.user_id.as_str(), r.video_id.as_str());
            let id = match index.get(&key) {
                Some(&id) => id,
                None => {
                    let truth = oracle.params(key.0, key.1)?;
                    let spec = pair_bin_spec(&truth)?;
                    pairs.push((spec, param_masses(&truth, &spec)));
                    index.insert(key, pairs.len() - 1);
                    pairs.len() - 1
                }
            };
            pair_of.push(id);
        }
        Ok(OracleKl { pair_of, pairs })
    }

    pub fn distinct_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// `model[i]` is the predicted distribution of interaction `i`.
    pub fn mean_kl(&self, model: &[EgmParams], exec: Execution) -> Result<f64> {
        if model.len() != self.pair_of.len() {
            return Err(EgmnError::Shape(format!("{} predictions for {} interactions", model.len(), self.pair_of.len())));
        }
        let idx: Vec<usize> = (0..model.len()).collect();
        let parts = exec.map_chunks(&idx, 256, |_, chunk| -> Result<f64> {
            chunk.iter().try_fold(0.0, |acc, &i| {
                let (spec, truth) = &self.pairs[self.pair_of[i]];
                Ok(acc + kl_from_masses(truth, &param_masses(&model[i], spec), spec.epsilon)?)
            })
        });
        let mut sum = 0.0;
        for p in parts {
            sum += p?;
        }
        Ok(sum / model.len() as f64)
    }
}
