use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{EgmnError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    #[default]
    Random,
    Temporal,
}

impl std::str::FromStr for SplitMode {
    type Err = EgmnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SplitMode::Random),
            "temporal" => Ok(SplitMode::Temporal),
            other => Err(EgmnError::Config(format!("unknown split mode {other:?}"))),
        }
    }
}

/// Partitions a dataset into disjoint train and eval parts.
///
/// Random mode shuffles with `seed`; temporal mode puts the earliest
/// `train_fraction` of interactions in train. Each part keeps the original
/// record order.
pub fn split(ds: &Dataset, mode: SplitMode, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(EgmnError::Config(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let n = ds.len();
    if n < 2 {
        return Err(EgmnError::Data(format!("cannot split {n} records")));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    match mode {
        SplitMode::Random => order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
        SplitMode::Temporal => {
            let ts = ds
                .records()
                .iter()
                .map(|r| r.timestamp)
                .collect::<Option<Vec<i64>>>()
                .ok_or_else(|| EgmnError::Data("temporal split needs a timestamp on every record".into()))?;
            order.sort_by_key(|&i| ts[i]);
        }
    }
    let mut train = order[..n_train].to_vec();
    let mut eval = order[n_train..].to_vec();
    train.sort_unstable();
    eval.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&eval)))
}
