use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// Summary of one completed epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean combined training loss over the epoch's minibatches.
    pub train_loss: f64,
    pub train_mle: f64,
    pub train_entropy: f64,
    pub train_reg: f64,
    /// Mean combined loss on the eval set after the epoch.
    pub eval_loss: f64,
    pub eval_mae: f64,
    pub eval_xauc: f64,
    pub eval_kl: f64,
    pub underflows: usize,
    pub clamps: usize,
    /// Extra per-epoch metrics supplied by a training hook.
    pub extra: BTreeMap<String, f64>,
    pub wall_seconds: f64,
}

/// Per-epoch records of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

fn argmin(records: &[EpochRecord], key: impl Fn(&EpochRecord) -> f64) -> Option<&EpochRecord> {
    records.iter().min_by(|a, b| key(a).total_cmp(&key(b)))
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> Option<&EpochRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Epoch with the lowest eval loss; ties go to the earliest.
    pub fn best(&self) -> Option<&EpochRecord> {
        argmin(&self.records, |r| r.eval_loss)
    }

    /// Epoch with the lowest eval MAE; ties go to the earliest.
    pub fn best_mae(&self) -> Option<&EpochRecord> {
        argmin(&self.records, |r| r.eval_mae)
    }

    fn extra_keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = self.records.iter().flat_map(|r| r.extra.keys().cloned()).collect();
        keys.sort();
        keys.dedup();
        keys
    }

    /// Deterministic columns only; wall time goes to [`Self::write_timing_csv`].
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let extra = self.extra_keys();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = [
            "epoch", "train_loss", "train_mle", "train_entropy", "train_reg", "eval_loss", "eval_mae", "eval_xauc",
            "eval_kl", "underflows", "clamps",
        ]
        .map(String::from)
        .to_vec();
        header.extend(extra.iter().cloned());
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.train_mle.to_string(),
                r.train_entropy.to_string(),
                r.train_reg.to_string(),
                r.eval_loss.to_string(),
                r.eval_mae.to_string(),
                r.eval_xauc.to_string(),
                r.eval_kl.to_string(),
                r.underflows.to_string(),
                r.clamps.to_string(),
            ];
            row.extend(extra.iter().map(|k| r.extra.get(k).map_or(String::new(), f64::to_string)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_timing_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "wall_seconds"])?;
        for r in &self.records {
            w.write_record([r.epoch.to_string(), r.wall_seconds.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, history_path: &Path, timing_path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(history_path)?)?;
        self.write_timing_csv(std::fs::File::create(timing_path)?)
    }
}
