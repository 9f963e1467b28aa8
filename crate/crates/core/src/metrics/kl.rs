use std::io::Write;

use crate::data::percentile;
use crate::dist::EgmParams;
use crate::error::{EgmnError, Result};
use crate::par::Execution;

pub const DEFAULT_BINS: usize = 100;
pub const DEFAULT_UPPER_PERCENTILE: f64 = 99.5;
pub const DEFAULT_KL_EPSILON: f64 = 1e-9;

const MASS_CHUNK: usize = 256;

/// Histogram layout: `bins` equal bins on `[0, upper]` plus one overflow bin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinSpec {
    pub bins: usize,
    pub upper: f64,
    pub epsilon: f64,
}

impl BinSpec {
    pub fn new(bins: usize, upper: f64) -> Result<Self> {
        let s = BinSpec {
            bins,
            upper,
            epsilon: DEFAULT_KL_EPSILON,
        };
        s.validate()?;
        Ok(s)
    }

    /// Default layout with `upper` at the 99.5th percentile of `labels`.
    pub fn from_labels(labels: &[f64]) -> Result<Self> {
        if labels.is_empty() {
            return Err(EgmnError::Domain("no labels to bin".into()));
        }
        Self::new(DEFAULT_BINS, percentile(labels, DEFAULT_UPPER_PERCENTILE))
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 || !(self.upper > 0.0 && self.upper.is_finite()) || !(self.epsilon > 0.0) {
            return Err(EgmnError::Domain(format!(
                "degenerate bin spec: {} bins, upper {}, epsilon {}",
                self.bins, self.upper, self.epsilon
            )));
        }
        Ok(())
    }

    /// Number of masses including the overflow bin.
    pub fn len(&self) -> usize {
        self.bins + 1
    }

    pub fn edge(&self, b: usize) -> f64 {
        self.upper * b as f64 / self.bins as f64
    }

    fn index(&self, t: f64) -> usize {
        if t > self.upper {
            self.bins
        } else {
            ((t / self.upper * self.bins as f64) as usize).min(self.bins - 1)
        }
    }
}

/// Normalized histogram of observed watch times.
pub fn empirical_masses(labels: &[f64], spec: &BinSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if labels.is_empty() {
        return Err(EgmnError::Domain("no labels to bin".into()));
    }
    let mut counts = vec![0u64; spec.len()];
    for &t in labels {
        counts[spec.index(t)] += 1;
    }
    Ok(counts.into_iter().map(|c| c as f64 / labels.len() as f64).collect())
}

/// Analytic bin masses of one distribution. Mass below zero lands in the
/// first bin and mass above `upper` in the overflow bin.
pub fn param_masses(p: &EgmParams, spec: &BinSpec) -> Vec<f64> {
    let cdfs: Vec<f64> = (1..=spec.bins).map(|b| p.cdf(spec.edge(b))).collect();
    let mut out = Vec::with_capacity(spec.len());
    out.push(cdfs[0]);
    out.extend(cdfs.windows(2).map(|w| (w[1] - w[0]).max(0.0)));
    out.push((1.0 - cdfs[spec.bins - 1]).max(0.0));
    out
}

/// Mean of the per-example analytic masses.
pub fn predicted_masses(params: &[EgmParams], spec: &BinSpec, exec: Execution) -> Result<Vec<f64>> {
    spec.validate()?;
    if params.is_empty() {
        return Err(EgmnError::Domain("no predictions to bin".into()));
    }
    let parts = exec.map_chunks(params, MASS_CHUNK, |_, chunk| {
        let mut acc = vec![0.0; spec.len()];
        for p in chunk {
            for (a, m) in acc.iter_mut().zip(param_masses(p, spec)) {
                *a += m;
            }
        }
        acc
    });
    let mut total = vec![0.0; spec.len()];
    for part in parts {
        for (t, m) in total.iter_mut().zip(part) {
            *t += m;
        }
    }
    let n = params.len() as f64;
    Ok(total.into_iter().map(|m| m / n).collect())
}

/// `KL(p || q)` after adding `epsilon` to every mass and renormalizing.
pub fn kl_from_masses(p: &[f64], q: &[f64], epsilon: f64) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(EgmnError::Shape(format!("{} vs {} bin masses", p.len(), q.len())));
    }
    if p.iter().chain(q).any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(EgmnError::Domain("bin masses must be finite and non-negative".into()));
    }
    let smooth = |m: &[f64]| {
        let z: f64 = m.iter().map(|x| x + epsilon).sum();
        m.iter().map(|x| (x + epsilon) / z).collect::<Vec<f64>>()
    };
    let (p, q) = (smooth(p), smooth(q));
    let kl: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
    Ok(kl.max(0.0))
}

/// `KL(actual || predicted)` between the label histogram and the average
/// predicted bin masses.
pub fn kl_divergence(labels: &[f64], predicted: &[EgmParams], spec: &BinSpec) -> Result<f64> {
    kl_divergence_with(labels, predicted, spec, Execution::default())
}

pub fn kl_divergence_with(labels: &[f64], predicted: &[EgmParams], spec: &BinSpec, exec: Execution) -> Result<f64> {
    let actual = empirical_masses(labels, spec)?;
    let model = predicted_masses(predicted, spec, exec)?;
    kl_from_masses(&actual, &model, spec.epsilon)
}

/// Default bins with `upper` at the 99.5% quantile of `truth`.
pub fn pair_bin_spec(truth: &EgmParams) -> Result<BinSpec> {
    BinSpec::new(DEFAULT_BINS, truth.quantile(DEFAULT_UPPER_PERCENTILE / 100.0)?)
}

/// Binned `KL(truth || model)` between two distributions, with the default
/// bin count and `upper` at the 99.5% quantile of `truth`.
pub fn pair_kl(truth: &EgmParams, model: &EgmParams) -> Result<f64> {
    let spec = pair_bin_spec(truth)?;
    kl_from_masses(&param_masses(truth, &spec), &param_masses(model, &spec), spec.epsilon)
}

/// Writes `bin,lower,upper,actual,predicted`; the overflow row has an
/// infinite upper edge.
pub fn write_bin_masses_csv<W: Write>(out: W, spec: &BinSpec, actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != spec.len() || predicted.len() != spec.len() {
        return Err(EgmnError::Shape("bin mass vectors do not match the bin spec".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin", "lower", "upper", "actual", "predicted"])?;
    for b in 0..spec.len() {
        let hi = if b < spec.bins { spec.edge(b + 1) } else { f64::INFINITY };
        w.write_record([
            b.to_string(),
            spec.edge(b).to_string(),
            hi.to_string(),
            actual[b].to_string(),
            predicted[b].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
