use std::fmt;
use std::path::Path;

use super::{kl_divergence_with, mae, xauc_counts, BinSpec, DEFAULT_XAUC_PAIRS, DEFAULT_XAUC_SEED, QUICK_SKIP_THRESHOLDS};
use crate::dist::EgmParams;
use crate::error::{EgmnError, Result};
use crate::par::Execution;

/// Evaluation summary of one prediction set.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub n_examples: usize,
    pub mae: f64,
    pub xauc: f64,
    /// Pairs with distinct labels that entered the XAUC.
    pub xauc_pairs: u64,
    pub xauc_seed: u64,
    /// `(tau, auc)` for each threshold where both classes occur.
    pub quick_skip_auc: Vec<(f64, f64)>,
    pub kl: f64,
    pub kl_bins: usize,
    pub kl_upper: f64,
}

/// Formats `x` with `digits` significant digits, never in exponent form.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return x.to_string();
    }
    let mag = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding can carry into a new digit (9.9996 -> 10.000)
    let rounded: f64 = s.parse().unwrap_or(x);
    let mag2 = rounded.abs().log10().floor() as i64;
    if mag2 > mag && decimals > 0 {
        format!("{x:.*}", decimals - 1)
    } else {
        s
    }
}

impl MetricReport {
    /// Scores predicted distributions against observed labels.
    ///
    /// MAE, XAUC and quick-skip AUC use the predicted expected value; KL
    /// compares the label histogram with the average predicted masses.
    pub fn compute(params: &[EgmParams], labels: &[f64], exec: Execution) -> Result<Self> {
        Self::compute_with(params, labels, DEFAULT_XAUC_PAIRS, DEFAULT_XAUC_SEED, exec)
    }

    pub fn compute_with(params: &[EgmParams], labels: &[f64], n_pairs: usize, seed: u64, exec: Execution) -> Result<Self> {
        if params.len() != labels.len() {
            return Err(EgmnError::Shape(format!("{} predictions vs {} labels", params.len(), labels.len())));
        }
        let preds: Vec<f64> = exec.map(params, EgmParams::mean);
        let counts = xauc_counts(&preds, labels, n_pairs, seed, exec)?;
        let mut qs = Vec::new();
        for tau in QUICK_SKIP_THRESHOLDS {
            match super::quick_skip_auc(&preds, labels, tau) {
                Ok(a) => qs.push((tau, a)),
                Err(e) => log::warn!("quick-skip AUC at {tau}s skipped: {e}"),
            }
        }
        let spec = BinSpec::from_labels(labels)?;
        Ok(MetricReport {
            n_examples: labels.len(),
            mae: mae(&preds, labels)?,
            xauc: counts.value()?,
            xauc_pairs: counts.evaluated,
            xauc_seed: seed,
            quick_skip_auc: qs,
            kl: kl_divergence_with(labels, params, &spec, exec)?,
            kl_bins: spec.bins,
            kl_upper: spec.upper,
        })
    }

    pub fn quick_skip_at(&self, tau: f64) -> Option<f64> {
        self.quick_skip_auc.iter().find(|(t, _)| *t == tau).map(|(_, a)| *a)
    }

    fn fields(&self) -> Vec<(String, String)> {
        let mut f = vec![
            ("n_examples".to_string(), self.n_examples.to_string()),
            ("mae".into(), self.mae.to_string()),
            ("xauc".into(), self.xauc.to_string()),
            ("xauc_pairs".into(), self.xauc_pairs.to_string()),
            ("xauc_seed".into(), self.xauc_seed.to_string()),
        ];
        for (tau, auc) in &self.quick_skip_auc {
            f.push((format!("quick_skip_auc@{tau}"), auc.to_string()));
        }
        f.push(("kl".into(), self.kl.to_string()));
        f.push(("kl_bins".into(), self.kl_bins.to_string()));
        f.push(("kl_upper".into(), self.kl_upper.to_string()));
        f
    }

    /// `key=value` lines at full precision.
    pub fn to_text(&self) -> String {
        self.fields().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| EgmnError::Data(format!("metric report: {m}"));
        let mut r = MetricReport {
            n_examples: 0,
            mae: f64::NAN,
            xauc: f64::NAN,
            xauc_pairs: 0,
            xauc_seed: 0,
            quick_skip_auc: vec![],
            kl: f64::NAN,
            kl_bins: 0,
            kl_upper: f64::NAN,
        };
        let num = |k: &str, v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad value for {k}: {v:?}")));
        let int = |k: &str, v: &str| v.parse::<u64>().map_err(|_| bad(format!("bad value for {k}: {v:?}")));
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("line without '=': {line:?}")))?;
            match k {
                "n_examples" => r.n_examples = int(k, v)? as usize,
                "mae" => r.mae = num(k, v)?,
                "xauc" => r.xauc = num(k, v)?,
                "xauc_pairs" => r.xauc_pairs = int(k, v)?,
                "xauc_seed" => r.xauc_seed = int(k, v)?,
                "kl" => r.kl = num(k, v)?,
                "kl_bins" => r.kl_bins = int(k, v)? as usize,
                "kl_upper" => r.kl_upper = num(k, v)?,
                _ => match k.strip_prefix("quick_skip_auc@") {
                    Some(tau) => r.quick_skip_auc.push((num(k, tau)?, num(k, v)?)),
                    None => return Err(bad(format!("unknown key {k:?}"))),
                },
            }
        }
        if [r.mae, r.xauc, r.kl, r.kl_upper].iter().any(|x| x.is_nan()) {
            return Err(bad("missing required keys".into()));
        }
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn csv_header(&self) -> String {
        self.fields().into_iter().map(|(k, _)| k).collect::<Vec<_>>().join(",")
    }

    pub fn csv_row(&self) -> String {
        self.fields().into_iter().map(|(_, v)| v).collect::<Vec<_>>().join(",")
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} MAE={} XAUC={}",
            self.n_examples,
            format_sig(self.mae, 4),
            format_sig(self.xauc, 4)
        )?;
        for (tau, auc) in &self.quick_skip_auc {
            write!(f, " AUC@{tau}s={}", format_sig(*auc, 4))?;
        }
        write!(f, " KL={}", format_sig(self.kl, 4))
    }
}
