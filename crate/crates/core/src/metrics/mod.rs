//! Evaluation metrics: MAE, XAUC, ROC AUC, quick-skip AUC and binned KL.

mod kl;
mod report;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dist::EgmParams;
use crate::error::{EgmnError, Result};
use crate::par::Execution;

pub use kl::{
    empirical_masses, kl_divergence, kl_divergence_with, kl_from_masses, pair_bin_spec, pair_kl, param_masses, predicted_masses,
    write_bin_masses_csv, BinSpec, DEFAULT_BINS, DEFAULT_KL_EPSILON, DEFAULT_UPPER_PERCENTILE,
};
pub use report::{format_sig, MetricReport};

pub const DEFAULT_XAUC_PAIRS: usize = 1_000_000;
pub const DEFAULT_XAUC_SEED: u64 = 0x5eed;
/// Quick-skip thresholds in seconds.
pub const QUICK_SKIP_THRESHOLDS: [f64; 3] = [2.0, 4.0, 6.0];

const PAIR_CHUNK: usize = 65_536;

fn check_lengths(a: usize, b: usize, min: usize) -> Result<()> {
    if a != b {
        return Err(EgmnError::Shape(format!("{a} predictions vs {b} labels")));
    }
    if a < min {
        return Err(EgmnError::Domain(format!("need at least {min} examples, got {a}")));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(predictions.len(), labels.len(), 1)?;
    let sum: f64 = predictions.iter().zip(labels).map(|(p, y)| (p - y).abs()).sum();
    Ok(sum / labels.len() as f64)
}

/// Pair counts behind an XAUC value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct XaucCounts {
    /// Concordant pairs in half units: 2 per agreeing pair, 1 per prediction tie.
    pub half_concordant: u64,
    /// Pairs with distinct labels.
    pub evaluated: u64,
    /// Pairs skipped because their labels tie.
    pub label_ties: u64,
    pub exhaustive: bool,
}

impl XaucCounts {
    pub fn value(&self) -> Result<f64> {
        if self.evaluated == 0 {
            return Err(EgmnError::Domain("every XAUC pair has tied labels".into()));
        }
        Ok(self.half_concordant as f64 / (2 * self.evaluated) as f64)
    }

    fn add(mut self, o: XaucCounts) -> XaucCounts {
        self.half_concordant += o.half_concordant;
        self.evaluated += o.evaluated;
        self.label_ties += o.label_ties;
        self
    }

    fn score(&mut self, pi: f64, pj: f64, yi: f64, yj: f64) {
        if yi == yj {
            self.label_ties += 1;
            return;
        }
        self.evaluated += 1;
        if pi == pj {
            self.half_concordant += 1;
        } else if (pi > pj) == (yi > yj) {
            self.half_concordant += 2;
        }
    }
}

/// Fraction of pairs whose predicted order agrees with the label order.
///
/// All pairs are enumerated when there are at most `n_pairs` of them;
/// otherwise `n_pairs` ordered pairs `i != j` are drawn with `seed`.
pub fn xauc(predictions: &[f64], labels: &[f64], n_pairs: usize, seed: u64) -> Result<f64> {
    xauc_counts(predictions, labels, n_pairs, seed, Execution::default())?.value()
}

pub fn xauc_counts(predictions: &[f64], labels: &[f64], n_pairs: usize, seed: u64, exec: Execution) -> Result<XaucCounts> {
    check_lengths(predictions.len(), labels.len(), 2)?;
    let n = labels.len();
    let total = n as u128 * (n as u128 - 1) / 2;
    let counts = if total <= n_pairs as u128 {
        let parts = exec.map_ranges(n, 64, |_, rows| {
            let mut c = XaucCounts::default();
            for i in rows {
                for j in i + 1..n {
                    c.score(predictions[i], predictions[j], labels[i], labels[j]);
                }
            }
            c
        });
        XaucCounts {
            exhaustive: true,
            ..parts.into_iter().fold(XaucCounts::default(), XaucCounts::add)
        }
    } else {
        let first = Uniform::new(0, n).expect("n >= 2");
        let second = Uniform::new(0, n - 1).expect("n >= 2");
        let parts = exec.map_ranges(n_pairs, PAIR_CHUNK, |chunk, range| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let mut c = XaucCounts::default();
            for _ in range {
                let i = first.sample(&mut rng);
                let mut j = second.sample(&mut rng);
                if j >= i {
                    j += 1;
                }
                c.score(predictions[i], predictions[j], labels[i], labels[j]);
            }
            c
        });
        parts.into_iter().fold(XaucCounts::default(), XaucCounts::add)
    };
    Ok(counts)
}

/// Binary ROC AUC via the Mann-Whitney statistic with midranks for ties.
pub fn roc_auc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), positives.len(), 2)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EgmnError::Domain("NaN score".into()));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EgmnError::Domain("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // rank sums kept doubled so midranks stay integral
    let mut pos_rank2: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid2 = (start + 1 + end) as u128;
        let pos_in_group = order[start..end].iter().filter(|&&i| positives[i]).count() as u128;
        pos_rank2 += mid2 * pos_in_group;
        start = end;
    }
    let (np, nn) = (n_pos as u128, n_neg as u128);
    let u2 = pos_rank2 - np * (np + 1);
    Ok(u2 as f64 / (2 * np * nn) as f64)
}

/// Positive class of the quick-skip task: watched at most `tau` seconds.
pub fn quick_skip_labels(labels: &[f64], tau: f64) -> Vec<bool> {
    labels.iter().map(|&t| t <= tau).collect()
}

/// How a model scores the quick-skip task.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum QuickSkipScore {
    /// Negated expected watch time.
    #[default]
    NegMean,
    /// Predicted probability of watching at most `tau`.
    Cdf,
}

/// AUC of predicted watch time (negated) for the `t <= tau` task.
pub fn quick_skip_auc(predictions: &[f64], labels: &[f64], tau: f64) -> Result<f64> {
    let scores: Vec<f64> = predictions.iter().map(|p| -p).collect();
    roc_auc(&scores, &quick_skip_labels(labels, tau))
}

/// Quick-skip AUC using either score mode from full predicted distributions.
pub fn quick_skip_auc_params(params: &[EgmParams], labels: &[f64], tau: f64, mode: QuickSkipScore) -> Result<f64> {
    let scores: Vec<f64> = match mode {
        QuickSkipScore::NegMean => params.iter().map(|p| -p.mean()).collect(),
        QuickSkipScore::Cdf => params.iter().map(|p| p.cdf(tau)).collect(),
    };
    roc_auc(&scores, &quick_skip_labels(labels, tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_xauc(p: &[f64], y: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..p.len() {
            for j in 0..p.len() {
                if i == j || y[i] == y[j] {
                    continue;
                }
                den += 1.0;
                num += if p[i] == p[j] {
                    0.5
                } else if (p[i] > p[j]) == (y[i] > y[j]) {
                    1.0
                } else {
                    0.0
                };
            }
        }
        num / den
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 3.0], &[2.0, 5.0]).unwrap(), 1.5);
        assert_eq!(mae(&[4.0, 2.0], &[4.0, 2.0]).unwrap(), 0.0);
        assert!(mae(&[], &[]).is_err());
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn xauc_examples() {
        let y = [3.0, 1.0, 7.0, 5.0];
        assert_eq!(xauc(&y, &y, 100, 0).unwrap(), 1.0);
        let rev: Vec<f64> = y.iter().map(|v| -v).collect();
        assert_eq!(xauc(&rev, &y, 100, 0).unwrap(), 0.0);
        let v = xauc(&[1.0, 2.0, 3.0], &[10.0, 5.0, 20.0], 100, 0).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        assert!(xauc(&[1.0], &[1.0], 10, 0).is_err());
        assert!(xauc(&[1.0, 2.0], &[3.0, 3.0], 10, 0).is_err());
    }

    #[test]
    fn xauc_sequential_and_parallel_agree() {
        let p: Vec<f64> = (0..3000).map(|i| ((i * 7919) % 1000) as f64).collect();
        let y: Vec<f64> = (0..3000).map(|i| ((i * 104_729) % 997) as f64 + 0.5 * (i % 3) as f64).collect();
        for n_pairs in [200_000, 10_000_000] {
            let a = xauc_counts(&p, &y, n_pairs, 3, Execution::Sequential).unwrap();
            let b = xauc_counts(&p, &y, n_pairs, 3, Execution::Parallel).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn roc_auc_examples() {
        let v = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert!((v - 0.75).abs() < 1e-15);
        assert_eq!(roc_auc(&[0.0, 1.0, 2.0], &[false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[1.0; 5], &[true, false, true, false, false]).unwrap(), 0.5);
        assert!(roc_auc(&[1.0, 2.0], &[true, true]).is_err());
    }

    #[test]
    fn quick_skip_is_inclusive() {
        let labels = [4.0, 4.0000001, 1.0, 9.0];
        assert_eq!(quick_skip_labels(&labels, 4.0), vec![true, false, true, false]);
        let v = quick_skip_auc(&[2.0, 5.0, 1.0, 9.0], &labels, 4.0).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn quick_skip_cdf_mode_uses_interval_mass() {
        let fast = EgmParams::exponential(2.0).unwrap();
        let slow = EgmParams::exponential(0.1).unwrap();
        let params = [fast.clone(), slow.clone(), fast, slow];
        let labels = [0.5, 20.0, 1.0, 11.0];
        assert_eq!(quick_skip_auc_params(&params, &labels, 2.0, QuickSkipScore::Cdf).unwrap(), 1.0);
        assert_eq!(quick_skip_auc_params(&params, &labels, 2.0, QuickSkipScore::NegMean).unwrap(), 1.0);
    }

    fn small_ints(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        n.prop_flat_map(|n| {
            (
                proptest::collection::vec((0i32..8).prop_map(f64::from), n),
                proptest::collection::vec((0i32..8).prop_map(f64::from), n),
            )
        })
    }

    proptest! {
        #[test]
        fn exhaustive_xauc_matches_brute_force((p, y) in small_ints(2..40)) {
            prop_assume!(y.iter().any(|v| *v != y[0]));
            let v = xauc(&p, &y, 1_000_000, 0).unwrap();
            prop_assert!((v - brute_xauc(&p, &y)).abs() < 1e-12);
        }

        #[test]
        fn roc_auc_matches_pair_counting((s, y) in small_ints(2..40)) {
            let pos: Vec<bool> = y.iter().map(|v| *v < 3.0).collect();
            prop_assume!(pos.iter().any(|&b| b) && pos.iter().any(|&b| !b));
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..s.len() {
                for j in 0..s.len() {
                    if pos[i] && !pos[j] {
                        den += 1.0;
                        num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                    }
                }
            }
            prop_assert!((roc_auc(&s, &pos).unwrap() - num / den).abs() < 1e-12);
        }

        #[test]
        fn xauc_negation_complements(p in proptest::collection::hash_set(0i64..10_000, 2..60)) {
            let p: Vec<f64> = p.into_iter().map(|v| v as f64).collect();
            let y: Vec<f64> = (0..p.len()).map(|i| ((i * 37) % 101) as f64 + i as f64 * 1e-3).collect();
            let neg: Vec<f64> = p.iter().map(|v| -v).collect();
            let a = xauc(&p, &y, 1_000_000, 0).unwrap();
            let b = xauc(&neg, &y, 1_000_000, 0).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn mae_is_translation_covariant(v in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..50), c in -64i32..64) {
            let (p, y): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let c = f64::from(c);
            let ps: Vec<f64> = p.iter().map(|x| x + c).collect();
            let ys: Vec<f64> = y.iter().map(|x| x + c).collect();
            prop_assert!((mae(&p, &y).unwrap() - mae(&ps, &ys).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn sampled_xauc_within_binomial_error() {
        let n = 2000;
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let p: Vec<f64> = (0..n).map(|i| i as f64 + ((i * 7919) % 613) as f64 * 3.0).collect();
        let exact = xauc(&p, &y, usize::MAX, 0).unwrap();
        let n_pairs = 200_000;
        let sampled = xauc(&p, &y, n_pairs, 9).unwrap();
        let se = (exact * (1.0 - exact) / n_pairs as f64).sqrt();
        assert!((exact - sampled).abs() <= 3.0 * se, "{exact} {sampled} {se}");
    }
}
