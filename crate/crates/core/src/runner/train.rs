use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::history::{EpochRecord, TrainHistory};
use super::predict::predict_params;
use crate::data::{Dataset, Example, Transform};
use crate::dist::EgmParams;
use crate::error::{EgmnError, Result};
use crate::metrics::MetricReport;
use crate::network::{backward_with, forward, init_weights, BackwardOptions, NetworkWeights, WeightGradients};
use crate::objective::{adagrad_step, combined_loss, AdagradState, LossTerms, LossWeights};
use crate::par::Execution;

/// Examples per gradient chunk. Fixed so the reduction order, and thus the
/// result, does not depend on the thread count.
pub const GRAD_CHUNK: usize = 64;

/// Mean gradient and loss terms over one minibatch.
#[derive(Clone, Debug)]
pub struct BatchGradient {
    pub grads: WeightGradients,
    pub loss: f64,
    pub mle: f64,
    pub entropy: f64,
    pub reg: f64,
    pub underflows: usize,
    pub clamps: usize,
}

struct ChunkSums {
    grads: WeightGradients,
    loss: f64,
    mle: f64,
    entropy: f64,
    reg: f64,
    underflows: usize,
    clamps: usize,
}

/// Gradient of the mean combined loss over `examples[idx]`.
pub fn batch_gradient(
    weights: &NetworkWeights,
    examples: &[Example],
    idx: &[usize],
    lw: LossWeights,
    terms: LossTerms,
    exec: Execution,
) -> Result<BatchGradient> {
    if idx.is_empty() {
        return Err(EgmnError::Domain("empty minibatch".into()));
    }
    let scale = 1.0 / idx.len() as f64;
    let parts = exec.map_chunks(idx, GRAD_CHUNK, |_, chunk| -> Result<ChunkSums> {
        let mut s = ChunkSums {
            grads: WeightGradients::zeros_like(weights),
            loss: 0.0,
            mle: 0.0,
            entropy: 0.0,
            reg: 0.0,
            underflows: 0,
            clamps: 0,
        };
        for &i in chunk {
            let ex = &examples[i];
            let (params, trace) = forward(weights, &ex.features)?;
            let l = combined_loss(&params, ex.label, lw, terms)?;
            if !l.total.is_finite() {
                return Err(EgmnError::numeric("loss", format!("example {i}: combined loss {}", l.total)));
            }
            backward_with(weights, &trace, &l.grad, scale, BackwardOptions::default(), &mut s.grads)?;
            s.loss += l.total;
            s.mle += l.mle;
            s.entropy += l.entropy;
            s.reg += l.reg;
            s.underflows += usize::from(l.underflow);
            s.clamps += trace.clamp_events();
        }
        Ok(s)
    });
    let mut parts = parts.into_iter();
    let mut acc = parts.next().expect("non-empty batch")?;
    for p in parts {
        let p = p?;
        acc.grads.add_assign(&p.grads)?;
        acc.loss += p.loss;
        acc.mle += p.mle;
        acc.entropy += p.entropy;
        acc.reg += p.reg;
        acc.underflows += p.underflows;
        acc.clamps += p.clamps;
    }
    Ok(BatchGradient {
        grads: acc.grads,
        loss: acc.loss * scale,
        mle: acc.mle * scale,
        entropy: acc.entropy * scale,
        reg: acc.reg * scale,
        underflows: acc.underflows,
        clamps: acc.clamps,
    })
}

/// State handed to a per-epoch hook after evaluation.
pub struct EpochContext<'a> {
    pub epoch: usize,
    pub weights: &'a NetworkWeights,
    pub eval: &'a Dataset,
    /// Predicted distribution of every eval example, in dataset order.
    pub eval_params: &'a [EgmParams],
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub weights: NetworkWeights,
    pub history: TrainHistory,
    /// Shuffle seed actually used (differs from the config when not
    /// deterministic).
    pub shuffle_seed: u64,
    /// Metrics of the returned weights on the eval set.
    pub report: MetricReport,
}

fn with_position(e: EgmnError, epoch: usize, batch: usize) -> EgmnError {
    match e {
        EgmnError::Numeric { layer, detail } => EgmnError::Numeric {
            layer,
            detail: format!("epoch {epoch}, batch {batch}: {detail}"),
        },
        other => other,
    }
}

fn mean_eval_loss(params: &[EgmParams], labels: &[f64], lw: LossWeights, terms: LossTerms, exec: Execution) -> Result<f64> {
    let pairs: Vec<(&EgmParams, f64)> = params.iter().zip(labels.iter().copied()).collect();
    let parts = exec.map_chunks(&pairs, 1024, |_, chunk| -> Result<f64> {
        chunk.iter().try_fold(0.0, |acc, (p, t)| Ok(acc + combined_loss(p, *t, lw, terms)?.total))
    });
    let mut sum = 0.0;
    for p in parts {
        sum += p?;
    }
    Ok(sum / params.len() as f64)
}

/// Trains a fresh network; see [`train_with_hook`].
pub fn train(config: &TrainConfig, transform: &Transform, train: &Dataset, eval: &Dataset, exec: Execution) -> Result<TrainOutcome> {
    train_with_hook(config, transform, train, eval, exec, |_| Ok(BTreeMap::new()))
}

/// Trains with Adagrad over reshuffled minibatches, evaluating on `eval`
/// after every epoch. `hook` may add named metrics to each epoch record.
pub fn train_with_hook<F>(
    config: &TrainConfig,
    transform: &Transform,
    train: &Dataset,
    eval: &Dataset,
    exec: Execution,
    mut hook: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochContext) -> Result<BTreeMap<String, f64>>,
{
    config.validate()?;
    for (name, ds) in [("train", train), ("eval", eval)] {
        if !ds.is_transformed() {
            return Err(EgmnError::Consistency(format!("{name} set has not been preprocessed")));
        }
    }
    if train.is_empty() || eval.len() < 2 {
        return Err(EgmnError::Data(format!(
            "need a non-empty train set and at least 2 eval examples (got {} / {})",
            train.len(),
            eval.len()
        )));
    }
    let labels = train.labels();
    let time_scale = config.time_scale.unwrap_or_else(|| {
        let m = labels.iter().sum::<f64>() / labels.len() as f64;
        if m > 0.0 {
            m
        } else {
            1.0
        }
    });
    let mut weights = init_weights(&transform.schema(), &config.architecture(time_scale), config.init_seed)?;
    let mut state = AdagradState::new(&weights);
    let shuffle_seed = if config.deterministic {
        config.shuffle_seed
    } else {
        config.shuffle_seed ^ rand::random::<u64>()
    };
    log::info!(
        "training {} parameters on {} examples, time scale {time_scale:.4}, shuffle seed {shuffle_seed}",
        weights.num_parameters(),
        train.len()
    );
    let (lw, terms) = (config.loss_weights(), config.loss_terms());
    let examples = train.examples();
    let eval_labels = eval.labels();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, NetworkWeights, MetricReport)> = None;
    let mut last_report = None;

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let (mut loss, mut mle, mut ent, mut reg) = (0.0, 0.0, 0.0, 0.0);
        let (mut underflows, mut clamps) = (0, 0);
        let batches = order.chunks(config.batch);
        let n_batches = batches.len();
        for (b, idx) in batches.enumerate() {
            let g = batch_gradient(&weights, examples, idx, lw, terms, exec).map_err(|e| with_position(e, epoch, b + 1))?;
            if !g.grads.is_finite() {
                return Err(EgmnError::numeric("gradient", format!("epoch {epoch}, batch {}: non-finite gradient", b + 1)));
            }
            adagrad_step(&mut weights, &g.grads, &mut state, config.lr)?;
            if !weights.is_finite() {
                return Err(EgmnError::numeric("weights", format!("epoch {epoch}, batch {}: non-finite weights after update", b + 1)));
            }
            loss += g.loss;
            mle += g.mle;
            ent += g.entropy;
            reg += g.reg;
            underflows += g.underflows;
            clamps += g.clamps;
        }
        let nb = n_batches as f64;

        let eval_params = predict_params(&weights, eval.examples(), exec).map_err(|e| with_position(e, epoch, 0))?;
        let eval_loss = mean_eval_loss(&eval_params, &eval_labels, lw, terms, exec)?;
        let report = MetricReport::compute_with(&eval_params, &eval_labels, config.xauc_pairs, config.xauc_seed, exec)?;
        let extra = hook(&EpochContext {
            epoch,
            weights: &weights,
            eval,
            eval_params: &eval_params,
        })?;
        let record = EpochRecord {
            epoch,
            train_loss: loss / nb,
            train_mle: mle / nb,
            train_entropy: ent / nb,
            train_reg: reg / nb,
            eval_loss,
            eval_mae: report.mae,
            eval_xauc: report.xauc,
            eval_kl: report.kl,
            underflows,
            clamps,
            extra,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train loss {:.5}, eval loss {:.5}, {report}",
            record.train_loss,
            record.eval_loss
        );
        history.records.push(record);
        if config.keep_best && best.as_ref().is_none_or(|(mae, _, _)| report.mae < *mae) {
            best = Some((report.mae, weights.clone(), report.clone()));
        }
        last_report = Some(report);
    }

    let (weights, report) = match best {
        Some((_, w, r)) => (w, r),
        None => {
            let report = match last_report {
                Some(r) => r,
                None => {
                    let params = predict_params(&weights, eval.examples(), exec)?;
                    MetricReport::compute_with(&params, &eval_labels, config.xauc_pairs, config.xauc_seed, exec)?
                }
            };
            (weights, report)
        }
    };
    Ok(TrainOutcome {
        weights,
        history,
        shuffle_seed,
        report,
    })
}
