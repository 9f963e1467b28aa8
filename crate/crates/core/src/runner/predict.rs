use crate::data::{Dataset, Example, FeatureRecord, Transform};
use crate::dist::EgmParams;
use crate::error::{EgmnError, Result};
use crate::metrics::MetricReport;
use crate::network::{forward, NetworkWeights};
use crate::par::Execution;

const PREDICT_CHUNK: usize = 256;

/// Fails unless `weights` were built for the transform's feature layout.
pub fn check_schema(weights: &NetworkWeights, transform: &Transform) -> Result<()> {
    if weights.schema != transform.schema() {
        return Err(EgmnError::Schema(
            "checkpoint feature schema does not match the preprocessing transform".into(),
        ));
    }
    Ok(())
}

/// Predicted distribution of every example, in order.
pub fn predict_params(weights: &NetworkWeights, examples: &[Example], exec: Execution) -> Result<Vec<EgmParams>> {
    let parts = exec.map_chunks(examples, PREDICT_CHUNK, |_, chunk| {
        chunk
            .iter()
            .map(|e| forward(weights, &e.features).map(|(p, _)| p))
            .collect::<Result<Vec<_>>>()
    });
    let mut out = Vec::with_capacity(examples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Scores the expected-value predictions and the predicted distributions on
/// a preprocessed dataset.
pub fn evaluate(
    weights: &NetworkWeights,
    transform: &Transform,
    eval: &Dataset,
    n_pairs: usize,
    seed: u64,
    exec: Execution,
) -> Result<MetricReport> {
    check_schema(weights, transform)?;
    if !eval.is_transformed() {
        return Err(EgmnError::Consistency("eval set has not been preprocessed".into()));
    }
    let params = predict_params(weights, eval.examples(), exec)?;
    MetricReport::compute_with(&params, &eval.labels(), n_pairs, seed, exec)
}

/// Everything inferred for one record from a single forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Expected watch time (mixture mean).
    pub expected: f64,
    pub params: EgmParams,
    /// `(tau, P(t <= tau))`.
    pub cdf: Vec<(f64, f64)>,
    /// `(q, quantile)`.
    pub quantiles: Vec<(f64, f64)>,
}

/// Encodes raw records with `transform` and predicts each one. Unknown
/// categorical values use the reserved out-of-vocabulary row.
pub fn predict(
    weights: &NetworkWeights,
    transform: &Transform,
    records: &[FeatureRecord],
    taus: &[f64],
    quantiles: &[f64],
    exec: Execution,
) -> Result<Vec<Prediction>> {
    check_schema(weights, transform)?;
    let parts = exec.map_chunks(records, PREDICT_CHUNK, |_, chunk| {
        chunk
            .iter()
            .map(|r| {
                let (params, _) = forward(weights, &transform.encode(r))?;
                let cdf = taus
                    .iter()
                    .map(|&t| Ok((t, params.interval_prob(f64::NEG_INFINITY, t)?)))
                    .collect::<Result<Vec<_>>>()?;
                let qs = quantiles
                    .iter()
                    .map(|&q| Ok((q, params.quantile(q)?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Prediction {
                    expected: params.mean(),
                    params,
                    cdf,
                    quantiles: qs,
                })
            })
            .collect::<Result<Vec<_>>>()
    });
    let mut out = Vec::with_capacity(records.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}
