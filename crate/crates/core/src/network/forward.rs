//! Forward pass to mixture parameters and its hand-derived reverse mode.

use serde::{Deserialize, Serialize};

use super::activation::{sigmoid, stable_softmax, stable_softplus};
use super::schema::EncodedFeatures;
use super::weights::{NetworkWeights, WeightGradients};
use crate::dist::{EgmParams, ParamGrad};
use crate::error::{EgmnError, Result};

/// Rate (model units) is clamped to this range after the softplus.
pub const RATE_MIN: f64 = 1e-4;
pub const RATE_MAX: f64 = 1e4;
/// Variance floor (model units).
pub const VAR_FLOOR: f64 = 1e-6;
/// Floor on the softplus mean offset so that `mu_k > 1/lambda` survives
/// rounding.
pub const MEAN_OFFSET_FLOOR: f64 = 1e-6;

/// Head pre-activations of one example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadPre {
    pub rate: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub mix: Vec<f64>,
}

/// Cached activations of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub ids: Vec<usize>,
    /// Concatenated embeddings and dense values.
    pub input: Vec<f64>,
    /// Backbone pre-activations, one vector per layer.
    pub pre: Vec<Vec<f64>>,
    /// Backbone outputs after ReLU; the last one is the hidden representation.
    pub hidden: Vec<Vec<f64>>,
    pub head_pre: HeadPre,
    /// Rate in model units, after clamping.
    pub rate_model: f64,
    pub rate_clamped: bool,
    pub mean_floored: Vec<bool>,
    pub var_floored: Vec<bool>,
    pub params: EgmParams,
}

impl ForwardTrace {
    /// Hidden representation fed to the heads.
    pub fn h(&self) -> &[f64] {
        self.hidden.last().map_or(&self.input, Vec::as_slice)
    }

    /// Number of clamp/floor events in this pass.
    pub fn clamp_events(&self) -> usize {
        usize::from(self.rate_clamped)
            + self.mean_floored.iter().filter(|b| **b).count()
            + self.var_floored.iter().filter(|b| **b).count()
    }

    /// Re-runs the pass from the cached input vector.
    pub fn replay(&self, weights: &NetworkWeights) -> Result<ForwardTrace> {
        forward_from_input(weights, self.ids.clone(), self.input.clone())
    }
}

fn check_finite(layer: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(EgmnError::numeric(layer, format!("unit {i} = {}", v[i]))),
    }
}

/// Maps encoded features to mixture parameters.
pub fn forward(weights: &NetworkWeights, x: &EncodedFeatures) -> Result<(EgmParams, ForwardTrace)> {
    weights.schema.check(x)?;
    let mut input = Vec::with_capacity(weights.schema.input_dim());
    for ((field, &id), table) in weights
        .schema
        .categorical
        .iter()
        .zip(&x.categorical)
        .zip(&weights.embeddings)
    {
        let d = field.embedding_dim;
        input.extend_from_slice(&table[id * d..(id + 1) * d]);
    }
    input.extend_from_slice(&x.dense);
    let trace = forward_from_input(weights, x.categorical.clone(), input)?;
    Ok((trace.params.clone(), trace))
}

fn forward_from_input(weights: &NetworkWeights, ids: Vec<usize>, input: Vec<f64>) -> Result<ForwardTrace> {
    check_finite("input", &input)?;
    let mut pre = Vec::with_capacity(weights.backbone.len());
    let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(weights.backbone.len());
    for (l, layer) in weights.backbone.iter().enumerate() {
        let x = if l == 0 { &input } else { &hidden[l - 1] };
        if x.len() != layer.in_dim {
            return Err(EgmnError::Shape(format!(
                "backbone.{l} expects {} inputs, got {}",
                layer.in_dim,
                x.len()
            )));
        }
        let z = layer.apply(x);
        check_finite(&format!("backbone.{l}"), &z)?;
        hidden.push(z.iter().map(|v| v.max(0.0)).collect());
        pre.push(z);
    }
    let h = hidden.last().unwrap_or(&input);
    let heads = &weights.heads;
    let head_pre = HeadPre {
        rate: heads.rate.apply(h)[0],
        mean: heads.mean.apply(h),
        var: heads.var.apply(h),
        mix: heads.mix.apply(h),
    };
    check_finite("head.rate", &[head_pre.rate])?;
    check_finite("head.mean", &head_pre.mean)?;
    check_finite("head.var", &head_pre.var)?;
    check_finite("head.mix", &head_pre.mix)?;

    let arch = &weights.arch;
    let s = arch.time_scale;
    let raw_rate = stable_softplus(head_pre.rate);
    let rate_model = raw_rate.clamp(RATE_MIN, RATE_MAX);
    let rate_clamped = rate_model != raw_rate;
    let inv_rate = 1.0 / rate_model;

    let mut mean_floored = Vec::with_capacity(arch.k);
    let means = head_pre
        .mean
        .iter()
        .map(|&z| {
            let off = stable_softplus(z);
            mean_floored.push(off < MEAN_OFFSET_FLOOR);
            s * (inv_rate + off.max(MEAN_OFFSET_FLOOR))
        })
        .collect();
    let mut var_floored = Vec::with_capacity(arch.k);
    let variances = head_pre
        .var
        .iter()
        .map(|&z| {
            let v = stable_softplus(z);
            var_floored.push(v < VAR_FLOOR);
            s * s * v.max(VAR_FLOOR)
        })
        .collect();
    let mix = stable_softmax(&head_pre.mix);
    let weights_out = if arch.exponential {
        mix
    } else {
        std::iter::once(0.0).chain(mix).collect()
    };
    let params = EgmParams::new(rate_model / s, means, variances, weights_out)
        .map_err(|e| EgmnError::numeric("heads", e.to_string()))?;
    Ok(ForwardTrace {
        ids,
        input,
        pre,
        hidden,
        head_pre,
        rate_model,
        rate_clamped,
        mean_floored,
        var_floored,
        params,
    })
}

/// Switches for [`backward_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackwardOptions {
    /// Propagate `d mu_k / d lambda`, the dependence of every Gaussian mean
    /// on the exponential rate. Only turned off to demonstrate that the
    /// gradient is wrong without it.
    pub rate_mean_coupling: bool,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        BackwardOptions {
            rate_mean_coupling: true,
        }
    }
}

/// Gradient of a scalar loss with respect to the weights, given its
/// gradient with respect to the emitted parameters.
pub fn backward(weights: &NetworkWeights, trace: &ForwardTrace, grad: &ParamGrad) -> Result<WeightGradients> {
    let mut out = WeightGradients::zeros_like(weights);
    backward_with(weights, trace, grad, 1.0, BackwardOptions::default(), &mut out)?;
    Ok(out)
}

/// Accumulates `scale * dL/dW` into `out`.
pub fn backward_with(
    weights: &NetworkWeights,
    trace: &ForwardTrace,
    grad: &ParamGrad,
    scale: f64,
    opts: BackwardOptions,
    out: &mut WeightGradients,
) -> Result<()> {
    check_consistency(weights, trace, grad)?;
    if !out.matches(weights) {
        return Err(EgmnError::Consistency("gradient buffer does not match weights".into()));
    }
    let arch = &weights.arch;
    let s = arch.time_scale;
    let k = arch.k;
    let hp = &trace.head_pre;

    // d/d(rate in model units): lambda = lambda_m / s, mu_k = s (1/lambda_m + off_k)
    let mut g_rate_model = grad.rate / s;
    if opts.rate_mean_coupling {
        let dmu_drate = -s / (trace.rate_model * trace.rate_model);
        g_rate_model += grad.means.iter().sum::<f64>() * dmu_drate;
    }
    let dz_rate = if trace.rate_clamped {
        0.0
    } else {
        scale * g_rate_model * sigmoid(hp.rate)
    };
    let dz_mean: Vec<f64> = (0..k)
        .map(|i| {
            if trace.mean_floored[i] {
                0.0
            } else {
                scale * grad.means[i] * s * sigmoid(hp.mean[i])
            }
        })
        .collect();
    let dz_var: Vec<f64> = (0..k)
        .map(|i| {
            if trace.var_floored[i] {
                0.0
            } else {
                scale * grad.variances[i] * s * s * sigmoid(hp.var[i])
            }
        })
        .collect();
    // softmax Jacobian over the active mixture entries
    let offset = usize::from(!arch.exponential);
    let w = &trace.params.weights()[offset..];
    let g = &grad.weights[offset..];
    let dot: f64 = w.iter().zip(g).map(|(a, b)| a * b).sum();
    let dz_mix: Vec<f64> = w
        .iter()
        .zip(g)
        .map(|(wj, gj)| scale * wj * (gj - dot))
        .collect();

    let h = trace.h();
    let mut dh = vec![0.0; h.len()];
    let heads = &weights.heads;
    out.heads.rate.backprop(&heads.rate, h, &[dz_rate], Some(&mut dh));
    out.heads.mean.backprop(&heads.mean, h, &dz_mean, Some(&mut dh));
    out.heads.var.backprop(&heads.var, h, &dz_var, Some(&mut dh));
    out.heads.mix.backprop(&heads.mix, h, &dz_mix, Some(&mut dh));

    let mut upstream = dh;
    for l in (0..weights.backbone.len()).rev() {
        let dz: Vec<f64> = upstream
            .iter()
            .zip(&trace.pre[l])
            .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
            .collect();
        let x = if l == 0 { &trace.input } else { &trace.hidden[l - 1] };
        let mut dx = vec![0.0; x.len()];
        out.backbone[l].backprop(&weights.backbone[l], x, &dz, Some(&mut dx));
        upstream = dx;
    }

    let mut at = 0;
    for (field, (f, &id)) in weights.schema.categorical.iter().zip(&trace.ids).enumerate() {
        let d = f.embedding_dim;
        let g = &upstream[at..at + d];
        if g.iter().any(|v| *v != 0.0) {
            out.add_embedding_row(field, id, g);
        }
        at += d;
    }
    Ok(())
}

fn check_consistency(weights: &NetworkWeights, trace: &ForwardTrace, grad: &ParamGrad) -> Result<()> {
    let k = weights.arch.k;
    let fail = |m: &str| Err(EgmnError::Consistency(m.to_string()));
    if trace.params.k() != k || grad.means.len() != k || grad.variances.len() != k || grad.weights.len() != k + 1 {
        return fail("component count differs between weights, trace and gradient");
    }
    if trace.input.len() != weights.schema.input_dim() || trace.ids.len() != weights.schema.categorical.len() {
        return fail("trace input does not match the feature schema");
    }
    if trace.pre.len() != weights.backbone.len()
        || trace
            .pre
            .iter()
            .zip(&weights.backbone)
            .any(|(z, l)| z.len() != l.out_dim)
    {
        return fail("trace backbone does not match the weights");
    }
    if trace.head_pre.mix.len() != weights.heads.mix.out_dim {
        return fail("trace heads do not match the weights");
    }
    Ok(())
}
