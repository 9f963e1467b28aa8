//! Training objective: negative log-likelihood, mixture-weight entropy and
//! absolute error of the mixture mean, plus the Adagrad update.

mod adagrad;

pub use adagrad::{adagrad_step, AdagradState, ADAGRAD_EPSILON};

use serde::{Deserialize, Serialize};

use crate::dist::{normal::normal_log_pdf, EgmParams, ParamGrad};
use crate::error::{EgmnError, Result};

/// Per-example log-density floor. Below it the likelihood term is capped
/// and contributes no gradient.
pub const LOG_DENSITY_FLOOR: f64 = -700.0;

/// Weights of the entropy (`alpha`) and regression (`beta`) terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 0.1, beta: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0 && self.beta.is_finite() && self.beta >= 0.0) {
            return Err(EgmnError::Config(format!(
                "loss weights must be finite and >= 0 (alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Which terms participate. A disabled term contributes neither value nor
/// gradient to the total.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossTerms {
    pub mle: bool,
    pub entropy: bool,
    pub reg: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        LossTerms {
            mle: true,
            entropy: true,
            reg: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MleLoss {
    pub loss: f64,
    pub grad: ParamGrad,
    /// The log-density fell below [`LOG_DENSITY_FLOOR`].
    pub underflow: bool,
}

fn check_label(t: f64) -> Result<()> {
    if !t.is_finite() || t < 0.0 {
        return Err(EgmnError::Domain(format!("watch time must be finite and >= 0, got {t}")));
    }
    Ok(())
}

/// `-log p(t)` and its gradient via component responsibilities.
///
/// The weight gradient of a zero-weight component is reported as zero; such
/// components are pinned by the caller and never updated.
pub fn mle_loss(p: &EgmParams, t: f64) -> Result<MleLoss> {
    check_label(t)?;
    let k = p.k();
    let terms = p.component_log_terms(t);
    let log_p = crate::dist::log_sum_exp(&terms);
    if !(log_p >= LOG_DENSITY_FLOOR) {
        return Ok(MleLoss {
            loss: -LOG_DENSITY_FLOOR,
            grad: ParamGrad::zeros(k),
            underflow: true,
        });
    }
    let mut grad = ParamGrad::zeros(k);
    let w = p.weights();
    // exponential
    let r0 = (terms[0] - log_p).exp();
    if w[0] > 0.0 {
        grad.weights[0] = -(p.rate().ln() - p.rate() * t - log_p).exp();
        grad.rate = -r0 * (1.0 / p.rate() - t);
    }
    for (i, (_, m, v)) in p.gaussians().enumerate() {
        if w[i + 1] <= 0.0 {
            continue;
        }
        let r = (terms[i + 1] - log_p).exp();
        let d = t - m;
        grad.weights[i + 1] = -(normal_log_pdf(t, m, v) - log_p).exp();
        grad.means[i] = -r * d / v;
        grad.variances[i] = -r * (d * d / (2.0 * v * v) - 0.5 / v);
    }
    Ok(MleLoss {
        loss: -log_p,
        grad,
        underflow: false,
    })
}

/// Negative entropy `sum w log w` (with `0 log 0 = 0`) and its gradient
/// `1 + log w` per coordinate (zero where `w = 0`).
pub fn entropy_loss(weights: &[f64]) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let grad = weights
        .iter()
        .map(|&w| {
            if w > 0.0 {
                let l = w.ln();
                loss += w * l;
                1.0 + l
            } else {
                0.0
            }
        })
        .collect();
    (loss, grad)
}

/// `|t - E[p]|` with the gradient flowing through every term of the mean.
/// The subgradient at the kink is zero.
pub fn reg_loss(p: &EgmParams, t: f64) -> Result<(f64, ParamGrad)> {
    if !t.is_finite() {
        return Err(EgmnError::Domain(format!("watch time must be finite, got {t}")));
    }
    let diff = t - p.mean();
    // d|t - m| / dm
    let dm = if diff > 0.0 {
        -1.0
    } else if diff < 0.0 {
        1.0
    } else {
        0.0
    };
    let k = p.k();
    let mut g = ParamGrad::zeros(k);
    let w = p.weights();
    let rate = p.rate();
    g.weights[0] = dm / rate;
    g.rate = -dm * w[0] / (rate * rate);
    for i in 0..k {
        g.weights[i + 1] = dm * p.means()[i];
        g.means[i] = dm * w[i + 1];
    }
    Ok((diff.abs(), g))
}

/// Value of every term plus the weighted total and its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedLoss {
    pub total: f64,
    pub mle: f64,
    pub entropy: f64,
    pub reg: f64,
    pub grad: ParamGrad,
    pub underflow: bool,
}

/// `L_mle + alpha L_entropy + beta L_reg` restricted to the enabled terms.
pub fn combined_loss(p: &EgmParams, t: f64, lw: LossWeights, terms: LossTerms) -> Result<CombinedLoss> {
    let mle = mle_loss(p, t)?;
    let (ent, ent_grad) = entropy_loss(p.weights());
    let (reg, reg_grad) = reg_loss(p, t)?;
    let mut total = 0.0;
    let mut grad = ParamGrad::zeros(p.k());
    if terms.mle {
        total += mle.loss;
        grad.add_scaled(&mle.grad, 1.0);
    }
    if terms.entropy {
        total += lw.alpha * ent;
        for (g, e) in grad.weights.iter_mut().zip(&ent_grad) {
            *g += lw.alpha * e;
        }
    }
    if terms.reg {
        total += lw.beta * reg;
        grad.add_scaled(&reg_grad, lw.beta);
    }
    Ok(CombinedLoss {
        total,
        mle: mle.loss,
        entropy: ent,
        reg,
        grad,
        underflow: terms.mle && mle.underflow,
    })
}
