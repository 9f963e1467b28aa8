use crate::error::{EgmnError, Result};
use crate::network::{Linear, NetworkWeights, WeightGradients};

pub const ADAGRAD_EPSILON: f64 = 1e-8;

/// Per-weight running sums of squared gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct AdagradState {
    pub epsilon: f64,
    pub embeddings: Vec<Vec<f64>>,
    pub blocks: Vec<Linear>,
}

impl AdagradState {
    /// Zero accumulators shaped like `weights`.
    pub fn new(weights: &NetworkWeights) -> Self {
        AdagradState {
            epsilon: ADAGRAD_EPSILON,
            embeddings: weights.embeddings.iter().map(|t| vec![0.0; t.len()]).collect(),
            blocks: weights
                .blocks()
                .iter()
                .map(|l| Linear::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    fn matches(&self, w: &NetworkWeights) -> bool {
        self.embeddings.len() == w.embeddings.len()
            && self.embeddings.iter().zip(&w.embeddings).all(|(a, b)| a.len() == b.len())
            && self.blocks.len() == w.blocks().len()
            && self
                .blocks
                .iter()
                .zip(w.blocks())
                .all(|(a, b)| a.weight.len() == b.weight.len() && a.bias.len() == b.bias.len())
    }
}

#[inline]
fn update(w: &mut f64, acc: &mut f64, g: f64, lr: f64, eps: f64) {
    *acc += g * g;
    *w -= lr * g / (acc.sqrt() + eps);
}

/// One Adagrad step: `acc += g^2; w -= lr g / (sqrt(acc) + eps)`.
/// Embedding rows absent from the sparse gradient are left untouched.
pub fn adagrad_step(
    weights: &mut NetworkWeights,
    grads: &WeightGradients,
    state: &mut AdagradState,
    lr: f64,
) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(EgmnError::Config(format!("learning rate must be > 0, got {lr}")));
    }
    if !state.matches(weights) || !grads.matches(weights) {
        return Err(EgmnError::Consistency(
            "optimizer state, gradients and weights have different shapes".into(),
        ));
    }
    let eps = state.epsilon;
    for (field, rows) in grads.embeddings.iter().enumerate() {
        let d = weights.schema.categorical[field].embedding_dim;
        for (&row, g) in rows {
            let span = row * d..(row + 1) * d;
            let w = &mut weights.embeddings[field][span.clone()];
            let acc = &mut state.embeddings[field][span];
            for ((w, a), g) in w.iter_mut().zip(acc.iter_mut()).zip(g) {
                update(w, a, *g, lr, eps);
            }
        }
    }
    for ((w, acc), g) in weights
        .blocks_mut()
        .into_iter()
        .zip(state.blocks.iter_mut())
        .zip(grads.blocks())
    {
        for ((w, a), g) in w.weight.iter_mut().zip(acc.weight.iter_mut()).zip(&g.weight) {
            update(w, a, *g, lr, eps);
        }
        for ((w, a), g) in w.bias.iter_mut().zip(acc.bias.iter_mut()).zip(&g.bias) {
            update(w, a, *g, lr, eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_weights, Architecture, CategoricalField, DenseField, FeatureSchema};

    fn weights() -> NetworkWeights {
        let schema = FeatureSchema {
            categorical: vec![CategoricalField { name: "u".into(), vocab_size: 3, embedding_dim: 2 }],
            dense: vec![DenseField { name: "d".into() }],
        };
        init_weights(&schema, &Architecture::new(vec![3], 2), 0).unwrap()
    }

    fn filled(w: &NetworkWeights, v: f64) -> WeightGradients {
        let mut g = WeightGradients::zeros_like(w);
        for l in g.blocks_mut() {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|x| *x = v);
        }
        g.embeddings[0].insert(1, vec![v; 2]);
        g
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        let mut w = weights();
        let before = w.clone();
        let mut st = AdagradState::new(&w);
        { let g = filled(&w, -2.5); adagrad_step(&mut w, &g, &mut st, 0.1) }.unwrap();
        for (a, b) in w.blocks().iter().zip(before.blocks()) {
            for (x, y) in a.weight.iter().zip(&b.weight) {
                assert!(((x - y) - 0.1 * 2.5 / (2.5 + 1e-8)).abs() < 1e-15);
            }
        }
        // untouched embedding rows stay put
        assert_eq!(w.embeddings[0][0..2], before.embeddings[0][0..2]);
        assert_ne!(w.embeddings[0][2..4], before.embeddings[0][2..4]);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut w = weights();
        let before = w.clone();
        let mut st = AdagradState::new(&w);
        let st0 = st.clone();
        { let g = filled(&w, 0.0); adagrad_step(&mut w, &g, &mut st, 0.1) }.unwrap();
        assert_eq!(w, before);
        assert_eq!(st, st0);
    }

    #[test]
    fn second_step_hand_computed() {
        let mut w = weights();
        let mut st = AdagradState::new(&w);
        { let g = filled(&w, 3.0); adagrad_step(&mut w, &g, &mut st, 0.1) }.unwrap();
        let mid = w.clone();
        { let g = filled(&w, 4.0); adagrad_step(&mut w, &g, &mut st, 0.1) }.unwrap();
        for (a, b) in w.blocks().iter().zip(mid.blocks()) {
            for (x, y) in a.bias.iter().zip(&b.bias) {
                // 0.1 * 4 / (sqrt(9 + 16) + 1e-8)
                assert!(((y - x) - 0.08).abs() < 1e-9);
            }
        }
        assert!(st.blocks.iter().all(|l| l.bias.iter().all(|a| *a == 25.0)));
    }

    #[test]
    fn accumulators_never_decrease_and_steps_are_deterministic() {
        let mut w1 = weights();
        let mut w2 = weights();
        let mut s1 = AdagradState::new(&w1);
        let mut s2 = AdagradState::new(&w2);
        let mut prev = s1.clone();
        for i in 0..5 {
            let g = filled(&w1, (i as f64 - 2.0) * 0.7);
            adagrad_step(&mut w1, &g, &mut s1, 0.05).unwrap();
            adagrad_step(&mut w2, &g, &mut s2, 0.05).unwrap();
            for (a, b) in s1.blocks.iter().zip(&prev.blocks) {
                assert!(a.weight.iter().zip(&b.weight).all(|(x, y)| x >= y));
            }
            prev = s1.clone();
        }
        assert_eq!(w1, w2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut w = weights();
        let other = init_weights(&w.schema.clone(), &Architecture::new(vec![4], 2), 0).unwrap();
        let mut st = AdagradState::new(&w);
        let g = WeightGradients::zeros_like(&other);
        assert!(matches!(adagrad_step(&mut w, &g, &mut st, 0.1), Err(EgmnError::Consistency(_))));
        assert!(adagrad_step(&mut w, &WeightGradients::zeros_like(&other), &mut st, 0.0).is_err());
    }
}
