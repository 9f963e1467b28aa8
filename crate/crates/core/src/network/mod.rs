//! Feature vector to mixture parameters: embedding lookup, ReLU backbone
//! and the rate / mean / variance / mixture heads.

mod activation;
mod checkpoint;
mod forward;
mod schema;
mod weights;

pub use activation::{sigmoid, stable_softmax, stable_softplus};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use forward::{
    backward, backward_with, forward, BackwardOptions, ForwardTrace, HeadPre, MEAN_OFFSET_FLOOR, RATE_MAX,
    RATE_MIN, VAR_FLOOR,
};
pub use schema::{CategoricalField, DenseField, EncodedFeatures, FeatureSchema, DEFAULT_EMBEDDING_DIM};
pub use weights::{init_weights, Architecture, Heads, Linear, NetworkWeights, ParamCoord, WeightGradients};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{EgmParams, ParamGrad};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn schema() -> FeatureSchema {
        FeatureSchema {
            categorical: vec![
                CategoricalField { name: "user".into(), vocab_size: 6, embedding_dim: 3 },
                CategoricalField { name: "video".into(), vocab_size: 5, embedding_dim: 2 },
            ],
            dense: vec![DenseField { name: "duration".into() }, DenseField { name: "hour".into() }],
        }
    }

    fn net(k: usize, seed: u64) -> NetworkWeights {
        let mut w = init_weights(&schema(), &Architecture::new(vec![7, 5], k), seed).unwrap();
        // larger embeddings so the backbone sees varied inputs
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for t in &mut w.embeddings {
            t.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        w
    }

    fn x(u: usize, v: usize) -> EncodedFeatures {
        EncodedFeatures { categorical: vec![u, v], dense: vec![0.3, -1.2] }
    }

    #[test]
    fn zero_heads_force_known_params() {
        let mut w = net(3, 1);
        for l in [&mut w.heads.rate, &mut w.heads.mean, &mut w.heads.var, &mut w.heads.mix] {
            l.weight.iter_mut().for_each(|v| *v = 0.0);
        }
        let (p, _) = forward(&w, &x(2, 3)).unwrap();
        let ln2 = 2f64.ln();
        assert!((p.rate() - ln2).abs() < 1e-15);
        for m in p.means() {
            // 1/ln2 + ln2
            assert!((m - 2.135_842_221_448_909).abs() < 1e-12);
        }
        for v in p.variances() {
            assert!((v - ln2).abs() < 1e-15);
        }
        assert!(p.weights().iter().all(|w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn forward_is_pure_and_replayable() {
        let w = net(4, 2);
        let (a, ta) = forward(&w, &x(1, 4)).unwrap();
        let (b, tb) = forward(&w, &x(1, 4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(ta.replay(&w).unwrap(), ta);
    }

    /// Straight-line re-evaluation of the same algebra, written without the
    /// library helpers.
    fn reference_params(w: &NetworkWeights, x: &EncodedFeatures) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut a: Vec<f64> = Vec::new();
        for (i, &id) in x.categorical.iter().enumerate() {
            let d = w.schema.categorical[i].embedding_dim;
            for c in 0..d {
                a.push(w.embeddings[i][id * d + c]);
            }
        }
        a.extend(&x.dense);
        for l in &w.backbone {
            let mut next = vec![0.0; l.out_dim];
            for r in 0..l.out_dim {
                let mut acc = l.bias[r];
                for c in 0..l.in_dim {
                    acc += l.weight[r * l.in_dim + c] * a[c];
                }
                next[r] = if acc > 0.0 { acc } else { 0.0 };
            }
            a = next;
        }
        let aff = |l: &Linear, r: usize| {
            let mut acc = l.bias[r];
            for c in 0..l.in_dim {
                acc += l.weight[r * l.in_dim + c] * a[c];
            }
            acc
        };
        let sp = |z: f64| (1.0 + z.exp()).ln();
        let rate = sp(aff(&w.heads.rate, 0));
        let k = w.arch.k;
        let means = (0..k).map(|i| 1.0 / rate + sp(aff(&w.heads.mean, i))).collect();
        let vars = (0..k).map(|i| sp(aff(&w.heads.var, i))).collect();
        let logits: Vec<f64> = (0..=k).map(|i| aff(&w.heads.mix, i)).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let mix = logits.iter().map(|l| l.exp() / z).collect();
        (rate, means, vars, mix)
    }

    #[test]
    fn forward_matches_straight_line_reimplementation() {
        for seed in 0..20 {
            let w = net(3, seed);
            let input = x(seed as usize % 6, seed as usize % 5);
            let (p, _) = forward(&w, &input).unwrap();
            let (rate, means, vars, mix) = reference_params(&w, &input);
            assert!((p.rate() - rate).abs() <= 1e-12 * rate.max(1.0));
            for (a, b) in p.means().iter().zip(&means) {
                assert!((a - b).abs() <= 1e-12 * b.max(1.0));
            }
            for (a, b) in p.variances().iter().zip(&vars) {
                assert!((a - b).abs() <= 1e-12);
            }
            for (a, b) in p.weights().iter().zip(&mix) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn outputs_satisfy_param_invariants() {
        for seed in 0..30 {
            let mut w = net(4, seed);
            // exaggerate head weights to reach saturated regimes
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for l in [&mut w.heads.rate, &mut w.heads.mean, &mut w.heads.var, &mut w.heads.mix] {
                l.weight.iter_mut().for_each(|v| *v *= rng.random_range(1.0..200.0));
                l.bias.iter_mut().for_each(|v| *v = rng.random_range(-60.0..60.0));
            }
            let (p, _) = forward(&w, &x(1, 1)).unwrap();
            p.validate().unwrap();
            for m in p.means() {
                assert!(*m > 1.0 / p.rate());
            }
            assert!(p.rate() >= RATE_MIN && p.rate() <= RATE_MAX);
        }
    }

    #[test]
    fn ablation_outputs() {
        let mut arch = Architecture::new(vec![4], 3);
        arch.exponential = false;
        let w = init_weights(&schema(), &arch, 3).unwrap();
        let (p, _) = forward(&w, &x(0, 0)).unwrap();
        assert_eq!(p.weights()[0], 0.0);
        assert!((p.weights()[1..].iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let w = init_weights(&schema(), &Architecture::new(vec![4], 0), 3).unwrap();
        let (p, _) = forward(&w, &x(0, 0)).unwrap();
        assert_eq!(p.weights(), &[1.0]);
        assert_eq!(p.k(), 0);
    }

    #[test]
    fn time_scale_rescales_params() {
        let w1 = net(2, 5);
        let mut w2 = w1.clone();
        w2.arch.time_scale = 10.0;
        let (a, _) = forward(&w1, &x(3, 2)).unwrap();
        let (b, _) = forward(&w2, &x(3, 2)).unwrap();
        assert!((b.rate() * 10.0 - a.rate()).abs() < 1e-12);
        assert!((b.mean() - 10.0 * a.mean()).abs() < 1e-9);
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn schema_mismatch_is_a_shape_error() {
        let w = net(2, 0);
        let bad = EncodedFeatures { categorical: vec![1], dense: vec![0.0, 0.0] };
        assert!(matches!(forward(&w, &bad), Err(crate::EgmnError::Shape(_))));
    }

    #[test]
    fn non_finite_activation_names_the_layer() {
        let mut w = net(2, 0);
        w.backbone[1].bias[0] = f64::INFINITY;
        match forward(&w, &x(1, 1)) {
            Err(crate::EgmnError::Numeric { layer, .. }) => assert_eq!(layer, "backbone.1"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    /// Linear test loss with a fixed gradient in parameter space.
    fn linear_loss(p: &EgmParams, g: &ParamGrad) -> f64 {
        g.rate * p.rate()
            + p.means().iter().zip(&g.means).map(|(a, b)| a * b).sum::<f64>()
            + p.variances().iter().zip(&g.variances).map(|(a, b)| a * b).sum::<f64>()
            + p.weights().iter().zip(&g.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    fn random_grad(k: usize, rng: &mut ChaCha8Rng) -> ParamGrad {
        let mut r = || rng.random_range(-1.0..1.0);
        ParamGrad {
            rate: r(),
            means: (0..k).map(|_| r()).collect(),
            variances: (0..k).map(|_| r()).collect(),
            weights: (0..=k).map(|_| r()).collect(),
        }
    }

    fn fd_check(w: &NetworkWeights, input: &EncodedFeatures, g: &ParamGrad, opts: BackwardOptions) -> f64 {
        let (_, trace) = forward(w, input).unwrap();
        let mut grads = WeightGradients::zeros_like(w);
        backward_with(w, &trace, g, 1.0, opts, &mut grads).unwrap();
        let mut coords = w.dense_coords();
        for (f, &id) in input.categorical.iter().enumerate() {
            coords.extend(w.embedding_row_coords(f, id));
        }
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for c in coords {
            let mut wp = w.clone();
            *wp.get_mut(c) += h;
            let mut wm = w.clone();
            *wm.get_mut(c) -= h;
            let lp = linear_loss(&forward(&wp, input).unwrap().0, g);
            let lm = linear_loss(&forward(&wm, input).unwrap().0, g);
            let fd = (lp - lm) / (2.0 * h);
            let an = grads.get(c);
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..4 {
            let mut w = net(3, seed);
            w.arch.time_scale = 3.0;
            let g = random_grad(3, &mut rng);
            let worst = fd_check(&w, &x(seed as usize, 4 - seed as usize), &g, BackwardOptions::default());
            assert!(worst < 1e-5, "seed {seed}: worst relative error {worst}");
        }
    }

    #[test]
    fn dropping_the_rate_mean_coupling_breaks_the_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = net(3, 7);
        let mut g = random_grad(3, &mut rng);
        g.means = vec![1.0; 3];
        let worst = fd_check(&w, &x(2, 2), &g, BackwardOptions { rate_mean_coupling: false });
        assert!(worst > 1e-2, "worst {worst}");
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let w = net(3, 3);
        let (_, t) = forward(&w, &x(1, 2)).unwrap();
        let g = backward(&w, &t, &ParamGrad::zeros(3)).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn mismatched_trace_is_rejected() {
        let w = net(3, 3);
        let other = net(2, 3);
        let (_, t) = forward(&other, &x(1, 2)).unwrap();
        assert!(matches!(
            backward(&w, &t, &ParamGrad::zeros(3)),
            Err(crate::EgmnError::Consistency(_))
        ));
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut w = net(4, 9);
        w.arch.time_scale = 7.123_456_789_012_345;
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &w).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, w);
        let all_bits_equal = back
            .blocks()
            .iter()
            .zip(w.blocks())
            .all(|(a, b)| a.weight.iter().zip(&b.weight).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(all_bits_equal);
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn checkpoint_rejects_wrong_version_and_shapes() {
        let w = net(2, 1);
        let mut v: serde_json::Value = serde_json::to_value(serde_json::json!({
            "format": CHECKPOINT_FORMAT, "version": 99, "weights": w
        }))
        .unwrap();
        assert!(read_checkpoint(v.to_string().as_bytes()).is_err());
        v["version"] = 1.into();
        v["weights"]["heads"]["mean"]["out_dim"] = 5.into();
        assert!(read_checkpoint(v.to_string().as_bytes()).is_err());
        v["format"] = "other".into();
        assert!(read_checkpoint(v.to_string().as_bytes()).is_err());
    }
}
