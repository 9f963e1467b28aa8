use egmn::data::{
    generate_synthetic, split, Dataset, PreprocessConfig, SplitMode, SyntheticWorldConfig, Transform,
};
use egmn::data::synth::Oracle;
use egmn::dist::EgmParams;
use egmn::metrics::{xauc, MetricReport};
use egmn::network::{forward, init_weights, Architecture};
use egmn::runner::{evaluate, predict, predict_params, train, TrainConfig};
use egmn::{EgmnError, Execution};

struct World {
    transform: Transform,
    train: Dataset,
    eval: Dataset,
    oracle: Oracle,
}

fn world(n: usize) -> World {
    let cfg = SyntheticWorldConfig { users: 12, videos: 10, ..Default::default() };
    let (records, oracle) = generate_synthetic(&cfg, n).unwrap();
    let (tr, ev) = split(&Dataset::from_records(records), SplitMode::Random, 0.8, 3).unwrap();
    let transform = Transform::fit(tr.records(), &PreprocessConfig::default()).unwrap();
    World {
        train: transform.apply(tr).unwrap(),
        eval: transform.apply(ev).unwrap(),
        transform,
        oracle,
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        k: 3,
        epochs: 2,
        batch: 256,
        hidden: vec![16, 8],
        deterministic: true,
        xauc_pairs: 20_000,
        ..Default::default()
    }
}

#[test]
fn deterministic_runs_are_bit_identical_across_execution_modes() {
    let w = world(3000);
    let a = train(&small_config(), &w.transform, &w.train, &w.eval, Execution::Parallel).unwrap();
    let b = train(&small_config(), &w.transform, &w.train, &w.eval, Execution::Sequential).unwrap();
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.report, b.report);
    let (mut ha, mut hb) = (Vec::new(), Vec::new());
    a.history.write_csv(&mut ha).unwrap();
    b.history.write_csv(&mut hb).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a.history.len(), 2);
}

#[test]
fn nondeterministic_mode_reports_the_seed_it_used() {
    let w = world(1500);
    let cfg = TrainConfig { deterministic: false, epochs: 1, ..small_config() };
    let a = train(&cfg, &w.transform, &w.train, &w.eval, Execution::Sequential).unwrap();
    let replay = TrainConfig { deterministic: true, shuffle_seed: a.shuffle_seed, ..cfg };
    let b = train(&replay, &w.transform, &w.train, &w.eval, Execution::Sequential).unwrap();
    assert_eq!(a.weights, b.weights);
}

#[test]
fn predictions_agree_with_a_forward_pass() {
    let w = world(1500);
    let out = train(&small_config(), &w.transform, &w.train, &w.eval, Execution::Sequential).unwrap();
    let records = &w.eval.records()[..50];
    let preds = predict(&out.weights, &w.transform, records, &[2.0, 4.0], &[0.5, 0.9], Execution::Parallel).unwrap();
    for (r, p) in records.iter().zip(&preds) {
        let (params, _) = forward(&out.weights, &w.transform.encode(r)).unwrap();
        assert_eq!(p.params, params);
        assert_eq!(p.expected.to_bits(), params.mean().to_bits());
        assert_eq!(p.cdf[1], (4.0, params.interval_prob(f64::NEG_INFINITY, 4.0).unwrap()));
        let (q, v) = p.quantiles[0];
        assert_eq!(q, 0.5);
        assert!((params.cdf(v) - 0.5).abs() <= 1e-8);
    }
}

#[test]
fn unknown_ids_predict_through_reserved_row() {
    let w = world(1500);
    let out = train(&small_config(), &w.transform, &w.train, &w.eval, Execution::Sequential).unwrap();
    let mut r = w.eval.records()[0].clone();
    r.user_id = "never-seen".into();
    r.video_id = "nor-this".into();
    let p = predict(&out.weights, &w.transform, &[r], &[4.0], &[], Execution::Sequential).unwrap();
    assert!(p[0].expected.is_finite());
}

#[test]
fn evaluate_matches_training_report_and_round_trips() {
    let w = world(2000);
    let cfg = small_config();
    let out = train(&cfg, &w.transform, &w.train, &w.eval, Execution::Parallel).unwrap();
    let report = evaluate(&out.weights, &w.transform, &w.eval, cfg.xauc_pairs, cfg.xauc_seed, Execution::Sequential).unwrap();
    assert_eq!(report, out.report);
    assert_eq!(MetricReport::from_text(&report.to_text()).unwrap(), report);
    assert!(report.quick_skip_at(4.0).is_some());
}

#[test]
fn schema_mismatch_is_rejected() {
    let w = world(1500);
    let other = world(600);
    let weights = init_weights(&other.transform.schema(), &Architecture::new(vec![4], 2), 0).unwrap();
    if weights.schema != w.transform.schema() {
        let err = evaluate(&weights, &w.transform, &w.eval, 100, 0, Execution::Sequential).unwrap_err();
        assert!(matches!(err, EgmnError::Schema(_)));
    }
    let raw = Dataset::from_records(w.eval.records().to_vec());
    let cfg = small_config();
    assert!(matches!(
        train(&cfg, &w.transform, &raw, &w.eval, Execution::Sequential),
        Err(EgmnError::Consistency(_))
    ));
}

#[test]
fn constant_predictor_has_chance_xauc() {
    let w = world(1500);
    let labels = w.eval.labels();
    let c = vec![3.0; labels.len()];
    assert_eq!(xauc(&c, &labels, 1_000_000, 0).unwrap(), 0.5);
}

#[test]
fn oracle_means_bound_trained_xauc() {
    let w = world(4000);
    let out = train(&small_config(), &w.transform, &w.train, &w.eval, Execution::Parallel).unwrap();
    let labels = w.eval.labels();
    let model: Vec<f64> = predict_params(&out.weights, w.eval.examples(), Execution::Parallel)
        .unwrap()
        .iter()
        .map(EgmParams::mean)
        .collect();
    let truth: Vec<f64> = w
        .eval
        .records()
        .iter()
        .map(|r| w.oracle.params(&r.user_id, &r.video_id).unwrap().mean())
        .collect();
    let xm = xauc(&model, &labels, usize::MAX, 0).unwrap();
    let xo = xauc(&truth, &labels, usize::MAX, 0).unwrap();
    assert!(xo >= xm, "oracle {xo} model {xm}");
}

#[test]
fn ablation_outputs_respect_their_constraints() {
    let w = world(1500);
    let no_gauss = TrainConfig { disable_gaussians: true, k: 0, epochs: 1, ..small_config() };
    let out = train(&no_gauss, &w.transform, &w.train, &w.eval, Execution::Sequential).unwrap();
    for p in predict_params(&out.weights, &w.eval.examples()[..20], Execution::Sequential).unwrap() {
        assert_eq!(p.weights(), &[1.0]);
    }
    let no_exp = TrainConfig { disable_exponential: true, epochs: 1, ..small_config() };
    let out = train(&no_exp, &w.transform, &w.train, &w.eval, Execution::Sequential).unwrap();
    for p in predict_params(&out.weights, &w.eval.examples()[..20], Execution::Sequential).unwrap() {
        assert_eq!(p.exp_weight(), 0.0);
        assert!((p.weights()[1..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn keep_best_returns_best_mae_epoch() {
    let w = world(2000);
    let cfg = TrainConfig { keep_best: true, epochs: 3, ..small_config() };
    let out = train(&cfg, &w.transform, &w.train, &w.eval, Execution::Sequential).unwrap();
    let best = out.history.best_mae().unwrap();
    assert_eq!(out.report.mae, best.eval_mae);
}

#[test]
fn loss_terms_can_be_dropped() {
    let w = world(1200);
    for cfg in [
        TrainConfig { drop_mle: true, epochs: 1, ..small_config() },
        TrainConfig { drop_entropy: true, epochs: 1, ..small_config() },
        TrainConfig { drop_reg: true, epochs: 1, ..small_config() },
    ] {
        let out = train(&cfg, &w.transform, &w.train, &w.eval, Execution::Sequential).unwrap();
        let r = &out.history.records[0];
        assert!(r.train_loss.is_finite());
        if cfg.drop_mle {
            assert!((r.train_loss - (0.1 * r.train_entropy + r.train_reg)).abs() < 1e-9 * r.train_loss.abs().max(1.0));
        }
    }
}
