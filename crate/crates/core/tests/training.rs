use adascan::data::{generate_synthetic, DataSource, DistractorMode, SynthConfig};
use adascan::model::{
    check_gradients, init_params, sample_gradients, Dims, ForwardOptions, HyperParams, ParamGrads, RegKind,
    BLOCK_NAMES,
};
use adascan::numcore::Tensor;
use adascan::pooling::FeatureSequence;
use adascan::train::{batch_gradient, evaluate, evaluate_with, train};
use adascan::{Dataset, ModelParams, Pooler};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_instance(pooler: Pooler, reg: RegKind, seed: u64) -> (FeatureSequence<f64>, ModelParams) {
    let hyper = HyperParams {
        hidden: (6, 4),
        lambda: 1.0,
        reg_kind: reg,
        ..HyperParams::default()
    };
    let mut params = init_params(Dims::new(8, 3, (6, 4)), hyper, pooler, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for (i, b) in params.blocks_mut().into_iter().enumerate() {
        if i % 2 == 1 {
            b.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
    }
    let frames = (0..5 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let seq = FeatureSequence::new("s", 2, Tensor::matrix(5, 8, frames).unwrap(), None).unwrap();
    (seq, params)
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for pooler in Pooler::ALL {
        for reg in [RegKind::Entropy, RegKind::L1] {
            for seed in 0..3 {
                let (seq, params) = small_instance(pooler, reg, seed);
                let report = check_gradients(&seq, &params, &ForwardOptions::eval(), 1e-5, None).unwrap();
                assert_eq!(report.blocks.len(), BLOCK_NAMES.len());
                assert!(
                    report.max_rel_error() < 1e-4,
                    "{pooler:?}/{reg:?}/seed {seed}: {:?}",
                    report.worst()
                );
            }
        }
    }
}

#[test]
fn gradient_check_catches_a_broken_rule() {
    let (seq, params) = small_instance(Pooler::AdaScan, RegKind::Entropy, 0);
    for op in ["tanh", "sigmoid", "div_scalar", "softmax", "l2_normalize"] {
        let kind = op.parse().unwrap();
        let report = check_gradients(&seq, &params, &ForwardOptions::eval(), 1e-5, Some(kind)).unwrap();
        assert!(report.max_rel_error() > 1e-2, "{op} went unnoticed: {:?}", report.worst());
    }
}

fn tiny_data() -> (Dataset, Dataset) {
    generate_synthetic::<f64>(&SynthConfig::tiny()).unwrap()
}

fn tiny_params(pooler: Pooler, seed: u64) -> ModelParams {
    let hyper = HyperParams {
        hidden: (8, 4),
        epochs: 3,
        batch_size: 8,
        dropout_p: 0.2,
        seed,
        ..HyperParams::default()
    };
    init_params(Dims::new(8, 3, (8, 4)), hyper, pooler, seed).unwrap()
}

#[test]
fn batch_gradient_is_the_mean_of_sample_gradients() {
    let (train_set, _) = tiny_data();
    let params = tiny_params(Pooler::AdaScan, 5);
    let batch: Vec<&FeatureSequence<f64>> = train_set.samples.iter().take(7).collect();
    let seed = |i: usize| 1000 + i as u64;
    let (loss, grads) = batch_gradient(&batch, &params, true, seed).unwrap();

    let mut sum = ParamGrads::zeros_like(&params);
    let mut loss_sum = 0.0;
    for (i, s) in batch.iter().enumerate() {
        let opts = ForwardOptions {
            train: true,
            dropout_seed: seed(i),
            importance_override: None,
        };
        let o = sample_gradients(s, &params, &opts).unwrap();
        sum.add_assign(&o.grads).unwrap();
        loss_sum += o.loss;
    }
    sum.scale(1.0 / 7.0);
    assert!((loss - loss_sum / 7.0).abs() < 1e-12);
    for (a, b) in grads.blocks.iter().zip(&sum.blocks) {
        assert!(a.max_abs_diff(b).unwrap() < 1e-12);
    }
}

#[test]
fn training_is_reproducible_bitwise() {
    let (tr, te) = tiny_data();
    for pooler in Pooler::ALL {
        let a = train(&tr, Some(&te), tiny_params(pooler, 9), 9).unwrap();
        let b = train(&tr, Some(&te), tiny_params(pooler, 9), 9).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params.to_json().unwrap(), b.params.to_json().unwrap());
        let c = train(&tr, Some(&te), tiny_params(pooler, 9), 10).unwrap();
        assert_ne!(a.params.to_json().unwrap(), c.params.to_json().unwrap());
    }
}

#[test]
fn log_has_one_train_and_test_record_per_epoch() {
    let (tr, te) = tiny_data();
    let out = train(&tr, Some(&te), tiny_params(Pooler::AdaScan, 1), 1).unwrap();
    assert_eq!(out.log.len(), 2 * 4);
    for (i, r) in out.log.iter().enumerate() {
        assert_eq!(r.epoch, i / 2);
        assert_eq!(r.split, if i % 2 == 0 { "train" } else { "test" });
        assert!((0.0..=1.0).contains(&r.accuracy));
        assert!(r.mean_selected_fraction.is_some() && r.signal_gap.is_some());
    }
    let mean = train(&tr, None, tiny_params(Pooler::Mean, 1), 1).unwrap();
    assert_eq!(mean.log.len(), 4);
    assert!(mean.log.iter().all(|r| r.mean_selected_fraction.is_none() && r.signal_gap.is_none()));
}

#[test]
fn loss_drops_within_five_epochs() {
    let (tr, te) = generate_synthetic::<f64>(&SynthConfig::standard()).unwrap();
    let hyper = HyperParams {
        epochs: 5,
        seed: 42,
        ..HyperParams::default()
    };
    let params = init_params(Dims::new(16, 4, hyper.hidden), hyper, Pooler::AdaScan, 42).unwrap();
    let out = train(&tr, Some(&te), params, 42).unwrap();
    let loss = |epoch: usize| out.log.iter().find(|r| r.epoch == epoch && r.split == "train").unwrap().mean_loss;
    assert!(loss(5) < loss(0), "{} vs {}", loss(5), loss(0));
}

#[test]
fn mean_pooling_fits_a_separable_set() {
    let cfg = SynthConfig {
        signal_frames: 20,
        distractor_mode: DistractorMode::Gaussian,
        ..SynthConfig::standard()
    };
    let (tr, _) = generate_synthetic::<f64>(&cfg).unwrap();
    let hyper = HyperParams {
        lambda: 0.0,
        epochs: 20,
        seed: 3,
        ..HyperParams::default()
    };
    let params = init_params(Dims::new(16, 4, hyper.hidden), hyper, Pooler::Mean, 3).unwrap();
    let out = train(&tr, None, params, 3).unwrap();
    let acc = out.log.last().unwrap().accuracy;
    assert!(acc >= 0.99, "train accuracy {acc}");
}

#[test]
fn untrained_models_score_at_chance() {
    let (_, te) = generate_synthetic::<f64>(&SynthConfig::standard()).unwrap();
    let accs: Vec<f64> = (0..8)
        .map(|seed| {
            let p = init_params(Dims::new(16, 4, (64, 32)), HyperParams::default(), Pooler::AdaScan, seed).unwrap();
            evaluate(&te, &p).unwrap().accuracy
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.25).abs() <= 0.1, "{accs:?}");
}

#[test]
fn unit_importance_selects_every_frame() {
    let (_, te) = tiny_data();
    let p = tiny_params(Pooler::AdaScan, 2);
    let opts = ForwardOptions {
        importance_override: Some(1.0),
        ..ForwardOptions::eval()
    };
    let m = evaluate_with(&te, &p, &opts).unwrap();
    assert_eq!(m.mean_selected_fraction, Some(1.0));
    assert_eq!(m.signal_gap, Some(0.0));
}

#[test]
fn evaluation_ignores_dropout() {
    let (_, te) = tiny_data();
    let p = tiny_params(Pooler::AdaScan, 4);
    let a = evaluate(&te, &p).unwrap();
    let train_mode = ForwardOptions {
        train: true,
        dropout_seed: 77,
        importance_override: None,
    };
    assert_eq!(evaluate_with(&te, &p, &train_mode).unwrap(), a);
    assert_eq!(a.per_class_accuracy.len(), 3);
}

#[test]
fn l1_selects_fewer_frames_than_entropy() {
    let (tr, te) = generate_synthetic::<f64>(&SynthConfig::standard()).unwrap();
    let fraction = |reg: RegKind| {
        let hyper = HyperParams {
            reg_kind: reg,
            lambda: 1.0,
            epochs: 10,
            seed: 42,
            ..HyperParams::default()
        };
        let p = init_params(Dims::new(16, 4, hyper.hidden), hyper, Pooler::AdaScan, 42).unwrap();
        let out = train(&tr, Some(&te), p, 42).unwrap();
        evaluate(&te, &out.params).unwrap().mean_selected_fraction.unwrap()
    };
    let (l1, entropy) = (fraction(RegKind::L1), fraction(RegKind::Entropy));
    assert!(l1 < entropy, "l1 {l1} vs entropy {entropy}");
}

#[test]
fn non_finite_loss_names_the_sample() {
    let mut rows = vec![vec![0.1; 8]; 6];
    rows[3] = vec![1.5e308; 8];
    rows[4] = vec![1.5e308; 8];
    let bad = FeatureSequence::from_rows("overflowing", 0, &rows).unwrap();
    let ok = FeatureSequence::from_rows("fine", 1, &vec![vec![0.2; 8]; 6]).unwrap();
    let ds = Dataset::new(vec![ok, bad], 3, DataSource::Derived("test".into())).unwrap();
    let err = train(&ds, None, tiny_params(Pooler::Mean, 0), 0).unwrap_err();
    assert!(err.to_string().contains("overflowing"), "{err}");
}

#[test]
fn mismatched_dimensions_are_refused() {
    let (tr, _) = tiny_data();
    let p = init_params(Dims::new(9, 3, (8, 4)), HyperParams { hidden: (8, 4), ..HyperParams::default() }, Pooler::Mean, 0)
        .unwrap();
    assert!(train(&tr, None, p.clone(), 0).is_err());
    assert!(evaluate(&tr, &p).is_err());
}
