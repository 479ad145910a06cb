mod common;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use unetdr::arch::{Model, NamedTensor, NetworkConfig, Variant};
use unetdr::io::{generate_phantom, make_split, Case, PhantomParams};
use unetdr::train::{
    adam_step, cross_validate, evaluate_samples, train_fold, train_step, AdamConfig, AdamState, Sample, TrainConfig,
    TrainState, LAST_CHECKPOINT, LOG_FILE,
};
use unetdr::Tensor;

fn phantoms(seeds: std::ops::Range<u64>, extent: usize) -> Vec<Sample> {
    seeds
        .map(|s| {
            let (image, label) = generate_phantom(s, [extent; 3], &PhantomParams::default()).unwrap();
            Sample::from_case(&Case {
                id: format!("p{s:03}"),
                image,
                label,
            })
        })
        .collect()
}

fn tiny(seed: u64) -> Model {
    Model::new(NetworkConfig::new(Variant::UnetDr, 2), seed).unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn adam_two_steps_match_scalar_reference() {
    let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
    let grads = [0.3, -1.7];
    // straight-line reference
    let (mut p, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
    for (t, g) in grads.iter().enumerate() {
        let t = t as i32 + 1;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
    }
    let mut params = vec![NamedTensor {
        name: "w".into(),
        value: Tensor::scalar(0.5),
    }];
    let mut state = AdamState::new(&params, AdamConfig { lr, beta1: b1, beta2: b2, eps });
    for g in grads {
        adam_step(&mut params, &[Tensor::scalar(g)], &mut state).unwrap();
    }
    assert!((params[0].value.item().unwrap() - p).abs() < 1e-15);

    let err = adam_step(&mut params, &[Tensor::scalar(f64::NAN)], &mut state).unwrap_err().to_string();
    assert!(err.contains("'w'"), "{err}");
}

#[test]
fn one_epoch_appends_one_row() {
    let data = phantoms(0..2, 16);
    let state = train_fold(TrainState::new(tiny(0), AdamConfig::default()), &data[..1], &data[1..], &config(1), None).unwrap();
    assert_eq!(state.log.rows.len(), 1);
    assert_eq!(state.log.rows[0].epoch, 1);
    assert!(state.log.rows[0].loss.total.is_finite());
}

#[test]
fn seeded_runs_repeat_exactly() {
    let data = phantoms(0..3, 16);
    let run = || {
        train_fold(TrainState::new(tiny(1), AdamConfig::default()), &data[..2], &data[2..], &config(3), None).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.log.to_text(), b.log.to_text());
    assert_eq!(a.model.store(), b.model.store());
}

#[test]
fn resumed_run_is_bit_identical_to_continuous_run() {
    let data = phantoms(0..3, 16);
    let (train, val) = (&data[..2], &data[2..]);
    let straight = tempfile::tempdir().unwrap();
    let split = tempfile::tempdir().unwrap();

    train_fold(TrainState::new(tiny(2), AdamConfig::default()), train, val, &config(4), Some(straight.path())).unwrap();

    train_fold(TrainState::new(tiny(2), AdamConfig::default()), train, val, &config(2), Some(split.path())).unwrap();
    let resumed = TrainState::resume(split.path(), AdamConfig::default()).unwrap();
    assert_eq!(resumed.epochs_done, 2);
    train_fold(resumed, train, val, &config(4), Some(split.path())).unwrap();

    for name in [LAST_CHECKPOINT, LOG_FILE, "best.ckpt"] {
        let a = std::fs::read(straight.path().join(name)).unwrap();
        let b = std::fs::read(split.path().join(name)).unwrap();
        assert!(a == b, "{name} differs after resume");
    }
}

fn parameter_hash(model: &Model) -> u64 {
    let mut h = DefaultHasher::new();
    for p in model.store().params().iter().chain(model.store().buffers()) {
        p.name.hash(&mut h);
        for v in p.value.data() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

#[test]
fn validation_leaves_parameters_untouched() {
    let data = phantoms(0..3, 16);
    let mut model = tiny(3);
    let mut adam = AdamState::new(model.store().params(), AdamConfig::default());
    train_step(&mut model, &mut adam, &[&data[0]]).unwrap();
    let before = parameter_hash(&model);
    evaluate_samples(&model, &data, 0.5).unwrap();
    assert_eq!(parameter_hash(&model), before);
}

#[test]
fn fixed_batch_loss_is_non_increasing_for_most_seeds() {
    let data = phantoms(100..101, 16);
    let mut monotone = 0;
    for seed in 0..20 {
        let mut model = Model::new(NetworkConfig::new(Variant::UnetDr, 4), seed).unwrap();
        let mut adam = AdamState::new(model.store().params(), AdamConfig::default());
        let losses: Vec<f64> = (0..20)
            .map(|_| train_step(&mut model, &mut adam, &[&data[0]]).unwrap().total)
            .collect();
        if losses.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        }
    }
    assert!(monotone >= 19, "only {monotone}/20 seeds were monotone");
}

#[test]
fn two_fold_cross_validation_contract() {
    let data = phantoms(0..8, 16);
    let ids: Vec<String> = data.iter().map(|s| s.id.clone()).collect();
    let split = make_split(&ids, 0.2, 2, 0).unwrap();
    let report = cross_validate(&data, &split, &NetworkConfig::new(Variant::UnetDr, 2), &config(2), None).unwrap();
    assert_eq!(report.folds.len(), 2);
    assert_eq!(report.test_report.per_case.len(), split.test_ids.len());
    let all = report
        .folds
        .iter()
        .flat_map(|f| f.train_report.per_case.iter().chain(&f.val_report.per_case))
        .chain(&report.test_report.per_case);
    for c in all {
        let s = c.scores;
        for v in [s.dc, s.ji, s.ac] {
            assert!((0.0..=1.0).contains(&v), "{}: {s:?}", c.case_id);
        }
        assert!((s.ji - s.dc / (2.0 - s.dc)).abs() < 1e-12);
    }
    let table = report.summary_table();
    for row in ["train\t", "validation\t", "test\t"] {
        assert!(table.contains(row), "{table}");
    }
}
