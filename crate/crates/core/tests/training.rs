mod common;

use common::separable_dataset;
use itct::model::{ItctModel, ModelConfig};
use itct::nn::ParamTensor;
use itct::training::{self, AdamW, AdamWParams, StopReason, TrainConfig};
use itct::Error;

fn small_model(seed: u64) -> ItctModel<f32> {
    let mut config = ModelConfig::new(vec![3], 3);
    config.embedding_dim = 8;
    config.n_blocks = 1;
    config.n_heads = 2;
    ItctModel::init(config, seed).unwrap()
}

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    }
}

#[test]
fn callback_off_runs_every_epoch() {
    let (train, val) = (separable_dataset(96, 1), separable_dataset(32, 2));
    let mut model = small_model(0);
    let history = training::train(&mut model, &train, &val, &quick_config(4)).unwrap();
    assert_eq!(history.len(), 4);
    assert_eq!(history.stop_reason, StopReason::Completed);
    assert!(!history.restored_best);
    let epochs: Vec<usize> = history.epochs.iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, vec![1, 2, 3, 4]);
    assert!(history.total_seconds > 0.0);
    assert!(history.epochs.iter().all(|e| e.seconds > 0.0));
}

#[test]
fn callback_restores_the_best_epoch() {
    let (train, val) = (separable_dataset(96, 3), separable_dataset(16, 4));
    let mut config = quick_config(30);
    // A large step makes the validation loss noisy enough to stall.
    config.learning_rate = 5e-2;
    config.callback_enabled = true;
    config.patience = 2;
    let mut model = small_model(1);
    let history = training::train(&mut model, &train, &val, &config).unwrap();
    assert!(history.len() <= 30);
    assert!(history.restored_best);
    let min = history.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(history.final_val_loss(), Some(min));
    let (val_loss, _) = training::loss_and_accuracy(&model, &val).unwrap();
    assert!((val_loss - min).abs() < 1e-12, "{val_loss} vs {min}");
    if history.stop_reason == StopReason::EarlyStopped {
        let best = history.best_epoch.unwrap();
        assert_eq!(history.len(), best + config.patience);
    }
}

#[test]
fn training_is_deterministic() {
    let (train, val) = (separable_dataset(80, 5), separable_dataset(20, 6));
    let run = || {
        let mut model = small_model(2);
        let h = training::train(&mut model, &train, &val, &quick_config(3)).unwrap();
        (
            model,
            h.epochs
                .iter()
                .map(|e| (e.train_loss, e.val_loss, e.val_accuracy))
                .collect::<Vec<_>>(),
        )
    };
    let (m1, h1) = run();
    let (m2, h2) = run();
    assert_eq!(h1, h2);
    assert_eq!(m1, m2);
}

#[test]
fn empty_and_mismatched_sets_are_rejected() {
    let train = separable_dataset(40, 7);
    let empty = train.select_rows(&[]);
    let mut model = small_model(3);
    assert!(matches!(
        training::train(&mut model, &empty, &train, &quick_config(1)),
        Err(Error::Dataset(_))
    ));
    let other = train
        .select_features(&["a".to_string(), "protocol".to_string()])
        .unwrap();
    assert!(training::train(&mut model, &other, &other, &quick_config(1)).is_err());
}

#[test]
fn invalid_config_is_a_usage_error() {
    let train = separable_dataset(40, 8);
    let mut model = small_model(4);
    let bad = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    let err = training::train(&mut model, &train, &train, &bad).unwrap_err();
    assert_eq!(err.class(), itct::ErrorClass::Usage);
}

#[test]
fn adamw_pure_decay() {
    let params = AdamWParams {
        learning_rate: 0.001,
        weight_decay: 0.0001,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-7,
    };
    let mut opt = AdamW::<f64>::new(params);
    let mut theta = ParamTensor::<f64>::ones(1, 1);
    opt.step(vec![("theta".into(), &mut theta)]).unwrap();
    assert!((theta.value.data()[0] - 0.9999999).abs() < 1e-15);
    assert_eq!(opt.step_count(), 1);
}

#[test]
fn adamw_direction_is_minus_sign_of_gradient() {
    for g in [3.0, -0.25] {
        let mut opt = AdamW::<f64>::new(AdamWParams {
            learning_rate: 0.01,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        });
        let mut theta = ParamTensor::<f64>::zeros(1, 1);
        theta.grad.data_mut()[0] = g;
        opt.step(vec![("theta".into(), &mut theta)]).unwrap();
        let update = theta.value.data()[0];
        let expected = -g.signum() * 0.01 / (1.0 + 1e-7 / g.abs());
        assert!((update - expected).abs() < 1e-9, "{update} vs {expected}");
    }
}

#[test]
fn inference_scores_every_row_in_chunks() {
    let data = separable_dataset(training::INFERENCE_CHUNK + 5, 9);
    let model = small_model(5);
    let scores = training::predict_dataset(&model, &data).unwrap();
    assert_eq!(scores.len(), data.n_rows());
    let direct = model.predict(&data.select_rows(&[data.n_rows() - 1]).input()).unwrap();
    assert_eq!(scores[data.n_rows() - 1], f64::from(direct[0]));
}
