#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use itct::dataset::{EncodedDataset, FeatureSet};
use itct::model::{ItctModel, Mode, ModelConfig, ModelInput};
use itct::nn::Tensor;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// `|a - n| / max(|a|, |n|, 1e-3)`; the floor keeps gradients that are
/// zero up to rounding from dominating the comparison.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Central differences of `f` around `x`, one coordinate at a time.
pub fn numeric_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + FD_STEP;
            let up = f(&probe);
            probe[i] = x[i] - FD_STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// A seeded layout plus matching random inputs.
pub struct ToyProblem {
    pub config: ModelConfig,
    pub rows: usize,
    pub cat: Vec<u32>,
    pub cont: Vec<f32>,
    pub labels: Vec<u8>,
}

impl ToyProblem {
    pub fn random(seed: u64, d: usize, blocks: usize, heads: usize, m: usize, c: usize, rows: usize) -> Self {
        let mut r = rng(seed);
        let vocab_sizes: Vec<usize> = (0..m).map(|_| r.gen_range(2..6)).collect();
        let cat = (0..rows * m)
            .map(|k| r.gen_range(0..vocab_sizes[k % m] as u32))
            .collect();
        let cont = (0..rows * c).map(|_| r.gen_range(-2.0f32..2.0)).collect();
        let labels = (0..rows).map(|i| (i % 2) as u8).collect();
        let mut config = ModelConfig::new(vocab_sizes, c);
        config.embedding_dim = d;
        config.n_blocks = blocks;
        config.n_heads = heads;
        config.dropout = 0.0;
        Self {
            config,
            rows,
            cat,
            cont,
            labels,
        }
    }

    pub fn input(&self) -> ModelInput<'_> {
        ModelInput {
            rows: self.rows,
            cat: &self.cat,
            cont: &self.cont,
        }
    }
}

fn flat_params(model: &ItctModel<f64>) -> Vec<f64> {
    model
        .params()
        .iter()
        .flat_map(|(_, p)| p.value.data().to_vec())
        .collect()
}

fn set_params(model: &mut ItctModel<f64>, flat: &[f64]) {
    let mut at = 0;
    for (_, p) in model.params_mut() {
        let n = p.len();
        p.value.data_mut().copy_from_slice(&flat[at..at + n]);
        at += n;
    }
}

fn loss(model: &ItctModel<f64>, problem: &ToyProblem) -> f64 {
    let probs = model.predict(&problem.input()).unwrap();
    itct::model::bce_loss(&probs, &problem.labels).unwrap()
}

/// Largest relative error between the model's analytic loss gradient and
/// central differences over every parameter.
pub fn model_gradient_error(problem: &ToyProblem, seed: u64) -> f64 {
    let mut model = ItctModel::<f64>::init(problem.config.clone(), seed).unwrap();
    let cache = model.forward(&problem.input(), Mode::Train, &mut rng(0)).unwrap();
    model.zero_grad();
    model.backward(&cache, &problem.labels).unwrap();
    let analytic: Vec<f64> = model
        .params()
        .iter()
        .flat_map(|(_, p)| p.grad.data().to_vec())
        .collect();

    let x = flat_params(&model);
    let mut probe = model.clone();
    let numeric = numeric_gradient(&x, |v| {
        set_params(&mut probe, v);
        loss(&probe, problem)
    });
    max_relative_error(&analytic, &numeric)
}

/// Rows whose label is decided by a linear rule on the continuous features,
/// with one uninformative categorical column. Labels alternate.
pub fn separable_dataset(rows: usize, seed: u64) -> EncodedDataset {
    let mut r = rng(seed);
    let c = 3;
    let mut cont = Vec::with_capacity(rows * c);
    let mut labels = Vec::with_capacity(rows);
    let mut cat = Vec::with_capacity(rows);
    for i in 0..rows {
        let label = (i % 2) as u8;
        let sign = if label == 1 { 1.0 } else { -1.0 };
        // The class sits along (1, -1, 0), which survives the per-row
        // normalisation of continuous features.
        let shift = sign * (0.5 + r.gen_range(0.0f32..1.0));
        let direction = [1.0f32, -1.0, 0.0];
        cont.extend(direction.iter().map(|dir| r.gen_range(-0.2f32..0.2) + shift * dir));
        labels.push(label);
        cat.push(r.gen_range(0..3u32));
    }
    EncodedDataset::new(
        FeatureSet {
            categorical: vec!["protocol".into()],
            continuous: vec!["a".into(), "b".into(), "c".into()],
        },
        vec![3],
        cat,
        cont,
        labels,
    )
    .unwrap()
}
