//! Mini-batch AdamW training with optional early stopping, plus fine-tuning
//! of a saved model.

mod history;
mod optim;

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use history::{EpochRecord, History, StopReason};
pub use optim::{AdamW, AdamWParams};

use crate::dataset::{encode, ColumnKind, DatasetTable, EncodedDataset};
use crate::error::{Error, Result};
use crate::model::{bce_loss, ItctModel, Mode, ModelBundle};
use crate::nn::Scalar;

/// Rows per forward pass when scoring a whole split.
pub const INFERENCE_CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub callback_enabled: bool,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            weight_decay: 0.0001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            batch_size: 265,
            epochs: 20,
            dropout: 0.2,
            callback_enabled: false,
            patience: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults for continuing training of a saved model.
    pub fn fine_tune() -> Self {
        Self {
            learning_rate: 0.0001,
            epochs: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("AdamW betas must be in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("AdamW epsilon must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("at least one epoch is required".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWParams {
        AdamWParams {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Patience {
    Improved,
    Waiting,
    Stop,
}

/// Validation-loss monitor: stops once the loss has failed to strictly
/// improve on its best value for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            wait: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, val_loss: f64) -> Patience {
        match self.best {
            Some((_, best)) if !(val_loss < best) => {
                self.wait += 1;
                if self.wait >= self.patience {
                    Patience::Stop
                } else {
                    Patience::Waiting
                }
            }
            _ => {
                self.best = Some((epoch, val_loss));
                self.wait = 0;
                Patience::Improved
            }
        }
    }

    /// `(epoch, loss)` of the best epoch so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Runs `f` and returns its result with the elapsed wall-clock seconds.
pub fn measure<T>(phase: &str, f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    let secs = start.elapsed().as_secs_f64();
    log::debug!("{phase}: {secs:.3}s");
    (out, secs)
}

/// Eval-mode attack probabilities for every row, scored in chunks.
pub fn predict_dataset<F: Scalar>(model: &ItctModel<F>, data: &EncodedDataset) -> Result<Vec<f64>> {
    let (m, c) = (data.n_categorical(), data.n_continuous());
    let mut out = Vec::with_capacity(data.n_rows());
    let mut start = 0;
    while start < data.n_rows() {
        let end = (start + INFERENCE_CHUNK).min(data.n_rows());
        let input = crate::model::ModelInput {
            rows: end - start,
            cat: &data.cat()[start * m..end * m],
            cont: &data.cont()[start * c..end * c],
        };
        out.extend(model.predict(&input)?.into_iter().map(|p| p.to_f64()));
        start = end;
    }
    Ok(out)
}

/// Mean BCE and accuracy at threshold 0.5.
pub fn loss_and_accuracy<F: Scalar>(model: &ItctModel<F>, data: &EncodedDataset) -> Result<(f64, f64)> {
    let probs = predict_dataset(model, data)?;
    let loss = bce_loss(&probs, data.labels())?;
    let correct = probs
        .iter()
        .zip(data.labels())
        .filter(|(&p, &y)| u8::from(p >= 0.5) == y)
        .count();
    Ok((loss, correct as f64 / data.n_rows().max(1) as f64))
}

fn check_compatible<F: Scalar>(model: &ItctModel<F>, data: &EncodedDataset, which: &str) -> Result<()> {
    if data.vocab_sizes() != model.config.vocab_sizes.as_slice() || data.n_continuous() != model.n_continuous() {
        return Err(Error::Dataset(format!(
            "{which} set layout ({} categorical with vocabularies {:?}, {} continuous) does not match the model",
            data.n_categorical(),
            data.vocab_sizes(),
            data.n_continuous()
        )));
    }
    Ok(())
}

/// Trains `model` in place. Each epoch shuffles the training rows, takes one
/// AdamW step per batch and then scores the validation set. With the callback
/// enabled, training stops after `patience` epochs without improvement and
/// the best-validation parameters are restored.
pub fn train<F: Scalar>(
    model: &mut ItctModel<F>,
    train_set: &EncodedDataset,
    val_set: &EncodedDataset,
    config: &TrainConfig,
) -> Result<History> {
    config.validate()?;
    if train_set.n_rows() == 0 {
        return Err(Error::Dataset("the training set is empty".into()));
    }
    if val_set.n_rows() == 0 {
        return Err(Error::Dataset("the validation set is empty".into()));
    }
    check_compatible(model, train_set, "training")?;
    check_compatible(model, val_set, "validation")?;
    model.set_dropout(config.dropout);

    let mut optimizer = AdamW::<F>::new(config.optimizer());
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(1);
    let mut stopper = config.callback_enabled.then(|| EarlyStopping::new(config.patience));
    let mut best_model: Option<ItctModel<F>> = None;
    let mut history = History::default();
    let total = Instant::now();

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let shuffle_seed = config
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(epoch as u64);
        let mut loss_sum = 0.0;
        for batch in train_set.batches(config.batch_size, true, shuffle_seed)? {
            model.zero_grad();
            let cache = model.forward(&batch.input(), Mode::Train, &mut dropout_rng)?;
            let loss = model.backward(&cache, &batch.labels)?;
            loss_sum += loss.to_f64() * batch.len() as f64;
            optimizer.step(model.params_mut())?;
        }
        let train_loss = loss_sum / train_set.n_rows() as f64;
        let (val_loss, val_accuracy) = loss_and_accuracy(model, val_set)?;
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
            seconds: start.elapsed().as_secs_f64(),
        });
        log::info!("epoch {epoch}: train loss {train_loss:.4}, val loss {val_loss:.4}, val acc {val_accuracy:.4}");

        if let Some(stopper) = &mut stopper {
            match stopper.update(epoch, val_loss) {
                Patience::Improved => best_model = Some(model.clone()),
                Patience::Waiting => {}
                Patience::Stop => {
                    history.stop_reason = StopReason::EarlyStopped;
                    break;
                }
            }
        }
    }
    if let (Some(stopper), Some(best)) = (&stopper, best_model) {
        *model = best;
        history.best_epoch = stopper.best().map(|(e, _)| e);
        history.restored_best = true;
    }
    model.zero_grad();
    history.total_seconds = total.elapsed().as_secs_f64();
    Ok(history)
}

/// Encodes imputed rows with a saved model's vocabulary and statistics.
/// Tokens the model never saw map to UNK.
pub fn encode_with_bundle(bundle: &ModelBundle, table: &DatasetTable) -> Result<EncodedDataset> {
    let schema = table.schema();
    let mut missing = Vec::new();
    for name in &bundle.features.categorical {
        if schema.kind_of(name) != Some(ColumnKind::Categorical) {
            missing.push(name.clone());
        }
    }
    for name in &bundle.features.continuous {
        if schema.kind_of(name) != Some(ColumnKind::Continuous) {
            missing.push(name.clone());
        }
    }
    if !missing.is_empty() {
        return Err(Error::FeatureMismatch(missing));
    }
    encode(
        table,
        &bundle.vocabulary,
        &bundle.normalization,
        &bundle.features.names(),
    )
}

/// Loads a saved model and continues supervised training on a small labelled
/// set. `config.epochs == 0` returns the model unchanged.
pub fn fine_tune(
    model_path: impl AsRef<Path>,
    train_table: &DatasetTable,
    val_table: &DatasetTable,
    config: &TrainConfig,
) -> Result<(ModelBundle, History)> {
    let mut bundle = ModelBundle::load(model_path)?;
    let train_set = encode_with_bundle(&bundle, train_table)?;
    let val_set = encode_with_bundle(&bundle, val_table)?;
    if config.epochs == 0 {
        return Ok((bundle, History::default()));
    }
    let history = train(&mut bundle.model, &train_set, &val_set, config)?;
    Ok((bundle, history))
}
