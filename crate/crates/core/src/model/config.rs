use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Activation;

/// Architecture hyperparameters plus the input layout the network is built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub mlp_hidden_factors: Vec<f64>,
    pub dropout: f64,
    /// One entry per categorical column, UNK included.
    pub vocab_sizes: Vec<usize>,
    pub n_continuous: usize,
    pub layer_norm_eps: f64,
    pub feed_forward_activation: Activation,
    pub head_activation: Activation,
}

impl ModelConfig {
    /// Defaults: d = 16, 4 blocks, 4 heads, factors [2, 1], dropout 0.2.
    pub fn new(vocab_sizes: Vec<usize>, n_continuous: usize) -> Self {
        Self {
            embedding_dim: 16,
            n_blocks: 4,
            n_heads: 4,
            mlp_hidden_factors: vec![2.0, 1.0],
            dropout: 0.2,
            vocab_sizes,
            n_continuous,
            layer_norm_eps: 1e-6,
            feed_forward_activation: Activation::Gelu,
            head_activation: Activation::Gelu,
        }
    }

    pub fn n_categorical(&self) -> usize {
        self.vocab_sizes.len()
    }

    /// Width of the MLP input: `d·m + c`.
    pub fn fusion_width(&self) -> usize {
        self.embedding_dim * self.n_categorical() + self.n_continuous
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        let f = self.fusion_width() as f64;
        self.mlp_hidden_factors
            .iter()
            .map(|factor| (factor * f).floor() as usize)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.embedding_dim;
        if d < 2 {
            return Err(Error::Config(format!(
                "embedding dimension must be at least 2, got {d}"
            )));
        }
        if self.n_heads == 0 || !d.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "embedding dimension {d} is not divisible by {} heads",
                self.n_heads
            )));
        }
        if self.vocab_sizes.is_empty() {
            return Err(Error::Config(
                "the transformer needs at least one categorical column".into(),
            ));
        }
        if let Some(i) = self.vocab_sizes.iter().position(|&v| v == 0) {
            return Err(Error::Config(format!("vocabulary of categorical column {i} is empty")));
        }
        if self.mlp_hidden_factors.is_empty() {
            return Err(Error::Config("mlp_hidden_units_factors must not be empty".into()));
        }
        if self.mlp_hidden_factors.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::Config("mlp_hidden_units_factors must be positive".into()));
        }
        if self.hidden_widths().contains(&0) {
            return Err(Error::Config("an MLP hidden layer would have zero units".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Closed-form number of learnable scalars for this configuration.
    pub fn expected_param_count(&self) -> usize {
        let d = self.embedding_dim;
        let m = self.n_categorical();
        let c = self.n_continuous;
        let embeddings: usize = self.vocab_sizes.iter().map(|v| v * (d - 1)).sum::<usize>() + m;
        // 4 attention projections, feed-forward weight + bias, two norms.
        let block = 4 * d * d + (d * d + d) + 4 * d;
        let cont_norm = if c > 0 { 2 * c } else { 0 };
        let mut head = 0;
        let mut width = self.fusion_width();
        for h in self.hidden_widths() {
            head += width * h + h;
            width = h;
        }
        head += width + 1;
        embeddings + self.n_blocks * block + cont_norm + head
    }
}
