//! The ITCT network: column embeddings → transformer blocks → fusion with
//! normalised continuous features → MLP head with a single sigmoid output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::ops::{self, LayerNormCache};
use crate::nn::{AttentionCache, LayerNorm, Linear, MultiHeadAttention, ParamTensor, Scalar, Tensor};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-7;

/// Row-major categorical token ids (`rows × m`) and continuous values (`rows × c`).
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub rows: usize,
    pub cat: &'a [u32],
    pub cont: &'a [f32],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-column lookup tables. The embedding of token `j` in column `i` is
/// `[column_ids[i], tables[i][j]]`, so every table is `vocab_i × (d - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnEmbeddings<F> {
    pub column_ids: ParamTensor<F>,
    pub tables: Vec<ParamTensor<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock<F> {
    pub attention: MultiHeadAttention<F>,
    pub norm1: LayerNorm<F>,
    pub feed_forward: Linear<F>,
    pub norm2: LayerNorm<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItctModel<F> {
    pub config: ModelConfig,
    pub embeddings: ColumnEmbeddings<F>,
    pub blocks: Vec<TransformerBlock<F>>,
    pub continuous_norm: Option<LayerNorm<F>>,
    pub head: Vec<Linear<F>>,
}

#[derive(Debug, Clone)]
struct BlockCache<F> {
    attention: AttentionCache<F>,
    norm1: LayerNormCache<F>,
    ff_input: Tensor<F>,
    ff_pre: Tensor<F>,
    ff_mask: Option<Tensor<F>>,
    norm2: LayerNormCache<F>,
}

#[derive(Debug, Clone)]
struct HeadCache<F> {
    input: Tensor<F>,
    pre: Tensor<F>,
    mask: Option<Tensor<F>>,
}

/// Intermediates kept by [`ItctModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    rows: usize,
    tokens: Vec<u32>,
    blocks: Vec<BlockCache<F>>,
    continuous_norm: Option<LayerNormCache<F>>,
    head: Vec<HeadCache<F>>,
    output_input: Tensor<F>,
    logits: Vec<F>,
    probs: Vec<F>,
}

impl<F: Scalar> ForwardCache<F> {
    pub fn probs(&self) -> &[F] {
        &self.probs
    }

    pub fn logits(&self) -> &[F] {
        &self.logits
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageSummary {
    pub stage: String,
    pub rows: usize,
    pub cols: usize,
    pub l2_norm: f64,
}

/// Eval-mode intermediates of the three-stage composition.
#[derive(Debug, Clone)]
pub struct Introspection<F> {
    pub embeddings: Tensor<F>,
    /// Contextual embeddings `h_1..h_m`, one row per (sample, column).
    pub contextual: Tensor<F>,
    pub fused: Tensor<F>,
    pub probs: Vec<F>,
}

impl<F: Scalar> Introspection<F> {
    pub fn summaries(&self) -> Vec<StageSummary> {
        let s = |name: &str, t: &Tensor<F>| StageSummary {
            stage: name.to_string(),
            rows: t.rows(),
            cols: t.cols(),
            l2_norm: t.l2_norm().to_f64(),
        };
        let probs = Tensor::from_vec(self.probs.len(), 1, self.probs.clone()).expect("column");
        vec![
            s("column_embeddings", &self.embeddings),
            s("contextual_embeddings", &self.contextual),
            s("fused", &self.fused),
            s("probabilities", &probs),
        ]
    }
}

impl<F: Scalar> ItctModel<F> {
    /// Seeded initialisation: Glorot-uniform weights, zero biases and norm
    /// shifts, unit norm scales, column identifiers uniform in `[-1, 1]`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.embedding_dim;
        let m = config.n_categorical();
        let eps = config.layer_norm_eps;

        let column_ids = ParamTensor::uniform(1, m, 1.0, &mut rng);
        let tables = config
            .vocab_sizes
            .iter()
            .map(|&v| ParamTensor::glorot(v, d - 1, &mut rng))
            .collect();

        let mut blocks = Vec::with_capacity(config.n_blocks);
        for _ in 0..config.n_blocks {
            blocks.push(TransformerBlock {
                attention: MultiHeadAttention::new(d, config.n_heads, config.dropout, &mut rng)?,
                norm1: LayerNorm::new(d, eps),
                feed_forward: Linear::new(d, d, true, &mut rng),
                norm2: LayerNorm::new(d, eps),
            });
        }

        let continuous_norm = (config.n_continuous > 0).then(|| LayerNorm::new(config.n_continuous, eps));

        let mut head = Vec::new();
        let mut width = config.fusion_width();
        for h in config.hidden_widths() {
            head.push(Linear::new(width, h, true, &mut rng));
            width = h;
        }
        head.push(Linear::new(width, 1, true, &mut rng));

        Ok(Self {
            config,
            embeddings: ColumnEmbeddings { column_ids, tables },
            blocks,
            continuous_norm,
            head,
        })
    }

    pub fn n_categorical(&self) -> usize {
        self.config.n_categorical()
    }

    pub fn n_continuous(&self) -> usize {
        self.config.n_continuous
    }

    /// Parameters in a fixed order with stable dotted names.
    pub fn params(&self) -> Vec<(String, &ParamTensor<F>)> {
        let mut out = vec![("embeddings.column_ids".to_string(), &self.embeddings.column_ids)];
        for (i, t) in self.embeddings.tables.iter().enumerate() {
            out.push((format!("embeddings.table.{i}"), t));
        }
        for (b, block) in self.blocks.iter().enumerate() {
            for (n, p) in block.attention.params() {
                out.push((format!("blocks.{b}.attention.{n}"), p));
            }
            for (n, p) in block.norm1.params() {
                out.push((format!("blocks.{b}.norm1.{n}"), p));
            }
            for (n, p) in block.feed_forward.params() {
                out.push((format!("blocks.{b}.feed_forward.{n}"), p));
            }
            for (n, p) in block.norm2.params() {
                out.push((format!("blocks.{b}.norm2.{n}"), p));
            }
        }
        if let Some(norm) = &self.continuous_norm {
            for (n, p) in norm.params() {
                out.push((format!("continuous_norm.{n}"), p));
            }
        }
        for (l, layer) in self.head.iter().enumerate() {
            for (n, p) in layer.params() {
                out.push((format!("head.{l}.{n}"), p));
            }
        }
        out
    }

    /// Mutable counterpart of [`params`](Self::params), same order.
    pub fn params_mut(&mut self) -> Vec<(String, &mut ParamTensor<F>)> {
        let mut out = vec![("embeddings.column_ids".to_string(), &mut self.embeddings.column_ids)];
        for (i, t) in self.embeddings.tables.iter_mut().enumerate() {
            out.push((format!("embeddings.table.{i}"), t));
        }
        for (b, block) in self.blocks.iter_mut().enumerate() {
            for (n, p) in block.attention.params_mut() {
                out.push((format!("blocks.{b}.attention.{n}"), p));
            }
            for (n, p) in block.norm1.params_mut() {
                out.push((format!("blocks.{b}.norm1.{n}"), p));
            }
            for (n, p) in block.feed_forward.params_mut() {
                out.push((format!("blocks.{b}.feed_forward.{n}"), p));
            }
            for (n, p) in block.norm2.params_mut() {
                out.push((format!("blocks.{b}.norm2.{n}"), p));
            }
        }
        if let Some(norm) = &mut self.continuous_norm {
            for (n, p) in norm.params_mut() {
                out.push((format!("continuous_norm.{n}"), p));
            }
        }
        for (l, layer) in self.head.iter_mut().enumerate() {
            for (n, p) in layer.params_mut() {
                out.push((format!("head.{l}.{n}"), p));
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Learnable scalar count per tensor.
    pub fn param_breakdown(&self) -> Vec<(String, usize)> {
        self.params().into_iter().map(|(n, p)| (n, p.len())).collect()
    }

    pub fn count_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    /// Converts every parameter to another precision.
    pub fn cast<G: Scalar>(&self) -> ItctModel<G> {
        let lin = |l: &Linear<F>| Linear {
            weight: l.weight.cast(),
            bias: l.bias.as_ref().map(ParamTensor::cast),
        };
        let norm = |n: &LayerNorm<F>| LayerNorm {
            gamma: n.gamma.cast(),
            beta: n.beta.cast(),
            eps: n.eps,
        };
        ItctModel {
            config: self.config.clone(),
            embeddings: ColumnEmbeddings {
                column_ids: self.embeddings.column_ids.cast(),
                tables: self.embeddings.tables.iter().map(ParamTensor::cast).collect(),
            },
            blocks: self
                .blocks
                .iter()
                .map(|b| TransformerBlock {
                    attention: MultiHeadAttention {
                        w_q: b.attention.w_q.cast(),
                        w_k: b.attention.w_k.cast(),
                        w_v: b.attention.w_v.cast(),
                        w_o: b.attention.w_o.cast(),
                        n_heads: b.attention.n_heads,
                        dropout: b.attention.dropout,
                    },
                    norm1: norm(&b.norm1),
                    feed_forward: lin(&b.feed_forward),
                    norm2: norm(&b.norm2),
                })
                .collect(),
            continuous_norm: self.continuous_norm.as_ref().map(norm),
            head: self.head.iter().map(lin).collect(),
        }
    }

    /// Sets the dropout rate used by attention, feed-forward and head layers.
    pub fn set_dropout(&mut self, rate: f64) {
        self.config.dropout = rate;
        for b in &mut self.blocks {
            b.attention.dropout = rate;
        }
    }

    fn check_input(&self, input: &ModelInput<'_>) -> Result<()> {
        let m = self.n_categorical();
        let c = self.n_continuous();
        if input.cat.len() != input.rows * m || input.cont.len() != input.rows * c {
            return Err(Error::Shape {
                op: "model input",
                left: (input.rows, m + c),
                right: (input.cat.len() / m.max(1), input.cont.len() / c.max(1)),
            });
        }
        for (k, &tok) in input.cat.iter().enumerate() {
            let col = k % m;
            if tok as usize >= self.config.vocab_sizes[col] {
                return Err(Error::Dataset(format!(
                    "token id {tok} out of range for categorical column {col} (vocabulary size {})",
                    self.config.vocab_sizes[col]
                )));
            }
        }
        Ok(())
    }

    /// Stage `E_φ`: looks up `[c_φi, w_φi[token]]` for every cell, giving a
    /// `(rows·m) × d` matrix.
    pub fn embed(&self, input: &ModelInput<'_>) -> Result<Tensor<F>> {
        self.check_input(input)?;
        let m = self.n_categorical();
        let d = self.config.embedding_dim;
        let mut x = Tensor::zeros(input.rows * m, d);
        for (k, &tok) in input.cat.iter().enumerate() {
            let col = k % m;
            let row = x.row_mut(k);
            row[0] = self.embeddings.column_ids.value.data()[col];
            row[1..].copy_from_slice(self.embeddings.tables[col].value.row(tok as usize));
        }
        Ok(x)
    }

    /// Stage `f_θ` in eval mode.
    pub fn contextualize(&self, embeddings: &Tensor<F>) -> Result<Tensor<F>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut x = embeddings.clone();
        for block in &self.blocks {
            x = block_forward(
                block,
                &x,
                self.n_categorical(),
                self.config.feed_forward_activation,
                &mut rng,
                false,
            )?
            .0;
        }
        Ok(x)
    }

    /// Flattens contextual embeddings per sample and appends the
    /// layer-normalised continuous features.
    pub fn fuse(&self, contextual: &Tensor<F>, input: &ModelInput<'_>) -> Result<Tensor<F>> {
        Ok(self.fuse_cached(contextual, input)?.0)
    }

    fn fuse_cached(
        &self,
        contextual: &Tensor<F>,
        input: &ModelInput<'_>,
    ) -> Result<(Tensor<F>, Option<LayerNormCache<F>>)> {
        let flat = contextual
            .clone()
            .reshape(input.rows, self.n_categorical() * self.config.embedding_dim)?;
        match &self.continuous_norm {
            None => Ok((flat, None)),
            Some(norm) => {
                let cont = Tensor::from_vec(
                    input.rows,
                    self.n_continuous(),
                    input.cont.iter().map(|&v| F::from_f64(v as f64)).collect(),
                )?;
                let (normed, cache) = norm.forward(&cont)?;
                Ok((ops::concat_cols(&flat, &normed)?, Some(cache)))
            }
        }
    }

    /// Stage `g_ψ` in eval mode.
    pub fn head_forward(&self, fused: &Tensor<F>) -> Result<Vec<F>> {
        let mut x = fused.clone();
        let last = self.head.len() - 1;
        for layer in &self.head[..last] {
            let pre = layer.forward(&x)?;
            x = ops::activation(&pre, self.config.head_activation);
        }
        let logits = self.head[last].forward(&x)?;
        Ok(logits.data().iter().map(|&z| clamp_prob(ops::sigmoid(z))).collect())
    }

    /// Runs the explicit three-stage composition, keeping every intermediate.
    pub fn introspect(&self, input: &ModelInput<'_>) -> Result<Introspection<F>> {
        let embeddings = self.embed(input)?;
        let contextual = self.contextualize(&embeddings)?;
        let fused = self.fuse(&contextual, input)?;
        let probs = self.head_forward(&fused)?;
        Ok(Introspection {
            embeddings,
            contextual,
            fused,
            probs,
        })
    }

    /// Full forward pass. In train mode dropout masks are drawn from `rng`.
    pub fn forward<R: Rng + ?Sized>(&self, input: &ModelInput<'_>, mode: Mode, rng: &mut R) -> Result<ForwardCache<F>> {
        let train = mode == Mode::Train;
        let m = self.n_categorical();
        let mut x = self.embed(input)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, cache) = block_forward(block, &x, m, self.config.feed_forward_activation, rng, train)?;
            blocks.push(cache);
            x = y;
        }
        let (mut h, continuous_norm) = self.fuse_cached(&x, input)?;

        let rate = self.config.dropout;
        let last = self.head.len() - 1;
        let mut head = Vec::with_capacity(last);
        for layer in &self.head[..last] {
            let pre = layer.forward(&h)?;
            let act = ops::activation(&pre, self.config.head_activation);
            let (out, mask) = ops::dropout(&act, rate, rng, train);
            head.push(HeadCache { input: h, pre, mask });
            h = out;
        }
        let logits_t = self.head[last].forward(&h)?;
        logits_t.check_finite("model logits")?;
        let logits = logits_t.into_data();
        let probs = logits.iter().map(|&z| clamp_prob(ops::sigmoid(z))).collect();
        Ok(ForwardCache {
            rows: input.rows,
            tokens: input.cat.to_vec(),
            blocks,
            continuous_norm,
            head,
            output_input: h,
            logits,
            probs,
        })
    }

    /// Eval-mode probabilities.
    pub fn predict(&self, input: &ModelInput<'_>) -> Result<Vec<F>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(input, Mode::Eval, &mut rng)?.probs)
    }

    /// Accumulates gradients of the mean binary cross-entropy into every
    /// parameter's `grad`. Returns the loss.
    pub fn backward(&mut self, cache: &ForwardCache<F>, labels: &[u8]) -> Result<F> {
        if labels.len() != cache.rows {
            return Err(Error::Shape {
                op: "backward labels",
                left: (cache.rows, 1),
                right: (labels.len(), 1),
            });
        }
        let n = F::from_usize(cache.rows.max(1));
        let dlogits: Vec<F> = cache
            .logits
            .iter()
            .zip(labels)
            .map(|(&z, &y)| (ops::sigmoid(z) - F::from_f64(y as f64)) / n)
            .collect();
        self.backward_logits(cache, &dlogits)?;
        bce_loss(&cache.probs, labels)
    }

    /// Backpropagates an arbitrary upstream gradient on the logits.
    pub fn backward_logits(&mut self, cache: &ForwardCache<F>, dlogits: &[F]) -> Result<()> {
        let act = self.config.head_activation;
        let ff_act = self.config.feed_forward_activation;
        let m = self.n_categorical();
        let d = self.config.embedding_dim;

        let dz = Tensor::from_vec(cache.rows, 1, dlogits.to_vec())?;
        let last = self.head.len() - 1;
        let mut dh = self.head[last].backward(&cache.output_input, &dz)?;
        for (layer, hc) in self.head[..last].iter_mut().zip(&cache.head).rev() {
            let dact = ops::dropout_backward(&dh, hc.mask.as_ref());
            let dpre = ops::activation_backward(&hc.pre, &dact, act)?;
            dh = layer.backward(&hc.input, &dpre)?;
        }

        let (dflat, dcont) = ops::split_cols(&dh, m * d)?;
        if let (Some(norm), Some(nc)) = (&mut self.continuous_norm, &cache.continuous_norm) {
            norm.backward(nc, &dcont)?;
        }
        let mut dx = dflat.reshape(cache.rows * m, d)?;
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            dx = block_backward(block, bc, &dx, ff_act)?;
        }

        let ids = self.embeddings.column_ids.grad.data_mut();
        for (k, &tok) in cache.tokens.iter().enumerate() {
            let col = k % m;
            let g = dx.row(k);
            ids[col] += g[0];
            let table = &mut self.embeddings.tables[col].grad;
            for (t, &v) in table.row_mut(tok as usize).iter_mut().zip(&g[1..]) {
                *t += v;
            }
        }
        Ok(())
    }
}

fn block_forward<F: Scalar, R: Rng + ?Sized>(
    block: &TransformerBlock<F>,
    x: &Tensor<F>,
    tokens: usize,
    activation: crate::nn::Activation,
    rng: &mut R,
    train: bool,
) -> Result<(Tensor<F>, BlockCache<F>)> {
    let (attn, attention) = block.attention.forward(x, tokens, rng, train)?;
    let (h1, norm1) = block.norm1.forward(&attn.add(x)?)?;
    let ff_pre = block.feed_forward.forward(&h1)?;
    let act = ops::activation(&ff_pre, activation);
    let (ff, ff_mask) = ops::dropout(&act, block.attention.dropout, rng, train);
    let (out, norm2) = block.norm2.forward(&ff.add(&h1)?)?;
    Ok((
        out,
        BlockCache {
            attention,
            norm1,
            ff_input: h1,
            ff_pre,
            ff_mask,
            norm2,
        },
    ))
}

fn block_backward<F: Scalar>(
    block: &mut TransformerBlock<F>,
    cache: &BlockCache<F>,
    dout: &Tensor<F>,
    activation: crate::nn::Activation,
) -> Result<Tensor<F>> {
    let dr2 = block.norm2.backward(&cache.norm2, dout)?;
    let dact = ops::dropout_backward(&dr2, cache.ff_mask.as_ref());
    let dpre = ops::activation_backward(&cache.ff_pre, &dact, activation)?;
    let mut dh1 = block.feed_forward.backward(&cache.ff_input, &dpre)?;
    dh1.add_assign(&dr2)?;
    let dr1 = block.norm1.backward(&cache.norm1, &dh1)?;
    let mut dx = block.attention.backward(&cache.attention, &dr1)?;
    dx.add_assign(&dr1)?;
    Ok(dx)
}

fn clamp_prob<F: Scalar>(p: F) -> F {
    let eps = F::from_f64(PROB_EPS);
    p.max(eps).min(F::one() - eps)
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss<F: Scalar>(probs: &[F], labels: &[u8]) -> Result<F> {
    if probs.len() != labels.len() {
        return Err(Error::Shape {
            op: "bce_loss",
            left: (probs.len(), 1),
            right: (labels.len(), 1),
        });
    }
    if probs.is_empty() {
        return Ok(F::zero());
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.to_f64().clamp(PROB_EPS, 1.0 - PROB_EPS);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(F::from_f64(total / probs.len() as f64))
}
