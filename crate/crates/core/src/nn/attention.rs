//! Multi-head scaled dot-product self-attention.
//!
//! The input is a stack of `groups` independent token sets, each with
//! `tokens` rows of width `d`, laid out as a `(groups·tokens) × d` matrix.
//! Attention only mixes rows within a group. For head `h` the projections
//! `W_Q`, `W_K`, `W_V` are the column slices `h·d_head .. (h+1)·d_head` of
//! the stored `d × d` matrices; `W_O` maps the concatenated heads back to `d`.
//!
//! ```text
//! Q, K, V = X·W_Q, X·W_K, X·W_V
//! A_h     = softmax(Q_h·K_hᵀ / √d_head)
//! Y       = concat_h(dropout(A_h)·V_h)·W_O
//! ```

use rand::Rng;

use super::layers::ParamTensor;
use super::ops::{self, softmax_backward_row, softmax_in_place};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention<F> {
    pub w_q: ParamTensor<F>,
    pub w_k: ParamTensor<F>,
    pub w_v: ParamTensor<F>,
    pub w_o: ParamTensor<F>,
    pub n_heads: usize,
    /// Dropout applied to attention probabilities in train mode.
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    tokens: usize,
    x: Tensor<F>,
    q: Tensor<F>,
    k: Tensor<F>,
    v: Tensor<F>,
    /// Softmax outputs, `groups × heads × tokens × tokens`.
    probs: Vec<F>,
    /// Dropout multipliers with the same layout as `probs`.
    mask: Option<Vec<F>>,
    concat: Tensor<F>,
}

impl<F: Scalar> AttentionCache<F> {
    /// Attention probabilities of group `g`, head `h` (row-major `tokens × tokens`).
    pub fn probs(&self, g: usize, h: usize, n_heads: usize) -> &[F] {
        let nn = self.tokens * self.tokens;
        let off = (g * n_heads + h) * nn;
        &self.probs[off..off + nn]
    }
}

impl<F: Scalar> MultiHeadAttention<F> {
    pub fn new<R: Rng + ?Sized>(d: usize, n_heads: usize, dropout: f64, rng: &mut R) -> Result<Self> {
        check_heads(d, n_heads)?;
        Ok(Self {
            w_q: ParamTensor::glorot(d, d, rng),
            w_k: ParamTensor::glorot(d, d, rng),
            w_v: ParamTensor::glorot(d, d, rng),
            w_o: ParamTensor::glorot(d, d, rng),
            n_heads,
            dropout,
        })
    }

    /// Builds attention from explicit `d × d` weight matrices.
    pub fn from_weights(
        w_q: Tensor<F>,
        w_k: Tensor<F>,
        w_v: Tensor<F>,
        w_o: Tensor<F>,
        n_heads: usize,
        dropout: f64,
    ) -> Result<Self> {
        let d = w_q.rows();
        check_heads(d, n_heads)?;
        for w in [&w_q, &w_k, &w_v, &w_o] {
            if w.shape() != (d, d) {
                return Err(Error::Shape {
                    op: "attention weights",
                    left: (d, d),
                    right: w.shape(),
                });
            }
        }
        Ok(Self {
            w_q: ParamTensor::new(w_q),
            w_k: ParamTensor::new(w_k),
            w_v: ParamTensor::new(w_v),
            w_o: ParamTensor::new(w_o),
            n_heads,
            dropout,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_q.value.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.n_heads
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Tensor<F>,
        tokens: usize,
        rng: &mut R,
        train: bool,
    ) -> Result<(Tensor<F>, AttentionCache<F>)> {
        let d = self.dim();
        if x.cols() != d || tokens == 0 || !x.rows().is_multiple_of(tokens) {
            return Err(Error::Shape {
                op: "multi_head_attention",
                left: x.shape(),
                right: (tokens, d),
            });
        }
        let groups = x.rows() / tokens;
        let heads = self.n_heads;
        let dh = self.head_dim();
        let scale = F::one() / F::from_usize(dh).sqrt();

        let q = ops::matmul(x, &self.w_q.value)?;
        let k = ops::matmul(x, &self.w_k.value)?;
        let v = ops::matmul(x, &self.w_v.value)?;

        let nn = tokens * tokens;
        let mut probs = vec![F::zero(); groups * heads * nn];
        let use_dropout = train && self.dropout > 0.0;
        let mut mask = use_dropout.then(|| vec![F::zero(); probs.len()]);
        let keep = F::from_f64(1.0 / (1.0 - self.dropout));
        let mut concat = Tensor::zeros(x.rows(), d);

        for g in 0..groups {
            let base = g * tokens;
            for h in 0..heads {
                let c0 = h * dh;
                let off = (g * heads + h) * nn;
                let a = &mut probs[off..off + nn];
                for i in 0..tokens {
                    let qi = &q.row(base + i)[c0..c0 + dh];
                    for j in 0..tokens {
                        let kj = &k.row(base + j)[c0..c0 + dh];
                        a[i * tokens + j] = dot(qi, kj) * scale;
                    }
                    softmax_in_place(&mut a[i * tokens..(i + 1) * tokens]);
                }
                if let Some(mask) = &mut mask {
                    for m in &mut mask[off..off + nn] {
                        if rng.gen::<f64>() >= self.dropout {
                            *m = keep;
                        }
                    }
                }
                for i in 0..tokens {
                    let out = &mut concat.row_mut(base + i)[c0..c0 + dh];
                    for j in 0..tokens {
                        let mut w = a[i * tokens + j];
                        if let Some(mask) = &mask {
                            w *= mask[off + i * tokens + j];
                        }
                        if w == F::zero() {
                            continue;
                        }
                        let vj = &v.row(base + j)[c0..c0 + dh];
                        for (o, &vv) in out.iter_mut().zip(vj) {
                            *o += w * vv;
                        }
                    }
                }
            }
        }

        let y = ops::matmul(&concat, &self.w_o.value)?;
        Ok((
            y,
            AttentionCache {
                tokens,
                x: x.clone(),
                q,
                k,
                v,
                probs,
                mask,
                concat,
            },
        ))
    }

    /// Accumulates weight gradients and returns `dx`.
    pub fn backward(&mut self, cache: &AttentionCache<F>, dy: &Tensor<F>) -> Result<Tensor<F>> {
        let d = self.dim();
        let heads = self.n_heads;
        let dh = self.head_dim();
        let tokens = cache.tokens;
        let groups = cache.x.rows() / tokens;
        let scale = F::one() / F::from_usize(dh).sqrt();
        let nn = tokens * tokens;

        let (dconcat, dwo) = ops::matmul_backward(&cache.concat, &self.w_o.value, dy)?;
        self.w_o.grad.add_assign(&dwo)?;

        let rows = cache.x.rows();
        let mut dq = Tensor::zeros(rows, d);
        let mut dk = Tensor::zeros(rows, d);
        let mut dv = Tensor::zeros(rows, d);
        let mut dprobs = vec![F::zero(); nn];
        let mut dscores = vec![F::zero(); nn];

        for g in 0..groups {
            let base = g * tokens;
            for h in 0..heads {
                let c0 = h * dh;
                let off = (g * heads + h) * nn;
                let a = &cache.probs[off..off + nn];
                let mask = cache.mask.as_ref().map(|m| &m[off..off + nn]);
                for i in 0..tokens {
                    let dout = &dconcat.row(base + i)[c0..c0 + dh];
                    for j in 0..tokens {
                        let vj = &cache.v.row(base + j)[c0..c0 + dh];
                        let m = mask.map_or(F::one(), |m| m[i * tokens + j]);
                        dprobs[i * tokens + j] = dot(dout, vj) * m;
                        let w = a[i * tokens + j] * m;
                        if w != F::zero() {
                            let dvj = &mut dv.row_mut(base + j)[c0..c0 + dh];
                            for (o, &g) in dvj.iter_mut().zip(dout) {
                                *o += w * g;
                            }
                        }
                    }
                    let r = i * tokens..(i + 1) * tokens;
                    softmax_backward_row(&a[r.clone()], &dprobs[r.clone()], &mut dscores[r]);
                }
                for i in 0..tokens {
                    for j in 0..tokens {
                        let s = dscores[i * tokens + j] * scale;
                        if s == F::zero() {
                            continue;
                        }
                        for c in c0..c0 + dh {
                            let qi = cache.q.get(base + i, c);
                            let kj = cache.k.get(base + j, c);
                            dq.data_mut()[(base + i) * d + c] += s * kj;
                            dk.data_mut()[(base + j) * d + c] += s * qi;
                        }
                    }
                }
            }
        }

        let (mut dx, dwq) = ops::matmul_backward(&cache.x, &self.w_q.value, &dq)?;
        self.w_q.grad.add_assign(&dwq)?;
        let (dxk, dwk) = ops::matmul_backward(&cache.x, &self.w_k.value, &dk)?;
        self.w_k.grad.add_assign(&dwk)?;
        let (dxv, dwv) = ops::matmul_backward(&cache.x, &self.w_v.value, &dv)?;
        self.w_v.grad.add_assign(&dwv)?;
        dx.add_assign(&dxk)?;
        dx.add_assign(&dxv)?;
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut ParamTensor<F>)> {
        vec![
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_v", &mut self.w_v),
            ("w_o", &mut self.w_o),
        ]
    }

    pub fn params(&self) -> Vec<(&'static str, &ParamTensor<F>)> {
        vec![
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
        ]
    }
}

fn check_heads(d: usize, n_heads: usize) -> Result<()> {
    if n_heads == 0 || !d.is_multiple_of(n_heads) {
        return Err(Error::Config(format!(
            "embedding dimension {d} is not divisible by {n_heads} heads"
        )));
    }
    Ok(())
}

#[inline]
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn rejects_indivisible_heads() {
        assert!(MultiHeadAttention::<f64>::new(6, 4, 0.0, &mut rng()).is_err());
    }

    #[test]
    fn single_token_attends_to_itself() {
        let attn = MultiHeadAttention::<f64>::new(4, 2, 0.0, &mut rng()).unwrap();
        let x = Tensor::from_rows(&[vec![0.5, -1.0, 2.0, 0.1]]);
        let (y, cache) = attn.forward(&x, 1, &mut rng(), false).unwrap();
        assert_eq!(cache.probs(0, 0, 2), &[1.0]);
        let v = ops::matmul(&x, &attn.w_v.value).unwrap();
        let expected = ops::matmul(&v, &attn.w_o.value).unwrap();
        for (a, b) in y.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_weights_two_tokens() {
        let i2 = Tensor::<f64>::identity(2);
        let attn = MultiHeadAttention::from_weights(i2.clone(), i2.clone(), i2.clone(), i2, 1, 0.0).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]);
        let (y, _) = attn.forward(&x, 2, &mut rng(), false).unwrap();
        // scores = X·Xᵀ/√2 = [[1/√2, 0], [0, 4/√2]]
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let row = |a: f64, b: f64| {
            let (ea, eb) = (a.exp(), b.exp());
            (ea / (ea + eb), eb / (ea + eb))
        };
        let (a00, a01) = row(s, 0.0);
        let (a10, a11) = row(0.0, 4.0 * s);
        let expected = [a00 * 1.0, a01 * 2.0, a10 * 1.0, a11 * 2.0];
        for (got, want) in y.data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn permutation_equivariant() {
        let attn = MultiHeadAttention::<f64>::new(4, 2, 0.0, &mut rng()).unwrap();
        let x = Tensor::from_rows(&[
            vec![0.1, 0.2, 0.3, 0.4],
            vec![-1.0, 0.5, 0.0, 2.0],
            vec![0.7, -0.3, 1.1, -0.2],
        ]);
        let perm = [2usize, 0, 1];
        let xp = Tensor::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>());
        let (y, _) = attn.forward(&x, 3, &mut rng(), false).unwrap();
        let (yp, _) = attn.forward(&xp, 3, &mut rng(), false).unwrap();
        for (pi, &src) in perm.iter().enumerate() {
            for c in 0..4 {
                assert!((yp.get(pi, c) - y.get(src, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn groups_do_not_interact() {
        let attn = MultiHeadAttention::<f64>::new(4, 1, 0.0, &mut rng()).unwrap();
        let a = Tensor::from_rows(&[vec![0.1, 0.2, 0.3, 0.4], vec![1.0, 0.0, -1.0, 0.5]]);
        let b = Tensor::from_rows(&[vec![3.0, 1.0, 0.0, 0.0], vec![0.0, -2.0, 1.0, 1.0]]);
        let both = ops::concat_cols(&a.transpose(), &b.transpose()).unwrap().transpose();
        let (y_both, _) = attn.forward(&both, 2, &mut rng(), false).unwrap();
        let (y_a, _) = attn.forward(&a, 2, &mut rng(), false).unwrap();
        assert_eq!(&y_both.data()[..8], y_a.data());
    }
}
