//! Dense primitives and their vector-Jacobian products.
//!
//! Every forward function here is a pure function of its inputs (plus an
//! explicit RNG for dropout). Backward functions take whatever the forward
//! pass produced and return gradients with respect to each input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn shape_err<T>(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<T> {
    Err(Error::Shape { op, left: a, right: b })
}

/// `C = A·B`.
pub fn matmul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if a.cols() != b.rows() {
        return shape_err("matmul", a.shape(), b.shape());
    }
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(n, m);
    let bd = b.data();
    for i in 0..n {
        let arow = a.row(i);
        let crow = out.row_mut(i);
        for (p, &av) in arow.iter().enumerate().take(k) {
            if av == F::zero() {
                continue;
            }
            let brow = &bd[p * m..(p + 1) * m];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    }
    Ok(out)
}

/// `C = A·Bᵀ`.
pub fn matmul_bt<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if a.cols() != b.cols() {
        return shape_err("matmul_bt", a.shape(), b.shape());
    }
    matmul(a, &b.transpose())
}

/// `C = Aᵀ·B`.
pub fn matmul_at<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if a.rows() != b.rows() {
        return shape_err("matmul_at", a.shape(), b.shape());
    }
    matmul(&a.transpose(), b)
}

/// Gradients of `C = A·B` given `dC`: `(dA, dB) = (dC·Bᵀ, Aᵀ·dC)`.
pub fn matmul_backward<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, dc: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
    Ok((matmul_bt(dc, b)?, matmul_at(a, dc)?))
}

/// Adds a `1 × cols` bias to every row.
pub fn add_bias<F: Scalar>(x: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
    if bias.rows() != 1 || bias.cols() != x.cols() {
        return shape_err("add_bias", x.shape(), bias.shape());
    }
    let mut out = x.clone();
    let b = bias.data();
    for r in 0..out.rows() {
        for (v, &bv) in out.row_mut(r).iter_mut().zip(b) {
            *v += bv;
        }
    }
    Ok(out)
}

/// Column-wise concatenation of two tensors with the same row count.
pub fn concat_cols<F: Scalar>(x: &Tensor<F>, y: &Tensor<F>) -> Result<Tensor<F>> {
    if x.rows() != y.rows() {
        return shape_err("concat_cols", x.shape(), y.shape());
    }
    let cols = x.cols() + y.cols();
    let mut data = Vec::with_capacity(x.rows() * cols);
    for r in 0..x.rows() {
        data.extend_from_slice(x.row(r));
        data.extend_from_slice(y.row(r));
    }
    Tensor::from_vec(x.rows(), cols, data)
}

/// Inverse of [`concat_cols`]: splits off the first `left_cols` columns.
pub fn split_cols<F: Scalar>(z: &Tensor<F>, left_cols: usize) -> Result<(Tensor<F>, Tensor<F>)> {
    if left_cols > z.cols() {
        return shape_err("split_cols", z.shape(), (z.rows(), left_cols));
    }
    let right_cols = z.cols() - left_cols;
    let mut left = Vec::with_capacity(z.rows() * left_cols);
    let mut right = Vec::with_capacity(z.rows() * right_cols);
    for r in 0..z.rows() {
        let row = z.row(r);
        left.extend_from_slice(&row[..left_cols]);
        right.extend_from_slice(&row[left_cols..]);
    }
    Ok((
        Tensor::from_vec(z.rows(), left_cols, left)?,
        Tensor::from_vec(z.rows(), right_cols, right)?,
    ))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place<F: Scalar>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Backward of [`softmax_rows`] given its output `y`.
pub fn softmax_rows_backward<F: Scalar>(y: &Tensor<F>, dy: &Tensor<F>) -> Result<Tensor<F>> {
    y.check_same("softmax_rows_backward", dy)?;
    let mut dx = Tensor::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        softmax_backward_row(y.row(r), dy.row(r), dx.row_mut(r));
    }
    Ok(dx)
}

pub(crate) fn softmax_backward_row<F: Scalar>(y: &[F], dy: &[F], dx: &mut [F]) {
    let dot: F = y.iter().zip(dy).map(|(&a, &b)| a * b).sum();
    for ((d, &yv), &g) in dx.iter_mut().zip(y).zip(dy) {
        *d = yv * (g - dot);
    }
}

/// Intermediates of a layer-norm forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache<F> {
    pub xhat: Tensor<F>,
    pub inv_std: Vec<F>,
}

/// Per-row normalisation followed by the affine map `γ·x̂ + β`.
pub fn layer_norm<F: Scalar>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    eps: F,
) -> Result<(Tensor<F>, LayerNormCache<F>)> {
    let n = x.cols();
    if gamma.shape() != (1, n) || beta.shape() != (1, n) {
        return shape_err("layer_norm", x.shape(), gamma.shape());
    }
    let mut xhat = Tensor::zeros(x.rows(), n);
    let mut y = Tensor::zeros(x.rows(), n);
    let mut inv_std = Vec::with_capacity(x.rows());
    let nf = F::from_usize(n);
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<F>() / nf;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
        let istd = F::one() / (var + eps).sqrt();
        inv_std.push(istd);
        let xh = xhat.row_mut(r);
        for (h, &v) in xh.iter_mut().zip(row) {
            *h = (v - mean) * istd;
        }
        let xh = xhat.row(r);
        for (((o, &h), &g), &b) in y.row_mut(r).iter_mut().zip(xh).zip(gamma.data()).zip(beta.data()) {
            *o = h * g + b;
        }
    }
    Ok((y, LayerNormCache { xhat, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<F: Scalar>(
    cache: &LayerNormCache<F>,
    gamma: &Tensor<F>,
    dy: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    cache.xhat.check_same("layer_norm_backward", dy)?;
    let n = dy.cols();
    let nf = F::from_usize(n);
    let mut dx = Tensor::zeros(dy.rows(), n);
    let mut dgamma = Tensor::zeros(1, n);
    let mut dbeta = Tensor::zeros(1, n);
    let mut dxhat = vec![F::zero(); n];
    for r in 0..dy.rows() {
        let g = dy.row(r);
        let xh = cache.xhat.row(r);
        for j in 0..n {
            dgamma.data_mut()[j] += g[j] * xh[j];
            dbeta.data_mut()[j] += g[j];
            dxhat[j] = g[j] * gamma.data()[j];
        }
        let mean_d = dxhat.iter().copied().sum::<F>() / nf;
        let mean_dx = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<F>() / nf;
        let istd = cache.inv_std[r];
        for ((o, &d), &h) in dx.row_mut(r).iter_mut().zip(&dxhat).zip(xh) {
            *o = istd * (d - mean_d - h * mean_dx);
        }
    }
    Ok((dx, dgamma, dbeta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
    Sigmoid,
}

impl Activation {
    pub fn apply<F: Scalar>(self, v: F) -> F {
        match self {
            Activation::Relu => v.max(F::zero()),
            Activation::Gelu => {
                let half = F::from_f64(0.5);
                half * v * (F::one() + (v * F::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
            }
            Activation::Sigmoid => sigmoid(v),
        }
    }

    /// Derivative evaluated at the pre-activation `v`.
    pub fn derivative<F: Scalar>(self, v: F) -> F {
        match self {
            Activation::Relu => {
                if v > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Gelu => {
                let half = F::from_f64(0.5);
                let cdf = half * (F::one() + (v * F::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
                let pdf = (-(v * v) * half).exp() * F::from_f64(0.398_942_280_401_432_7);
                cdf + v * pdf
            }
            Activation::Sigmoid => {
                let s = sigmoid(v);
                s * (F::one() - s)
            }
        }
    }
}

pub fn sigmoid<F: Scalar>(v: F) -> F {
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

pub fn activation<F: Scalar>(x: &Tensor<F>, kind: Activation) -> Tensor<F> {
    x.map(|v| kind.apply(v))
}

/// Backward of [`activation`]; `x` is the pre-activation input.
pub fn activation_backward<F: Scalar>(x: &Tensor<F>, dy: &Tensor<F>, kind: Activation) -> Result<Tensor<F>> {
    x.check_same("activation_backward", dy)?;
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        *d *= kind.derivative(v);
    }
    Ok(dx)
}

/// Inverted dropout. In train mode each entry is zeroed with probability
/// `rate` and survivors are scaled by `1/(1-rate)`; the returned mask holds
/// the per-entry multiplier. Eval mode (or `rate == 0`) is the identity.
pub fn dropout<F: Scalar, R: Rng + ?Sized>(
    x: &Tensor<F>,
    rate: f64,
    rng: &mut R,
    train: bool,
) -> (Tensor<F>, Option<Tensor<F>>) {
    if !train || rate <= 0.0 {
        return (x.clone(), None);
    }
    let keep = F::from_f64(1.0 / (1.0 - rate));
    let mut mask = Tensor::zeros(x.rows(), x.cols());
    for m in mask.data_mut() {
        if rng.gen::<f64>() >= rate {
            *m = keep;
        }
    }
    let mut y = x.clone();
    for (v, &m) in y.data_mut().iter_mut().zip(mask.data()) {
        *v *= m;
    }
    (y, Some(mask))
}

pub fn dropout_backward<F: Scalar>(dy: &Tensor<F>, mask: Option<&Tensor<F>>) -> Tensor<F> {
    match mask {
        None => dy.clone(),
        Some(m) => {
            let mut dx = dy.clone();
            for (v, &k) in dx.data_mut().iter_mut().zip(m.data()) {
                *v *= k;
            }
            dx
        }
    }
}
