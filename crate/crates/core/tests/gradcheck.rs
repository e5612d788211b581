mod common;

use common::{max_relative_error, model_gradient_error, numeric_gradient, random_tensor, rng, ToyProblem};
use itct::nn::ops::{self, Activation};
use itct::nn::{Linear, MultiHeadAttention, Tensor};

const PRIMITIVE_TOLERANCE: f64 = 1e-6;
const MODEL_TOLERANCE: f64 = 1e-4;

/// `L = Σ y ⊙ w` for a fixed random weighting `w`, so `dL/dy = w`.
fn weighted_sum(y: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

fn tensor_like(t: &Tensor<f64>, data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(t.rows(), t.cols(), data.to_vec()).unwrap()
}

#[test]
fn matmul_gradients() {
    let mut r = rng(1);
    let a = random_tensor(&mut r, 3, 4);
    let b = random_tensor(&mut r, 4, 2);
    let w = random_tensor(&mut r, 3, 2);
    let (da, db) = ops::matmul_backward(&a, &b, &w).unwrap();
    let na = numeric_gradient(a.data(), |v| {
        weighted_sum(&ops::matmul(&tensor_like(&a, v), &b).unwrap(), &w)
    });
    let nb = numeric_gradient(b.data(), |v| {
        weighted_sum(&ops::matmul(&a, &tensor_like(&b, v)).unwrap(), &w)
    });
    assert!(max_relative_error(da.data(), &na) < PRIMITIVE_TOLERANCE);
    assert!(max_relative_error(db.data(), &nb) < PRIMITIVE_TOLERANCE);
}

#[test]
fn linear_gradients() {
    let mut r = rng(2);
    let mut layer = Linear::<f64>::new(3, 2, true, &mut r);
    layer.bias.as_mut().unwrap().value = random_tensor(&mut r, 1, 2);
    let x = random_tensor(&mut r, 4, 3);
    let w = random_tensor(&mut r, 4, 2);
    let dx = layer.backward(&x, &w).unwrap();
    let nx = numeric_gradient(x.data(), |v| {
        weighted_sum(&layer.forward(&tensor_like(&x, v)).unwrap(), &w)
    });
    assert!(max_relative_error(dx.data(), &nx) < PRIMITIVE_TOLERANCE);

    let bias = layer.bias.clone().unwrap();
    let nb = numeric_gradient(bias.value.data(), |v| {
        let mut probe = layer.clone();
        probe.bias.as_mut().unwrap().value = tensor_like(&bias.value, v);
        weighted_sum(&probe.forward(&x).unwrap(), &w)
    });
    assert!(max_relative_error(bias.grad.data(), &nb) < PRIMITIVE_TOLERANCE);

    let weight = layer.weight.clone();
    let nw = numeric_gradient(weight.value.data(), |v| {
        let mut probe = layer.clone();
        probe.weight.value = tensor_like(&weight.value, v);
        weighted_sum(&probe.forward(&x).unwrap(), &w)
    });
    assert!(max_relative_error(weight.grad.data(), &nw) < PRIMITIVE_TOLERANCE);
}

#[test]
fn softmax_gradients() {
    let mut r = rng(3);
    let x = random_tensor(&mut r, 3, 5);
    let w = random_tensor(&mut r, 3, 5);
    let y = ops::softmax_rows(&x);
    let dx = ops::softmax_rows_backward(&y, &w).unwrap();
    let nx = numeric_gradient(x.data(), |v| weighted_sum(&ops::softmax_rows(&tensor_like(&x, v)), &w));
    assert!(max_relative_error(dx.data(), &nx) < PRIMITIVE_TOLERANCE);
}

#[test]
fn layer_norm_gradients() {
    let mut r = rng(4);
    let x = random_tensor(&mut r, 3, 4);
    let gamma = random_tensor(&mut r, 1, 4);
    let beta = random_tensor(&mut r, 1, 4);
    let w = random_tensor(&mut r, 3, 4);
    let eps = 1e-6;
    let f =
        |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| weighted_sum(&ops::layer_norm(x, g, b, eps).unwrap().0, &w);
    let (_, cache) = ops::layer_norm(&x, &gamma, &beta, eps).unwrap();
    let (dx, dg, db) = ops::layer_norm_backward(&cache, &gamma, &w).unwrap();
    let nx = numeric_gradient(x.data(), |v| f(&tensor_like(&x, v), &gamma, &beta));
    let ng = numeric_gradient(gamma.data(), |v| f(&x, &tensor_like(&gamma, v), &beta));
    let nb = numeric_gradient(beta.data(), |v| f(&x, &gamma, &tensor_like(&beta, v)));
    assert!(max_relative_error(dx.data(), &nx) < PRIMITIVE_TOLERANCE);
    assert!(max_relative_error(dg.data(), &ng) < PRIMITIVE_TOLERANCE);
    assert!(max_relative_error(db.data(), &nb) < PRIMITIVE_TOLERANCE);
}

#[test]
fn activation_gradients() {
    let mut r = rng(5);
    // Keep inputs away from the ReLU kink at 0.
    let x = random_tensor(&mut r, 4, 4).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let w = random_tensor(&mut r, 4, 4);
    for kind in [Activation::Relu, Activation::Gelu, Activation::Sigmoid] {
        let dx = ops::activation_backward(&x, &w, kind).unwrap();
        let nx = numeric_gradient(x.data(), |v| {
            weighted_sum(&ops::activation(&tensor_like(&x, v), kind), &w)
        });
        assert!(max_relative_error(dx.data(), &nx) < PRIMITIVE_TOLERANCE, "{kind:?}");
    }
}

#[test]
fn dropout_gradient_is_the_mask() {
    let mut r = rng(6);
    let x = random_tensor(&mut r, 5, 5);
    let w = random_tensor(&mut r, 5, 5);
    let (_, mask) = ops::dropout(&x, 0.3, &mut rng(9), true);
    let dx = ops::dropout_backward(&w, mask.as_ref());
    let nx = numeric_gradient(x.data(), |v| {
        let (y, _) = ops::dropout(&tensor_like(&x, v), 0.3, &mut rng(9), true);
        weighted_sum(&y, &w)
    });
    assert!(max_relative_error(dx.data(), &nx) < PRIMITIVE_TOLERANCE);
}

#[test]
fn attention_gradients() {
    for (seed, d, heads, tokens, groups) in [(7, 4, 1, 3, 2), (8, 4, 2, 2, 3), (9, 8, 2, 4, 1)] {
        let mut r = rng(seed);
        let mut att = MultiHeadAttention::<f64>::new(d, heads, 0.0, &mut r).unwrap();
        let x = random_tensor(&mut r, tokens * groups, d);
        let w = random_tensor(&mut r, tokens * groups, d);
        let f = |a: &MultiHeadAttention<f64>, x: &Tensor<f64>| {
            weighted_sum(&a.forward(x, tokens, &mut rng(0), false).unwrap().0, &w)
        };
        let (_, cache) = att.forward(&x, tokens, &mut rng(0), false).unwrap();
        let dx = att.backward(&cache, &w).unwrap();
        let nx = numeric_gradient(x.data(), |v| f(&att, &tensor_like(&x, v)));
        assert!(
            max_relative_error(dx.data(), &nx) < PRIMITIVE_TOLERANCE,
            "dx, d={d} H={heads}"
        );

        let names: Vec<&str> = att.params().into_iter().map(|(n, _)| n).collect();
        for name in names {
            let (grad, base) = {
                let p = att.params().into_iter().find(|(n, _)| *n == name).unwrap().1;
                (p.grad.clone(), p.value.clone())
            };
            let mut probe = att.clone();
            let numeric = numeric_gradient(base.data(), |v| {
                let p = probe.params_mut().into_iter().find(|(n, _)| *n == name).unwrap().1;
                p.value = tensor_like(&base, v);
                f(&probe, &x)
            });
            assert!(
                max_relative_error(grad.data(), &numeric) < PRIMITIVE_TOLERANCE,
                "{name}, d={d} H={heads}"
            );
        }
    }
}

#[test]
fn full_model_gradient_small() {
    let problem = ToyProblem::random(11, 4, 1, 2, 2, 2, 4);
    let err = model_gradient_error(&problem, 3);
    assert!(err < MODEL_TOLERANCE, "max relative error {err}");
}

#[test]
fn full_model_gradient_without_continuous_features() {
    let problem = ToyProblem::random(12, 4, 2, 1, 3, 0, 4);
    let err = model_gradient_error(&problem, 4);
    assert!(err < MODEL_TOLERANCE, "max relative error {err}");
}
