use crate::error::{Error, Result};
use crate::nn::{ParamTensor, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWParams {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// AdamW with decoupled weight decay applied to every parameter:
/// `θ ← θ − lr·(m̂/(√v̂ + eps) + wd·θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<F> {
    pub params: AdamWParams,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    t: u64,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(params: AdamWParams) -> Self {
        Self {
            params,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update. A non-finite gradient aborts the step before any
    /// parameter or moment changes and names the offending tensor.
    pub fn step(&mut self, tensors: Vec<(String, &mut ParamTensor<F>)>) -> Result<()> {
        if let Some((name, _)) = tensors.iter().find(|(_, p)| !p.grad.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        if self.m.is_empty() {
            self.m = tensors
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect();
            self.v = self.m.clone();
        }
        if self.m.len() != tensors.len() {
            return Err(Error::Shape {
                op: "optimizer state",
                left: (self.m.len(), 1),
                right: (tensors.len(), 1),
            });
        }
        self.t += 1;
        let AdamWParams {
            learning_rate,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.params;
        let t = self.t as i32;
        let c1 = F::from_f64(1.0 - beta1.powi(t));
        let c2 = F::from_f64(1.0 - beta2.powi(t));
        let (lr, wd, eps) = (F::from_f64(learning_rate), F::from_f64(weight_decay), F::from_f64(eps));
        let (b1, b2) = (F::from_f64(beta1), F::from_f64(beta2));
        let (ob1, ob2) = (F::one() - b1, F::one() - b2);

        for ((_, p), (m, v)) in tensors.into_iter().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let grad = p.grad.data();
            let theta = p.value.data_mut();
            for (((th, &g), mi), vi) in theta.iter_mut().zip(grad).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = b1 * *mi + ob1 * g;
                *vi = b2 * *vi + ob2 * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *th -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *th);
            }
        }
        Ok(())
    }
}
