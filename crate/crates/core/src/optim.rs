//! Bias-corrected Adam.

use tanger_autograd::{Element, Tensor};

use crate::error::{Result, TangerError};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F: Element> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub step: u64,
}

impl<F: Element> OptimizerState<F> {
    pub fn new(params: &ModelParams<F>) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![F::zero(); t.numel()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One update of every parameter, in layout order. Gradients must be finite.
pub fn adam_step<F: Element>(
    params: &mut ModelParams<F>,
    grads: &[Tensor<F>],
    state: &mut OptimizerState<F>,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.tensors().len() {
        return Err(TangerError::Validation(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.tensors().len()
        )));
    }
    let step = state.step + 1;
    for (name, g) in params.names().iter().zip(grads) {
        if let Some(bad) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(TangerError::Numeric(format!(
                "gradient of {name} is non-finite at entry {bad} (step {step})"
            )));
        }
    }
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    let (b1, b2) = (F::of_f64(cfg.beta1), F::of_f64(cfg.beta2));
    let (one_b1, one_b2) = (F::of_f64(1.0 - cfg.beta1), F::of_f64(1.0 - cfg.beta2));
    let (inv_c1, inv_c2) = (F::of_f64(1.0 / c1), F::of_f64(1.0 / c2));
    let (lr, eps) = (F::of_f64(cfg.lr), F::of_f64(cfg.eps));
    for (i, t) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads[i].data();
        if grads[i].shape() != t.shape() {
            return Err(TangerError::Validation(format!(
                "gradient shape {:?} differs from parameter shape {:?}",
                grads[i].shape(),
                t.shape()
            )));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let mut data = t.to_vec();
        for j in 0..data.len() {
            m[j] = b1 * m[j] + one_b1 * g[j];
            v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
            let m_hat = m[j] * inv_c1;
            let v_hat = v[j] * inv_c2;
            data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        *t = Tensor::new(t.shape().to_vec(), data)?;
    }
    state.step = step;
    Ok(())
}
