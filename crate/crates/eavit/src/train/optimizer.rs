//! Adam with decoupled weight decay, operating on the model's canonical
//! parameter list.

use crate::error::{Error, Result};
use crate::model::EavitModel;
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First and second moment estimates plus the step counter, one moment
/// buffer per parameter tensor in model order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Element> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Element> AdamState<T> {
    pub fn new(model: &EavitModel<T>) -> Self {
        let zeros: Vec<Vec<T>> =
            model.params.iter().map(|p| vec![T::zero(); p.shape.numel()]).collect();
        AdamState { m: zeros.clone(), v: zeros, step: 0 }
    }
}

impl AdamW {
    /// One update step. `grads` must hold one gradient buffer per parameter
    /// in model order; decay is decoupled (applied to the parameter
    /// directly, never through the moments).
    pub fn step<T: Element>(
        &self,
        model: &mut EavitModel<T>,
        grads: &[Vec<T>],
        state: &mut AdamState<T>,
    ) -> Result<()> {
        if grads.len() != model.params.len() {
            return Err(Error::Numeric(format!(
                "optimizer got {} gradient buffers for {} parameters",
                grads.len(),
                model.params.len()
            )));
        }
        state.step += 1;
        let b1 = T::from_f64c(self.beta1);
        let b2 = T::from_f64c(self.beta2);
        let one = T::one();
        let lr = T::from_f64c(self.lr);
        let eps = T::from_f64c(self.eps);
        let decay = T::from_f64c(self.lr * self.weight_decay);
        let corr1 = T::from_f64c(1.0 - self.beta1.powi(state.step as i32));
        let corr2 = T::from_f64c(1.0 - self.beta2.powi(state.step as i32));

        for i in 0..grads.len() {
            if grads[i].len() != model.params[i].shape.numel() {
                return Err(Error::Numeric(format!(
                    "gradient {} has {} entries, parameter '{}' has {}",
                    i,
                    grads[i].len(),
                    model.params[i].name,
                    model.params[i].shape.numel()
                )));
            }
            let m = &mut state.m[i];
            let v = &mut state.v[i];
            let grad = &grads[i];
            let data = model.param_data_mut(i);
            for k in 0..grad.len() {
                let g = grad[k];
                m[k] = b1 * m[k] + (one - b1) * g;
                v[k] = b2 * v[k] + (one - b2) * g * g;
                let m_hat = m[k] / corr1;
                let v_hat = v[k] / corr2;
                data[k] = data[k] - lr * m_hat / (v_hat.sqrt() + eps) - decay * data[k];
            }
        }
        Ok(())
    }
}
