use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with decoupled weight decay over a fixed group of parameters.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    params: Vec<ParamId>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore, params: Vec<ParamId>, config: AdamWConfig) -> Self {
        let zeros = |id: &ParamId| {
            let [r, c] = store.value(*id).shape();
            Tensor::zeros(r, c)
        };
        AdamW {
            config,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
            params,
            step: 0,
        }
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter of the group and clears their
    /// gradients. Fails before touching anything if a gradient is missing.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some(&id) = self.params.iter().find(|&&id| store.grad(id).is_none()) {
            return Err(Error::MissingGrad(store.name(id).to_string()));
        }
        self.step += 1;
        let AdamWConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (k, &id) in self.params.iter().enumerate() {
            let param = store.param_mut(id);
            let grad = param.grad.take().expect("checked above");
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            for (((w, g), m), v) in param
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *w -= lr * weight_decay * *w;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
