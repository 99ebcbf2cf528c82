//! Adam with a step-decay learning-rate schedule.

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Learning rate multiplied by `factor` at each listed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_epochs: Vec<usize>,
    pub factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-4,
            decay_epochs: vec![100, 150],
            factor: 0.1,
        }
    }
}

impl LrSchedule {
    /// Rate for a zero-based epoch.
    pub fn lr(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.initial * self.factor.powi(decays as i32)
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    steps: i32,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    state: Vec<Option<Moments>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, state: Vec::new() }
    }

    /// One update of every parameter that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f64) -> Result<()> {
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        for (id, g) in grads {
            let entry = store.entry(*id);
            if entry.kind != ParamKind::Trainable {
                return Err(Error::Usage(format!("{} is not trainable", entry.name)));
            }
            if entry.tensor.shape() != g.shape() {
                return Err(Error::dim("adam", entry.tensor.shape(), g.shape()));
            }
            if self.state.len() <= id.index() {
                self.state.resize(id.index() + 1, None);
            }
            let st = self.state[id.index()].get_or_insert_with(|| Moments {
                m: vec![0.0; g.numel()],
                v: vec![0.0; g.numel()],
                steps: 0,
            });
            st.steps += 1;
            let c1 = 1.0 - beta1.powi(st.steps);
            let c2 = 1.0 - beta2.powi(st.steps);
            let w = store.get_mut(*id).data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * gi;
                st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = st.m[i] / c1;
                let v_hat = st.v[i] / c2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
