use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{invalid, Result};

/// Multiplicative step decay applied per epoch: `initial * factor^(epoch / every)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepDecay {
    pub initial: f64,
    pub factor: f64,
    pub every: u32,
}

impl Default for StepDecay {
    fn default() -> Self {
        Self {
            initial: 5e-4,
            factor: 0.95,
            every: 5,
        }
    }
}

impl StepDecay {
    /// Learning rate for a zero-based epoch index.
    pub fn lr(&self, epoch: u32) -> f64 {
        self.initial * self.factor.powi((epoch / self.every.max(1)) as i32)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: AdamState,
}

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub step: u64,
    pub first: BTreeMap<String, Tensor>,
    pub second: BTreeMap<String, Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: AdamState::default(),
        }
    }
}

impl Adam {
    pub fn with_state(state: AdamState) -> Self {
        Self {
            state,
            ..Self::default()
        }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, var) in params.iter() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let g = g.detach();
            let m = match self.state.first.get(name) {
                Some(m) => ((m * self.beta1)? + (&g * (1.0 - self.beta1))?)?,
                None => (&g * (1.0 - self.beta1))?,
            };
            let v = match self.state.second.get(name) {
                Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                None => (g.sqr()? * (1.0 - self.beta2))?,
            };
            let update = ((&m / c1)? / ((&v / c2)?.sqrt()? + self.eps)?)?;
            let next = (var.as_tensor().detach() - (update * lr)?)?;
            if next.flatten_all()?.to_vec1::<f64>()?.iter().any(|x| !x.is_finite()) {
                return Err(invalid!("non-finite update for parameter `{name}`"));
            }
            var.set(&next)?;
            self.state.first.insert(name.clone(), m);
            self.state.second.insert(name.clone(), v);
        }
        Ok(())
    }
}
