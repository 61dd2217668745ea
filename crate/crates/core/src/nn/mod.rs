//! Parameter storage, layers, optimizer and checkpoint container shared by the models.
//!
//! Everything runs in f64 on the CPU through `candle-core`'s autograd.

mod checkpoint;
mod gradcheck;
mod layers;
mod optim;

use std::collections::BTreeMap;

use candle_core::{DType, Device, Shape, Tensor, Var};

pub use checkpoint::Checkpoint;
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use layers::{
    instance_norm_2d, log_softmax, sigmoid, softplus, BiLstm, Conv1d, Embedding, LayerNorm,
    Linear, Lstm, MultiHeadAttention, VanillaRnn,
};
pub use optim::{Adam, AdamState, StepDecay};

use crate::error::{invalid, Result};
use crate::rng::SeededRng;

pub const DTYPE: DType = DType::F64;

pub fn device() -> Device {
    Device::Cpu
}

/// Named trainable tensors, kept in a stable (sorted) order.
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: String, values: Vec<f64>, shape: Shape) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(invalid!("duplicate parameter `{name}`"));
        }
        let var = Var::from_tensor(&Tensor::from_vec(values, shape, &device())?)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(t)
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(
        &mut self,
        name: impl Into<String>,
        shape: impl Into<Shape>,
        bound: f64,
        rng: &mut SeededRng,
    ) -> Result<Tensor> {
        let shape = shape.into();
        let values = (0..shape.elem_count())
            .map(|_| (2.0 * rng.uniform() - 1.0) * bound)
            .collect();
        self.insert(name.into(), values, shape)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: impl Into<Shape>, value: f64) -> Result<Tensor> {
        let shape = shape.into();
        self.insert(name.into(), vec![value; shape.elem_count()], shape)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Detached copies of all values.
    pub fn snapshot(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().detach()))
            .collect()
    }

    /// Overwrite values in place; names and shapes must match exactly.
    pub fn restore(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let t = values
                .get(name)
                .ok_or_else(|| invalid!("checkpoint is missing parameter `{name}`"))?;
            if t.dims() != var.dims() {
                return Err(invalid!(
                    "parameter `{name}` has shape {:?}, checkpoint has {:?}",
                    var.dims(),
                    t.dims()
                ));
            }
            var.set(t)?;
        }
        if let Some(extra) = values.keys().find(|k| !self.vars.contains_key(*k)) {
            return Err(invalid!("checkpoint has unknown parameter `{extra}`"));
        }
        Ok(())
    }
}

/// Row-major f64 values of a tensor.
pub fn to_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DTYPE)?.to_vec1::<f64>()?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DTYPE)?.to_scalar::<f64>()?)
}
