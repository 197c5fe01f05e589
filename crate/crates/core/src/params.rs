use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Named learnable tensors. Models hold [`ParamId`]s into a store.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Tape handles for every parameter of a store, valid for one tape.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    /// Glorot-uniform initialised `[fan_in, fan_out]` matrix.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        self.add(name, Tensor::from_parts(vec![fan_in, fan_out], data))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().map(|p| &mut p.value)
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter on `tape`; ids for which `frozen` returns
    /// true are recorded as constants.
    pub fn bind(&self, tape: &mut Tape, frozen: impl Fn(ParamId) -> bool) -> Bound {
        let vars = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.leaf(p.value.clone(), !frozen(ParamId(i))))
            .collect();
        Bound { vars }
    }

    /// One gradient per parameter. Parameters the loss does not reach get an
    /// explicit zero gradient.
    pub fn collect_grads(&self, bound: &Bound, grads: &mut Gradients) -> Vec<Tensor> {
        self.params
            .iter()
            .zip(&bound.vars)
            .map(|(p, &v)| {
                grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
            })
            .collect()
    }

    /// Copies values from `other`, which must have the same layout.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "parameter count mismatch: {} vs {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::Contract(format!(
                    "parameter layout mismatch at {}: {:?} vs {} {:?}",
                    dst.name,
                    dst.value.shape(),
                    src.name,
                    src.value.shape()
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }
}
