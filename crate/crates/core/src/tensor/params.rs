use rand::Rng;

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named trainable tensors of one model, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// Weight of fan-in `fan_in` with entries uniform in `±1/√fan_in`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: impl Into<Vec<usize>>,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.add(name, Tensor::uniform(shape, bound, rng))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces every tensor by the entry of the same name in `named`.
    pub fn load_named<'a>(&mut self, mut lookup: impl FnMut(&str) -> Option<&'a Tensor<f32>>) -> Result<()> {
        for (name, slot) in self.names.iter().zip(self.tensors.iter_mut()) {
            let src = lookup(name).ok_or_else(|| Error::Input(format!("missing parameter `{name}`")))?;
            if src.shape() != slot.shape() {
                return Err(Error::Shape(format!(
                    "parameter `{name}`: stored {:?}, model expects {:?}",
                    src.shape(),
                    slot.shape()
                )));
            }
            *slot = src.cast();
        }
        Ok(())
    }

    /// Puts every parameter on `tape` as a leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, requires_grad: bool) -> BoundParams<'t, T> {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|t| tape.leaf(t.clone(), requires_grad))
                .collect(),
        }
    }
}

/// Parameters of one [`ParamSet`] as leaves on a tape.
pub struct BoundParams<'t, T> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> BoundParams<'t, T> {
    pub fn get(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    /// Gradients in parameter order; `None` for parameters the loss does not reach.
    pub fn grads(&self, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.vars.iter().map(|&v| grads.take(v)).collect()
    }
}
