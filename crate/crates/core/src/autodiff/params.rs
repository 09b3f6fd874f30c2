use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named trainable tensors with their accumulated gradients.
///
/// Entries keep insertion order, which is also checkpoint order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, ParamId>,
    tensors: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor.with_grad(true));
        self.grads.push(None);
        Ok(id)
    }

    /// Glorot-uniform initialized matrix.
    pub fn insert_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let values = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        self.insert(name, Tensor::matrix(rows, cols, values)?)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Result<ParamId> {
        self.insert(name, Tensor::zeros(&[rows, cols]))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.tensors[id.0].values_mut()
    }

    /// Replaces the values of an entry, keeping its shape.
    pub fn set_values(&mut self, id: ParamId, values: &[f64]) -> Result<()> {
        let slot = self.tensors[id.0].values_mut();
        if slot.len() != values.len() {
            return dim_err(format!(
                "parameter {} holds {} values, got {}",
                self.names[id.0],
                slot.len(),
                values.len()
            ));
        }
        slot.copy_from_slice(values);
        Ok(())
    }

    /// Gradient of an entry; zeros when nothing has been accumulated.
    pub fn grad(&self, id: ParamId) -> Vec<f64> {
        self.grads[id.0]
            .clone()
            .unwrap_or_else(|| vec![0.0; self.tensors[id.0].len()])
    }

    pub(crate) fn grad_slot(&self, id: ParamId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    pub fn set_grad(&mut self, id: ParamId, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.tensors[id.0].len() {
            return dim_err(format!("gradient length {} for {}", grad.len(), self.names[id.0]));
        }
        self.grads[id.0] = Some(grad);
        Ok(())
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) -> Result<()> {
        let len = self.tensors[id.0].len();
        if g.len() != len {
            return dim_err(format!("gradient length {} for {}", g.len(), self.names[id.0]));
        }
        let slot = self.grads[id.0].get_or_insert_with(|| vec![0.0; len]);
        slot.iter_mut().zip(g).for_each(|(d, x)| *d += x);
        Ok(())
    }

    /// Clears all gradients. A cleared gradient reads as zeros but counts as
    /// unpopulated for the optimizer.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Multiplies all populated gradients by `c`.
    pub fn scale_grads(&mut self, c: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= c);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Merges another store's entries into this one.
    pub fn extend(&mut self, other: ParamStore) -> Result<()> {
        for (name, tensor) in other.names.into_iter().zip(other.tensors) {
            self.insert(name, tensor)?;
        }
        Ok(())
    }
}
