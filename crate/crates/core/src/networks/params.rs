use arst_tensor::{Graph, Scalar, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Ordered, named parameter tensors of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    entries: Vec<(String, Tensor<S>)>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
        }
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<S>) {
        self.entries.push((name.into(), tensor));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensor(&self, i: usize) -> &Tensor<S> {
        &self.entries[i].1
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<S> {
        &mut self.entries[i].1
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<S>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Record every tensor on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph<S>, trainable: bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|(_, t)| g.leaf(t.clone(), trainable))
            .collect()
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
        }
    }

    /// Replace every tensor, keeping names; shapes must match.
    pub fn replace_all(&mut self, tensors: Vec<Tensor<S>>) -> Result<()> {
        if tensors.len() != self.entries.len() {
            return Err(Error::Validation(format!(
                "{} tensors for {} parameters",
                tensors.len(),
                self.entries.len()
            )));
        }
        for ((name, slot), t) in self.entries.iter_mut().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::Validation(format!(
                    "parameter {name}: shape {:?} does not match {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(())
    }
}

/// Isotropic Gaussian tensor with mean 0.
pub fn gaussian<S: Scalar>(shape: &[usize], stddev: f64, rng: &mut impl Rng) -> Result<Tensor<S>> {
    let normal = Normal::new(0.0, stddev)
        .map_err(|e| Error::Validation(format!("bad stddev {stddev}: {e}")))?;
    Ok(Tensor::from_fn(shape, |_| {
        S::from_f64_lossy(normal.sample(rng))
    })?)
}
