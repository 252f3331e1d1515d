//! Named parameter storage shared by every block of the network.
//!
//! Blocks never own tensors; they hold [`ParamId`]s into a [`ModelParams`],
//! so the same architecture can be evaluated against perturbed, loaded, or
//! differently typed parameter sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Learned by gradient descent.
    Weight,
    /// Persistent state updated outside of gradient descent
    /// (batch-norm running statistics).
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

/// Ordered, uniquely named collection of parameter tensors. The order is
/// fixed by construction and is the serialization order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f32> {
    entries: Vec<Param<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn entries(&self) -> &[Param<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Param<T>] {
        &mut self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of learnable scalars (buffers excluded).
    pub fn trainable_scalars(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| p.kind == ParamKind::Weight)
            .map(|p| p.tensor.len())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    tensor: p.tensor.cast(),
                })
                .collect(),
        }
    }

    /// A gradient accumulator aligned with these parameters.
    pub fn zero_grads(&self) -> Gradients<T> {
        Gradients {
            tensors: self.entries.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect(),
        }
    }

    /// Replace every tensor, keeping names and kinds. Shapes must match.
    pub fn with_tensors(&self, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if tensors.len() != self.entries.len() {
            return Err(Error::shape(
                "ModelParams::with_tensors",
                format!("{} tensors for {} parameters", tensors.len(), self.entries.len()),
            ));
        }
        let entries = self
            .entries
            .iter()
            .zip(tensors)
            .map(|(p, t)| {
                p.tensor.expect_same_shape("ModelParams::with_tensors", &t)?;
                Ok(Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    tensor: t,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ModelParams { entries })
    }
}

/// Gradients aligned index-for-index with a [`ModelParams`]. Buffers keep
/// all-zero gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T = f32> {
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn into_tensors(self) -> Vec<Tensor<T>> {
        self.tensors
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &Tensor<T>) -> Result<()> {
        self.tensors[id.0].add_assign(grad)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b)?;
        }
        Ok(())
    }
}

/// Registers parameters in construction order and draws their initial
/// values from a seeded generator.
pub struct ParamBuilder<T> {
    entries: Vec<Param<T>>,
    rng: ChaCha8Rng,
}

impl<T: Real> ParamBuilder<T> {
    pub fn new(seed: u64) -> Self {
        ParamBuilder {
            entries: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn push(&mut self, name: String, kind: ParamKind, tensor: Tensor<T>) -> ParamId {
        assert!(
            self.entries.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(Param { name, kind, tensor });
        ParamId(self.entries.len() - 1)
    }

    /// Zero-mean normal entries with standard deviation `std`.
    pub fn normal(&mut self, name: String, shape: &[usize], std: f64) -> ParamId {
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| T::from_f64_lossy(std * rng.sample::<f64, _>(StandardNormal)));
        self.push(name, ParamKind::Weight, t)
    }

    /// He initialization: normal with variance `2 / fan_in`.
    pub fn he(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        self.normal(name, shape, (2.0 / fan_in as f64).sqrt())
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        self.push(name, ParamKind::Weight, Tensor::full(shape, T::from_f64_lossy(value)))
    }

    pub fn buffer(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        self.push(name, ParamKind::Buffer, Tensor::full(shape, T::from_f64_lossy(value)))
    }

    pub fn finish(self) -> ModelParams<T> {
        ModelParams { entries: self.entries }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_is_deterministic_and_ordered() {
        let build = || {
            let mut b = ParamBuilder::<f32>::new(11);
            b.he("a.weight".into(), &[4, 3], 3);
            b.buffer("a.mean".into(), &[4], 0.0);
            b.constant("a.gamma".into(), &[4], 1.0);
            b.finish()
        };
        let (p, q) = (build(), build());
        assert_eq!(p, q);
        let names: Vec<_> = p.entries().iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["a.weight", "a.mean", "a.gamma"]);
        assert_eq!(p.trainable_scalars(), 16);
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_panic() {
        let mut b = ParamBuilder::<f64>::new(0);
        b.constant("x".into(), &[1], 0.0);
        b.constant("x".into(), &[1], 0.0);
    }
}
