//! Named parameter storage shared by every network.
//!
//! Names follow `layer.index.kind`, e.g. `conv.3.weight` or `bn.3.running_var`.

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Running statistics and other state that is saved but never differentiated.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param<T: Scalar> {
    pub tensor: Tensor<T>,
    pub kind: ParamKind,
}

#[derive(Clone, Debug, Default)]
pub struct ParamSet<T: Scalar = f32> {
    entries: IndexMap<String, Param<T>>,
}

/// Graph handles for one forward pass over a [`ParamSet`].
#[derive(Clone, Debug, Default)]
pub struct Binding {
    vars: IndexMap<String, Var>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} was not bound"))
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>, kind: ParamKind) {
        self.entries.insert(name.into(), Param { tensor, kind });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).map(|p| &p.tensor)
    }

    pub fn tensor(&self, name: &str) -> &Tensor<T> {
        self.get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name).map(|p| &mut p.tensor)
    }

    pub fn kind(&self, name: &str) -> Option<ParamKind> {
        self.entries.get(name).map(|p| p.kind)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.iter()
            .filter(|(_, p)| p.kind == ParamKind::Trainable)
            .map(|(n, p)| (n, &p.tensor))
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.trainable().map(|(_, t)| t.len()).sum()
    }

    /// Puts every parameter on the tape. Trainable ones are tracked only when
    /// `track` is set; buffers never are.
    pub fn bind(&self, g: &mut Graph<T>, track: bool) -> Binding {
        let mut vars = IndexMap::with_capacity(self.entries.len());
        for (name, p) in &self.entries {
            let v = if track && p.kind == ParamKind::Trainable {
                g.variable(p.tensor.clone())
            } else {
                g.constant(p.tensor.clone())
            };
            vars.insert(name.clone(), v);
        }
        Binding { vars }
    }

    /// Adds the tape's gradients into each bound parameter's `grad` buffer.
    pub fn accumulate(&mut self, binding: &Binding, grads: &Gradients<T>) -> Result<()> {
        for (name, v) in &binding.vars {
            if let Some(g) = grads.get(*v) {
                let p = self
                    .entries
                    .get_mut(name)
                    .ok_or_else(|| Error::contract("ParamSet::accumulate", format!("unknown {name}")))?;
                p.tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.tensor.zero_grad();
        }
    }

    /// Drops gradient buffers entirely.
    pub fn clear_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.tensor.grad = None;
        }
    }

    pub fn checksum(&self) -> u64 {
        self.entries.values().fold(0u64, |acc, p| {
            acc.rotate_left(7) ^ p.tensor.checksum()
        })
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            tensor: p.tensor.cast(),
                            kind: p.kind,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Overwrites values from `other`, requiring identical names and shapes.
    /// Every mismatch is reported, and nothing is changed unless all match.
    pub fn load_from(&mut self, other: &IndexMap<String, Tensor<T>>) -> Result<()> {
        let mut problems = Vec::new();
        for (name, p) in &self.entries {
            match other.get(name) {
                None => problems.push(format!("missing tensor {name}")),
                Some(t) if t.shape() != p.tensor.shape() => problems.push(format!(
                    "{name}: shape {:?}, expected {:?}",
                    t.shape(),
                    p.tensor.shape()
                )),
                Some(_) => {}
            }
        }
        if !problems.is_empty() {
            return Err(Error::Import(problems));
        }
        for (name, p) in &mut self.entries {
            let mut t = other[name].clone();
            t.grad = None;
            p.tensor = t;
        }
        Ok(())
    }
}

/// Fan-in scaled normal initialization: `std = gain / sqrt(fan_in)`.
pub fn normal_init<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, gain: f64) -> Tensor<f32> {
    let std = gain / (fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape.to_vec(), |_| dist.sample(rng) as f32)
}

/// Rectifier gain for a leaky slope, `sqrt(2 / (1 + slope²))`.
pub fn leaky_gain(slope: f64) -> f64 {
    (2.0 / (1.0 + slope * slope)).sqrt()
}
