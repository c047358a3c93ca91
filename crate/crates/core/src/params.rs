//! Named parameter collections and their binding onto a graph.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Index;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::{Gradients, Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Buffers (e.g. running statistics) are stored and checkpointed but never
    /// receive gradients or optimizer updates.
    pub trainable: bool,
}

/// Ordered, named parameters of one network.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    fn push(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> ParamId {
        debug_assert!(self.find(name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.push(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.push(name, value, false)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    /// Add every entry to `g` as a leaf. Trainable entries require gradients
    /// only when `requires_grad` is set; buffers are always constants.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| g.leaf(e.value.clone(), requires_grad && e.trainable))
            .collect();
        Bound { vars }
    }

    /// Gradients aligned with the entries; zeros where none reached.
    pub fn collect_grads(&self, bound: &Bound, grads: &mut Gradients<T>) -> Vec<Tensor<T>> {
        self.entries
            .iter()
            .zip(&bound.vars)
            .map(|(e, &v)| grads.take(v).unwrap_or_else(|| Tensor::zeros(e.value.shape())))
            .collect()
    }

    /// Order-sensitive FNV-1a digest of every value, used to assert that a
    /// training step left a network untouched.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for e in &self.entries {
            for v in e.value.data() {
                for b in v.as_f64().to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Same names and shapes, converted element type.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    trainable: e.trainable,
                })
                .collect(),
        }
    }

    /// Overwrite values from `(name, tensor)` pairs. Every entry must be
    /// present with a matching shape and no unknown names are allowed.
    pub fn load_named(&mut self, records: Vec<(String, Tensor<T>)>) -> Result<()> {
        if records.len() != self.entries.len() {
            return Err(Error::Config(alloc::format!(
                "checkpoint holds {} tensors, model expects {}",
                records.len(),
                self.entries.len()
            )));
        }
        for (name, value) in records {
            let id = self
                .find(&name)
                .ok_or_else(|| Error::Config(alloc::format!("unknown parameter {name}")))?;
            let slot = &mut self.entries[id.0].value;
            if slot.shape() != value.shape() {
                return Err(Error::Config(alloc::format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    value.shape(),
                    slot.shape()
                )));
            }
            *slot = value;
        }
        Ok(())
    }
}

/// Graph handles for every entry of a [`ParamStore`], indexable by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

/// `U(-bound, bound)` initialization.
pub fn uniform<T: Real>(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..=bound)))
}

pub fn normal<T: Real>(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| T::lit(dist.sample(rng)))
}
