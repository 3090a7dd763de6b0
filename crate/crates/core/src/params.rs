//! Named parameter storage shared by every block of a network.
//!
//! Values are initialized from a generator seeded by `(seed, name)`, so a
//! parameter's initial value depends only on its name and the model seed,
//! not on construction order.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Non-learned state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
    pub kind: ParamKind,
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Zero-mean normal with the given standard deviation.
    Normal(f64),
}

#[derive(Clone, Debug, Default)]
pub struct ParamSet<T: Real> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
    seed: u64,
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl<T: Real> ParamSet<T> {
    pub fn new(seed: u64) -> Self {
        Self { entries: Vec::new(), index: HashMap::new(), seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: &str, dims: &[usize], init: Init, kind: ParamKind) -> ParamId {
        let value = match init {
            Init::Zeros => Tensor::zeros(dims),
            Init::Constant(v) => Tensor::full(dims, T::from_f64(v).unwrap()),
            Init::Normal(std) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(name));
                let dist = Normal::new(0.0, std).expect("finite std");
                Tensor::from_fn(dims, |_| T::from_f64(dist.sample(&mut rng)).unwrap())
            }
        };
        self.insert(name, value, kind)
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>, kind: ParamKind) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let id = self.entries.len();
        self.index.insert(name.to_string(), id);
        self.entries.push(ParamEntry { name: name.to_string(), value, kind });
        ParamId(id)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.id(name).map(|id| self.get_mut(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Total number of learnable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), value: e.value.cast(), kind: e.kind })
                .collect(),
            index: self.index.clone(),
            seed: self.seed,
        }
    }

    /// Copies every parameter of `other` whose name and shape match.
    /// Returns the number of tensors copied.
    pub fn load_matching(&mut self, other: &ParamSet<T>) -> usize {
        let mut copied = 0;
        for e in &mut self.entries {
            if let Some(src) = other.by_name(&e.name) {
                if src.dims() == e.value.dims() {
                    e.value = src.clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    /// Replaces all values from `(name, tensor)` pairs; every name must exist
    /// with the same shape.
    pub fn load_exact(&mut self, values: Vec<(String, Tensor<T>)>) -> Result<()> {
        if values.len() != self.entries.len() {
            return Err(Error::Malformed(format!(
                "checkpoint has {} tensors, model expects {}",
                values.len(),
                self.entries.len()
            )));
        }
        for (name, t) in values {
            let id = self.id(&name).ok_or_else(|| Error::Malformed(format!("unknown parameter {name}")))?;
            if self.get(id).dims() != t.dims() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {name}: {:?} vs {:?}",
                    self.get(id).dims(),
                    t.dims()
                )));
            }
            *self.get_mut(id) = t;
        }
        Ok(())
    }
}
