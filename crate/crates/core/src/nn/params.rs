use rand::Rng;
use sha2::{Digest, Sha256};

use crate::tensor::Real;

/// Location of one named tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub len: usize,
}

impl Slot {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub slot: Slot,
}

/// All trainable values of a network in one flat buffer, addressed by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry>,
    data: Vec<T>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<T>) -> Slot {
        let len = shape.iter().product();
        assert_eq!(values.len(), len, "parameter values do not match shape");
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        let slot = Slot {
            offset: self.data.len(),
            len,
        };
        self.data.extend(values);
        self.entries.push(ParamEntry {
            name,
            shape: shape.to_vec(),
            slot,
        });
        slot
    }

    /// Uniform in `[-b, b]` with `b = sqrt(6 / fan_in)`, i.e. He-scaled variance.
    pub fn add_fan_in(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Slot {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        let values = (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
        self.add(name, shape, values)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Slot {
        let n = shape.iter().product();
        self.add(name, shape, vec![T::zero(); n])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, slot: Slot) -> &[T] {
        &self.data[slot.range()]
    }

    pub fn zeros_like(&self) -> Vec<T> {
        vec![T::zero(); self.data.len()]
    }

    /// Replaces the values of every entry from a name -> values lookup.
    pub fn load_values(&mut self, mut lookup: impl FnMut(&ParamEntry) -> Option<Vec<T>>) -> Result<(), String> {
        for e in &self.entries {
            let v = lookup(e).ok_or_else(|| format!("missing tensor {}", e.name))?;
            if v.len() != e.slot.len {
                return Err(format!("tensor {} has {} values, expected {}", e.name, v.len(), e.slot.len));
            }
            self.data[e.slot.range()].copy_from_slice(&v);
        }
        Ok(())
    }

    /// Same layout, values converted to another float type.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self.entries.clone(),
            data: self.data.iter().map(|v| U::lit(v.to_f64().unwrap())).collect(),
        }
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            for d in &e.shape {
                h.update((*d as u64).to_le_bytes());
            }
        }
        let mut bytes = Vec::with_capacity(self.data.len() * T::BYTES);
        for v in &self.data {
            v.write_le(&mut bytes);
        }
        h.update(&bytes);
        format!("{:x}", h.finalize())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
