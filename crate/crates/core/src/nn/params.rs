use std::collections::HashMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Named parameter tensors in insertion order.
///
/// The same type carries gradients (one slot per parameter, same shape) and
/// non-trainable buffers such as running batch-norm statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::ParamMismatch(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, t));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = Self::new();
        for (n, t) in self.iter() {
            out.insert(n, Tensor::zeros(t.shape())).expect("names are unique");
        }
        out
    }

    /// Subset of entries whose name starts with `prefix`.
    pub fn filter_prefix(&self, prefix: &str) -> Self {
        let mut out = Self::new();
        for (n, t) in self.iter().filter(|(n, _)| n.starts_with(prefix)) {
            out.insert(n, t.clone()).expect("names are unique");
        }
        out
    }

    /// Subset of entries whose name satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(&str) -> bool) -> Self {
        let mut out = Self::new();
        for (n, t) in self.iter().filter(|(n, _)| keep(n)) {
            out.insert(n, t.clone()).expect("names are unique");
        }
        out
    }

    /// Errors unless `other` has exactly the same names and shapes.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::ParamMismatch(format!(
                "{} vs {} parameters",
                self.len(),
                other.len()
            )));
        }
        for (n, t) in self.iter() {
            let o = other
                .get(n)
                .ok_or_else(|| Error::ParamMismatch(format!("missing `{n}`")))?;
            if o.shape() != t.shape() {
                return Err(Error::ParamMismatch(format!(
                    "`{n}`: {:?} vs {:?}",
                    t.shape(),
                    o.shape()
                )));
            }
        }
        Ok(())
    }

    /// `self += s * other` for every shared name.
    pub fn axpy(&mut self, s: T, other: &Self) {
        for (n, t) in self.entries.iter_mut() {
            if let Some(o) = other.get(n) {
                t.add_assign_scaled(o, s);
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for (n, t) in self.iter() {
            out.insert(n, t.cast()).expect("names are unique");
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    /// Flattened view of all values, in entry order.
    pub fn flatten(&self) -> Vec<T> {
        self.entries.iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }
}
