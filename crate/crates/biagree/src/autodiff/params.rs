use std::sync::Arc;

use super::Array;
use crate::error::{Error, Result};

/// Named parameter arrays in insertion order.
///
/// Names are unique and shapes are fixed once inserted; only values change.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Arc<Vec<String>>,
    arrays: Vec<Array>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) -> Result<usize> {
        let name = name.into();
        if self.names.iter().any(|n| *n == name) {
            return Err(Error::DuplicateParam(name));
        }
        Arc::make_mut(&mut self.names).push(name);
        self.arrays.push(value);
        Ok(self.arrays.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.arrays.iter().map(Array::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        Ok(&self.arrays[self.index_of(name)?])
    }

    pub fn by_index(&self, index: usize) -> &Array {
        &self.arrays[index]
    }

    /// Mutable view of one parameter's values. Shapes cannot be changed.
    pub fn values_mut(&mut self, index: usize) -> &mut [f64] {
        self.arrays[index].data_mut()
    }

    pub fn values_mut_by_name(&mut self, name: &str) -> Result<&mut [f64]> {
        let index = self.index_of(name)?;
        Ok(self.values_mut(index))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.names.iter().map(String::as_str).zip(self.arrays.iter())
    }

    /// A zero-valued gradient map with this store's layout.
    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            names: Arc::clone(&self.names),
            arrays: self.arrays.iter().map(|a| Array::zeros(a.shape())).collect(),
        }
    }

    /// Same names and shapes, in the same order.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        (Arc::ptr_eq(&self.names, &other.names) || self.names == other.names)
            && self.arrays.len() == other.arrays.len()
            && self.arrays.iter().zip(&other.arrays).all(|(a, b)| a.shape() == b.shape())
    }
}

/// A gradient map aligned with a [`ParamStore`]'s layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    names: Arc<Vec<String>>,
    arrays: Vec<Array>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Result<&Array> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.arrays[i])
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn by_index(&self, index: usize) -> &Array {
        &self.arrays[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.names.iter().map(String::as_str).zip(self.arrays.iter())
    }

    /// All gradient values, flattened in parameter order.
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.arrays.iter().flat_map(|a| a.data().iter().copied())
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        assert_eq!(self.arrays.len(), other.arrays.len(), "gradient layouts differ");
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        assert_eq!(self.arrays.len(), other.arrays.len(), "gradient layouts differ");
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += factor * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.arrays {
            for x in a.data_mut() {
                *x *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().all(Array::is_finite)
    }

    pub fn max_abs_diff(&self, other: &Gradients) -> f64 {
        self.flat()
            .zip(other.flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn arrays_mut(&mut self) -> &mut [Array] {
        &mut self.arrays
    }
}
