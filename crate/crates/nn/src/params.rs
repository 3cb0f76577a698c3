//! Flat parameter storage with named, shaped views and matching gradients.

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Handle to one parameter array inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId {
    pub offset: usize,
    pub len: usize,
}

impl ParamId {
    #[inline]
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    specs: Vec<ParamSpec>,
    values: Vec<T>,
    grads: Vec<T>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            specs: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Vec<T>) -> ParamId {
        let len: usize = shape.iter().product();
        assert_eq!(init.len(), len, "initial values do not match the shape");
        let offset = self.values.len();
        self.specs.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
            len,
        });
        self.values.extend(init);
        self.grads.extend(std::iter::repeat_n(T::zero(), len));
        ParamId { offset, len }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.values[id.range()]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.values[id.range()]
    }

    #[inline]
    pub fn scalar(&self, id: ParamId) -> f64 {
        self.values[id.offset].wide()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn grads(&self) -> &[T] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [T] {
        &mut self.grads
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.grads[id.range()]
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.specs.iter().find(|s| s.name == name).map(|s| ParamId {
            offset: s.offset,
            len: s.len,
        })
    }

    /// Replaces every value; the layout must match exactly.
    pub fn load_values(&mut self, specs: &[ParamSpec], values: Vec<T>) -> Result<()> {
        if specs != self.specs.as_slice() {
            return Err(NnError::Shape("parameter table does not match the architecture".into()));
        }
        if values.len() != self.values.len() {
            return Err(NnError::Shape(format!(
                "expected {} parameter values, got {}",
                self.values.len(),
                values.len()
            )));
        }
        self.values = values;
        Ok(())
    }
}
