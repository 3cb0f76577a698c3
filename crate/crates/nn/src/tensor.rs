//! Batched real tensors in `(batch, channels, rows, cols)` layout.

use crate::error::{NnError, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    pub batch: usize,
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(batch: usize, channels: usize, rows: usize, cols: usize) -> Self {
        Self {
            batch,
            channels,
            rows,
            cols,
            data: vec![T::zero(); batch * channels * rows * cols],
        }
    }

    pub fn from_vec(batch: usize, channels: usize, rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        let want = batch * channels * rows * cols;
        if data.len() != want {
            return Err(NnError::Shape(format!(
                "tensor {batch}x{channels}x{rows}x{cols} needs {want} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            batch,
            channels,
            rows,
            cols,
            data,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.batch, self.channels, self.rows, self.cols]
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn sample_len(&self) -> usize {
        self.channels * self.plane()
    }

    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.sample_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            batch: self.batch,
            channels: self.channels,
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `Σ a·b` accumulated in 64-bit.
    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.wide() * b.wide())
            .sum()
    }

    pub fn ensure_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(NnError::Shape(format!(
                "shape {:?} does not match {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}
