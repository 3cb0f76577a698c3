//! Dense 2D complex and real grids.
//!
//! Grids are row-major. For aperture-shaped data, rows index the scan axis
//! `x` and columns index the array axis `y`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft;

/// A 2D complex field stored as interleaved `(re, im)` pairs, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty("grid"));
        }
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, Complex64::new(0.0, 0.0))
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, Complex64::new(1.0, 0.0))
    }

    pub fn filled(rows: usize, cols: usize, value: Complex64) -> Self {
        assert!(rows > 0 && cols > 0, "grid dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        assert!(rows > 0 && cols > 0, "grid dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn ensure_same_dims(&self, other: &ComplexGrid) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> ComplexGrid {
        ComplexGrid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &ComplexGrid,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<ComplexGrid> {
        self.ensure_same_dims(other)?;
        Ok(ComplexGrid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Elementwise product `self ⊙ other`.
    pub fn hadamard(&self, other: &ComplexGrid) -> Result<ComplexGrid> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn add(&self, other: &ComplexGrid) -> Result<ComplexGrid> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ComplexGrid) -> Result<ComplexGrid> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn conj(&self) -> ComplexGrid {
        self.map(|v| v.conj())
    }

    pub fn scale(&self, s: f64) -> ComplexGrid {
        self.map(|v| v * s)
    }

    pub fn scale_complex(&self, s: Complex64) -> ComplexGrid {
        self.map(|v| v * s)
    }

    /// Sum of squared magnitudes.
    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Sum of magnitudes (the complex l1 norm).
    pub fn norm_l1(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Magnitude of every sample.
    pub fn amplitude(&self) -> RealGrid {
        RealGrid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v.norm()).collect(),
        }
    }

    /// `‖self − other‖₂ / ‖other‖₂` (or the absolute error when `other` is zero).
    pub fn relative_error(&self, other: &ComplexGrid) -> Result<f64> {
        let diff = self.sub(other)?.norm_l2();
        let base = other.norm_l2();
        Ok(if base > 0.0 { diff / base } else { diff })
    }

    /// Row and column of the largest-magnitude sample.
    pub fn argmax_abs(&self) -> (usize, usize) {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, v) in self.data.iter().enumerate() {
            let m = v.norm_sqr();
            if m > best_v {
                best_v = m;
                best = i;
            }
        }
        (best / self.cols, best % self.cols)
    }

    pub fn fft2(&self) -> ComplexGrid {
        let mut out = self.clone();
        fft::fft2_in_place(&mut out.data, self.rows, self.cols);
        out
    }

    pub fn ifft2(&self) -> ComplexGrid {
        let mut out = self.clone();
        fft::ifft2_in_place(&mut out.data, self.rows, self.cols);
        out
    }

    /// Cyclic shift by `(dr, dc)` cells.
    pub fn roll(&self, dr: isize, dc: isize) -> ComplexGrid {
        let (rows, cols) = (self.rows as isize, self.cols as isize);
        ComplexGrid::from_fn(self.rows, self.cols, |r, c| {
            let sr = (r as isize - dr).rem_euclid(rows) as usize;
            let sc = (c as isize - dc).rem_euclid(cols) as usize;
            self.get(sr, sc)
        })
    }
}

/// A 2D real-valued image (amplitudes, metric inputs).
#[derive(Clone, Debug, PartialEq)]
pub struct RealGrid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealGrid {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty("image"));
        }
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealGrid {
        RealGrid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Affine map onto `[0, 1]`; a constant image maps to all zeros.
    pub fn minmax_normalized(&self) -> RealGrid {
        let lo = self.data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        if range > 0.0 {
            self.map(|v| (v - lo) / range)
        } else {
            self.map(|_| 0.0)
        }
    }
}
