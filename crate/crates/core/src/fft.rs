//! Two-dimensional FFTs over row-major complex buffers.
//!
//! Forward transforms are unnormalized with an `e^{-j}` kernel; inverse
//! transforms use `e^{+j}` and carry the `1/(rows*cols)` factor, so
//! `ifft2(fft2(x)) == x` up to rounding.

use std::cell::RefCell;

use rustfft::num_complex::Complex;
use rustfft::num_traits::Float;
use rustfft::{FftDirection, FftNum, FftPlanner};

/// Floating-point types with a cached, thread-local FFT planner.
pub trait FftScalar: FftNum + Float {
    fn with_planner<R>(f: impl FnOnce(&mut FftPlanner<Self>) -> R) -> R;
}

thread_local! {
    static PLANNER_F32: RefCell<FftPlanner<f32>> = RefCell::new(FftPlanner::new());
    static PLANNER_F64: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

impl FftScalar for f32 {
    fn with_planner<R>(f: impl FnOnce(&mut FftPlanner<f32>) -> R) -> R {
        PLANNER_F32.with(|p| f(&mut p.borrow_mut()))
    }
}

impl FftScalar for f64 {
    fn with_planner<R>(f: impl FnOnce(&mut FftPlanner<f64>) -> R) -> R {
        PLANNER_F64.with(|p| f(&mut p.borrow_mut()))
    }
}

fn transpose<T: Copy>(src: &[T], dst: &mut [T], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

fn transform<T: FftScalar>(data: &mut [Complex<T>], rows: usize, cols: usize, dir: FftDirection) {
    assert_eq!(data.len(), rows * cols, "buffer does not match {rows}x{cols}");
    if data.is_empty() {
        return;
    }
    let (row_fft, col_fft) = T::with_planner(|p| (p.plan_fft(cols, dir), p.plan_fft(rows, dir)));
    row_fft.process(data);

    let mut t = vec![Complex::new(T::zero(), T::zero()); rows * cols];
    transpose(data, &mut t, rows, cols);
    col_fft.process(&mut t);
    transpose(&t, data, cols, rows);
}

/// In-place forward 2D FFT (unnormalized).
pub fn fft2_in_place<T: FftScalar>(data: &mut [Complex<T>], rows: usize, cols: usize) {
    transform(data, rows, cols, FftDirection::Forward);
}

/// In-place inverse 2D FFT including the `1/(rows*cols)` factor.
pub fn ifft2_in_place<T: FftScalar>(data: &mut [Complex<T>], rows: usize, cols: usize) {
    transform(data, rows, cols, FftDirection::Inverse);
    let scale = T::one() / T::from(rows * cols).unwrap();
    for v in data.iter_mut() {
        *v = *v * scale;
    }
}

/// Multiplies the 2D spectrum of `data` by `mask` and transforms back:
/// `IFFT2[FFT2[data] ⊙ mask]`.
pub fn spectral_filter_in_place<T: FftScalar>(
    data: &mut [Complex<T>],
    rows: usize,
    cols: usize,
    mask: &[Complex<T>],
) {
    assert_eq!(mask.len(), rows * cols);
    fft2_in_place(data, rows, cols);
    for (d, m) in data.iter_mut().zip(mask) {
        *d = *d * *m;
    }
    ifft2_in_place(data, rows, cols);
}
