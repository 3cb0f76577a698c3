//! Per-image min-max normalization of the real and imaginary channels.

use num_complex::Complex64;

use crate::grid::ComplexGrid;

/// Channel extrema captured by [`normalize_minmax`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationRecord {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl NormalizationRecord {
    pub const IDENTITY: NormalizationRecord = NormalizationRecord {
        re_min: 0.0,
        re_max: 1.0,
        im_min: 0.0,
        im_max: 1.0,
    };
}

fn extrema(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

#[inline]
fn forward(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.0
    }
}

#[inline]
fn inverse(v: f64, lo: f64, hi: f64) -> f64 {
    v * (hi - lo) + lo
}

/// Maps the real and imaginary channels independently onto `[0, 1]`.
/// A constant channel maps to zeros; [`denormalize`] restores the constant.
pub fn normalize_minmax(img: &ComplexGrid) -> (ComplexGrid, NormalizationRecord) {
    let (re_min, re_max) = extrema(img.as_slice().iter().map(|v| v.re));
    let (im_min, im_max) = extrema(img.as_slice().iter().map(|v| v.im));
    let rec = NormalizationRecord {
        re_min,
        re_max,
        im_min,
        im_max,
    };
    (apply(img, &rec), rec)
}

/// Normalizes with extrema recorded elsewhere.
pub fn apply(img: &ComplexGrid, rec: &NormalizationRecord) -> ComplexGrid {
    img.map(|v| {
        Complex64::new(
            forward(v.re, rec.re_min, rec.re_max),
            forward(v.im, rec.im_min, rec.im_max),
        )
    })
}

pub fn denormalize(img: &ComplexGrid, rec: &NormalizationRecord) -> ComplexGrid {
    img.map(|v| {
        Complex64::new(
            inverse(v.re, rec.re_min, rec.re_max),
            inverse(v.im, rec.im_min, rec.im_max),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn constant_real_channel_maps_to_zero() {
        let g = ComplexGrid::new(1, 3, vec![c(5.0, 0.0), c(5.0, 1.0), c(5.0, 2.0)]).unwrap();
        let (n, rec) = normalize_minmax(&g);
        assert!(n.as_slice().iter().all(|v| v.re == 0.0));
        assert_eq!((rec.re_min, rec.re_max), (5.0, 5.0));
        assert_eq!(n.get(0, 2).im, 1.0);
        assert!(denormalize(&n, &rec).relative_error(&g).unwrap() < 1e-15);
    }

    #[test]
    fn affine_map_of_two_level_channels() {
        let g = ComplexGrid::new(2, 1, vec![c(0.0, -1.0), c(2.0, 1.0)]).unwrap();
        let (n, _) = normalize_minmax(&g);
        assert_eq!(n.as_slice(), &[c(0.0, 0.0), c(1.0, 1.0)]);
    }

    #[test]
    fn denormalize_special_records() {
        let z = ComplexGrid::zeros(2, 2);
        let rec = NormalizationRecord {
            re_min: 5.0,
            re_max: 5.0,
            im_min: 0.0,
            im_max: 0.0,
        };
        assert!(denormalize(&z, &rec).as_slice().iter().all(|&v| v == c(5.0, 0.0)));
        let g = ComplexGrid::from_fn(3, 3, |r, k| c(r as f64 * 0.3, k as f64 - 1.0));
        assert_eq!(denormalize(&g, &NormalizationRecord::IDENTITY), g);
    }

    #[test]
    fn normalized_input_is_a_fixed_point() {
        let g = ComplexGrid::from_fn(4, 4, |r, k| c(r as f64 / 3.0, k as f64 / 3.0));
        let (n, rec) = normalize_minmax(&g);
        assert_eq!(rec, NormalizationRecord::IDENTITY);
        assert_eq!(n, g);
    }

    proptest! {
        #[test]
        fn round_trip_within_tolerance(vals in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 64)) {
            let g = ComplexGrid::new(8, 8, vals.iter().map(|&(a, b)| c(a, b)).collect()).unwrap();
            let (n, rec) = normalize_minmax(&g);
            prop_assert!(rec.re_max >= rec.re_min && rec.im_max >= rec.im_min);
            prop_assert!(n.as_slice().iter().all(|v| (0.0..=1.0).contains(&v.re) && (0.0..=1.0).contains(&v.im)));
            let back = denormalize(&n, &rec);
            for (a, b) in back.as_slice().iter().zip(g.as_slice()) {
                prop_assert!((a - b).norm() <= 1e-6 * b.norm().max(1.0));
            }
        }
    }
}
