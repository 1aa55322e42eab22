//! Radar scene reconstruction through the Generalized Radon Transform:
//! scene synthesis, a GRT forward/adjoint operator, a coordinate-MLP scene
//! model trained through the operator, a block Kaczmarz baseline, scene and
//! signal metrics, and the file formats and pipeline used by the CLI.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod grt;
pub mod harness;
pub mod inr;
pub mod kaczmarz;
pub mod metrics;
pub mod optimizer;
pub mod scene;

pub use error::{Error, Result};

use std::f64::consts::{PI, TAU};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_phase(x: f64) -> f64 {
    let w = x - TAU * ((x - PI) / TAU).ceil();
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Largest elementwise relative difference between two gradient vectors.
///
/// Each entry is compared as `|a - b| / max(|a|, |b|, floor)` where the floor
/// is `1e-3` times the largest magnitude in `b`, so entries that are
/// negligible relative to the whole vector do not dominate.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "vectors differ in length");
    let floor = 1e-3 * b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y).abs();
            if d == 0.0 {
                0.0
            } else {
                d / x.abs().max(y.abs()).max(floor)
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_endpoints() {
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
        assert_eq!(wrap_phase(0.0), 0.0);
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn wrap_range_and_congruence(x in -100.0..100.0f64) {
            let w = wrap_phase(x);
            prop_assert!(w > -PI && w <= PI);
            let k = (x - w) / TAU;
            prop_assert!((k - k.round()).abs() < 1e-9);
        }
    }
}
