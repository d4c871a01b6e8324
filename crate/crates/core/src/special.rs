//! Error function and Gaussian tail helpers.
//!
//! erf/erfc come from `libm` (musl port, within a few ulp); the inverse
//! tail uses `statrs`.

use std::f64::consts::SQRT_2;

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Standard Gaussian upper tail, Q(x) = P(Z > x).
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Inverse of [`q_function`] on (0, 1).
pub fn q_inverse(p: f64) -> f64 {
    SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
}

/// ½[erf(a) + erf(b)] for a ≤ b, arranged to avoid cancellation when both
/// arguments sit in the same tail.
pub fn half_erf_sum(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        // erf(a)+erf(b) = 2 - erfc(a) - erfc(b)
        1.0 - 0.5 * (erfc(a) + erfc(b))
    } else if b <= 0.0 {
        -(1.0 - 0.5 * (erfc(-a) + erfc(-b)))
    } else {
        // a < 0 < b: erf(b) - erf(|a|) = erfc(|a|) - erfc(b)
        0.5 * (erfc(-a) - erfc(b))
    }
}
