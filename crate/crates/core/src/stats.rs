//! Small numeric helpers shared across modules.

use std::f64::consts::FRAC_1_SQRT_2;

/// Standard normal CDF.
pub(crate) fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal upper tail, accurate far into the tail.
pub(crate) fn norm_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z * FRAC_1_SQRT_2)
}

/// Gaussian density N(x; 0, sigma^2).
#[cfg(test)]
pub(crate) fn norm_pdf(x: f64, sigma: f64) -> f64 {
    let z = x / sigma;
    (-0.5 * z * z).exp() / (sigma * std::f64::consts::TAU.sqrt())
}

/// P(lo < X < hi) for X ~ N(mean, sigma^2), computed on the side of the
/// distribution that avoids cancellation.
pub(crate) fn norm_interval(mean: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    let a = (lo - mean) / sigma;
    let b = (hi - mean) / sigma;
    if a > 0.0 {
        norm_sf(a) - norm_sf(b)
    } else {
        norm_cdf(b) - norm_cdf(a)
    }
}
