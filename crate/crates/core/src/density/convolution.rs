//! Gaussian smoothing of piecewise-constant bias densities.

use super::grid::Axis;
use crate::error::{domain, Result};
use crate::stats::norm_interval;

/// A density in the bias `b` that is constant on the cells of `axis`, e.g. a
/// histogram slice at fixed features.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasProfile {
    pub axis: Axis,
    pub values: Vec<f64>,
}

impl BiasProfile {
    pub fn new(axis: Axis, values: Vec<f64>) -> Result<Self> {
        if values.len() != axis.bins {
            return Err(domain(format!(
                "profile has {} values for {} bins",
                values.len(),
                axis.bins
            )));
        }
        Ok(Self { axis, values })
    }

    /// Integral over `b`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.axis.width
    }

    /// Mean of `b` under the profile, `None` if it carries no mass.
    pub fn mean(&self) -> Option<f64> {
        let total: f64 = self.values.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let first: f64 = self
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| v * self.axis.center(k))
            .sum();
        Some(first / total)
    }

    /// `sum_k f_k P(e_k < u - w < e_{k+1})` for `w ~ N(0, sigma^2)`, which is
    /// the exact convolution of the step function with the Gaussian.
    pub(crate) fn convolve_unchecked(&self, u: f64, sigma: f64) -> f64 {
        // Cells more than this many sigmas away contribute below 1e-300.
        const REACH: f64 = 38.0;
        let mut acc = 0.0;
        for (k, &v) in self.values.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let lo = self.axis.edge(k);
            let hi = lo + self.axis.width;
            if (lo - u) > REACH * sigma || (u - hi) > REACH * sigma {
                continue;
            }
            acc += v * norm_interval(u, sigma, lo, hi);
        }
        acc
    }
}

/// Value at `u` of the bias profile convolved with `N(0, sigma^2)`.
pub fn convolve_bias_axis(profile: &BiasProfile, u: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(domain(format!("noise standard deviation must be positive, got {sigma}")));
    }
    Ok(profile.convolve_unchecked(u, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::norm_pdf;

    fn two_bin() -> BiasProfile {
        BiasProfile::new(Axis::new(1.0e-9, 0.5e-9, 2).unwrap(), vec![1.2e9, 0.8e9]).unwrap()
    }

    #[test]
    fn narrow_bin_tends_to_gaussian() {
        let w = 1e-15;
        let p = BiasProfile::new(Axis::new(-0.5 * w, w, 1).unwrap(), vec![1.0 / w]).unwrap();
        let sigma = 3e-10;
        for u in [-5e-10, 0.0, 2e-10, 9e-10] {
            let got = convolve_bias_axis(&p, u, sigma).unwrap();
            let want = norm_pdf(u, sigma);
            assert!((got - want).abs() <= 1e-6 * want.max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn small_sigma_recovers_histogram() {
        let p = two_bin();
        assert!((convolve_bias_axis(&p, 1.2e-9, 1e-15).unwrap() - 1.2e9).abs() < 1.0);
        assert!((convolve_bias_axis(&p, 1.7e-9, 1e-15).unwrap() - 0.8e9).abs() < 1.0);
        assert_eq!(convolve_bias_axis(&p, 0.5e-9, 1e-15).unwrap(), 0.0);
    }

    #[test]
    fn matches_riemann_quadrature() {
        let p = two_bin();
        let sigma = 0.2e-9;
        let n = 10_000;
        let (lo, hi) = (p.axis.lower, p.axis.upper());
        let h = (hi - lo) / n as f64;
        for u in [0.6e-9, 1.1e-9, 1.5e-9, 2.3e-9] {
            let brute: f64 = (0..n)
                .map(|i| {
                    let b = lo + (i as f64 + 0.5) * h;
                    let k = p.axis.locate(b).unwrap();
                    p.values[k] * norm_pdf(u - b, sigma) * h
                })
                .sum();
            let exact = convolve_bias_axis(&p, u, sigma).unwrap();
            // Compare on the scale of a unit-mass density in nanoseconds.
            assert!((brute - exact).abs() * 1e-9 < 1e-6, "{brute} vs {exact}");
        }
    }

    #[test]
    fn conserves_mass() {
        let p = two_bin();
        let sigma = 0.3e-9;
        let (lo, hi) = (p.axis.lower - 12.0 * sigma, p.axis.upper() + 12.0 * sigma);
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let mass: f64 = (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * p.convolve_unchecked(lo + i as f64 * h, sigma)
            })
            .sum::<f64>()
            * h;
        assert!((mass - p.mass()).abs() < 1e-9, "{mass} vs {}", p.mass());
    }

    #[test]
    fn rejects_non_positive_sigma() {
        assert!(convolve_bias_axis(&two_bin(), 0.0, 0.0).is_err());
    }
}
