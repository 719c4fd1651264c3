//! Analytic density family for the fitted-histogram estimators.
//!
//! NLOS: `b - b0 ~ Exp(lambda)` on `[b0, inf)` and, given `b`, features
//! `x ~ N(mu0 + mu1 b, Sigma)`. LOS: `b = 0` and `x ~ N(mu, Sigma)`.
//! Convolution with Gaussian TOA noise, the feature marginal and the
//! conditional mean of `b` all have closed forms.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{domain, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Multivariate normal stored through its Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: Vec<f64>,
    /// Lower-triangular `L` with `Sigma = L L^T`, row-major `k x k`.
    chol: Vec<f64>,
    log_det: f64,
}

impl Gaussian {
    /// Builds from a row-major covariance. Returns whether diagonal loading
    /// was needed to make it positive definite.
    pub fn from_covariance(mean: Vec<f64>, cov: &[f64]) -> Result<(Self, bool)> {
        let k = mean.len();
        if cov.len() != k * k {
            return Err(domain(format!("covariance has {} entries for dimension {k}", cov.len())));
        }
        if cov.iter().chain(&mean).any(|v| !v.is_finite()) {
            return Err(domain("non-finite Gaussian parameters"));
        }
        let mut loaded = cov.to_vec();
        let mut regularized = false;
        let mut factor = 1e-9;
        loop {
            if let Some(chol) = cholesky(&loaded, k) {
                let log_det = 2.0 * (0..k).map(|i| chol[i * k + i].ln()).sum::<f64>();
                return Ok((Self { mean, chol, log_det }, regularized));
            }
            if factor > 1.0 {
                return Err(domain("covariance could not be regularized"));
            }
            regularized = true;
            for i in 0..k {
                let scale = cov[i * k + i]
                    .abs()
                    .max(1e-12 * mean[i] * mean[i])
                    .max(1e-300);
                loaded[i * k + i] = cov[i * k + i] + factor * scale;
            }
            factor *= 10.0;
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major covariance `L L^T`.
    pub fn covariance(&self) -> Vec<f64> {
        let k = self.dim();
        let mut c = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                c[i * k + j] = (0..=i.min(j)).map(|m| self.chol[i * k + m] * self.chol[j * k + m]).sum();
            }
        }
        c
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Solves `L y = r`.
    fn whiten(&self, r: &[f64]) -> [f64; 3] {
        let k = self.dim();
        let mut y = [0.0; 3];
        for i in 0..k {
            let s: f64 = (0..i).map(|j| self.chol[i * k + j] * y[j]).sum();
            y[i] = (r[i] - s) / self.chol[i * k + i];
        }
        y
    }

    /// `L z`.
    fn color(&self, z: &[f64]) -> [f64; 3] {
        let k = self.dim();
        let mut x = [0.0; 3];
        for i in 0..k {
            x[i] = (0..=i).map(|j| self.chol[i * k + j] * z[j]).sum();
        }
        x
    }

    fn ln_norm(&self) -> f64 {
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det)
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        let r: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        let y = self.whiten(&r);
        self.ln_norm() - 0.5 * y[..self.dim()].iter().map(|v| v * v).sum::<f64>()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let k = self.dim();
        let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
        let c = self.color(&z);
        (0..k).map(|i| self.mean[i] + c[i]).collect()
    }

    /// Trapezoidal integral of the density on a whitened lattice.
    pub fn quadrature_mass(&self) -> f64 {
        let k = self.dim();
        let jac = (0.5 * self.log_det).exp();
        whitened_lattice(k, |z| {
            let c = self.color(z);
            let x: Vec<f64> = (0..k).map(|i| self.mean[i] + c[i]).collect();
            self.ln_pdf(&x).exp() * jac
        })
    }
}

fn cholesky(a: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = (0..j).map(|m| l[i * k + m] * l[j * k + m]).sum();
            if i == j {
                let d = a[i * k + i] - s;
                if !(d > 1e-12 * a[i * k + i].abs()) || !(d > 0.0) {
                    return None;
                }
                l[i * k + i] = d.sqrt();
            } else {
                l[i * k + j] = (a[i * k + j] - s) / l[j * k + j];
            }
        }
    }
    Some(l)
}

/// Sum over the lattice `{-8, ..., 8}^k` (unit spacing) of `f`. For smooth
/// integrands that decay like a standard normal this is the trapezoidal rule
/// with error far below 1e-6.
fn whitened_lattice(k: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    const R: i32 = 8;
    let side = (2 * R + 1) as usize;
    let total = side.pow(k as u32);
    let mut z = vec![0.0; k];
    let mut acc = 0.0;
    for mut n in 0..total {
        for zi in z.iter_mut() {
            *zi = (n % side) as f64 - R as f64;
            n /= side;
        }
        acc += f(&z);
    }
    acc
}

/// `ln erfcx(z) = z^2 + ln erfc(z)` for `z >= 0`.
fn ln_erfcx(z: f64) -> f64 {
    if z < 20.0 {
        z * z + libm::erfc(z).ln()
    } else {
        let a = 1.0 / (z * z);
        -(z * PI.sqrt()).ln() + (1.0 - 0.5 * a + 0.75 * a * a - 1.875 * a * a * a).ln()
    }
}

/// `ln int_{b0}^{inf} exp(-P b^2 / 2 + Q b) db`, stable for any `P >= 0`.
fn ln_half_line(p: f64, q: f64, b0: f64) -> f64 {
    if p <= 0.0 {
        return if q < 0.0 { b0 * q - (-q).ln() } else { f64::INFINITY };
    }
    let m = q / p;
    let z = (b0 - m) * (0.5 * p).sqrt();
    let common = 0.5 * (2.0 * PI / p).ln() - LN_2;
    if z >= 0.0 {
        b0 * q - 0.5 * p * b0 * b0 + common + ln_erfcx(z)
    } else {
        q * q / (2.0 * p) + common + libm::erfc(z).ln()
    }
}

/// Mean of `N(m, 1/P)` truncated to `[b0, inf)`, with `m = Q/P`.
fn truncated_mean(p: f64, q: f64, b0: f64) -> f64 {
    if p <= 0.0 {
        return b0 + 1.0 / (-q);
    }
    let s = 1.0 / p.sqrt();
    let m = q / p;
    let alpha = (b0 - m) / s;
    // Inverse Mills ratio minus alpha, i.e. (E - b0)/s.
    let excess = if alpha > 30.0 {
        let a = 1.0 / alpha;
        a - 2.0 * a.powi(3) + 10.0 * a.powi(5)
    } else if alpha < -37.0 {
        -alpha
    } else {
        let z = alpha * std::f64::consts::FRAC_1_SQRT_2;
        let erfcx = if z >= 0.0 {
            ln_erfcx(z).exp()
        } else {
            (z * z).exp() * libm::erfc(z)
        };
        (2.0 / PI).sqrt() / erfcx - alpha
    };
    b0 + s * excess
}

/// Fitted LOS family: point mass at `b = 0` times a Gaussian in the features.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedLos {
    pub features: Gaussian,
}

impl FittedLos {
    pub fn ln_feature_density(&self, x: &[f64]) -> f64 {
        self.features.ln_pdf(x)
    }
}

/// Fitted NLOS family, see the module docs.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedNlos {
    pub b0: f64,
    pub lambda: f64,
    pub intercept: Vec<f64>,
    pub slope: Vec<f64>,
    /// Zero-mean residual Gaussian.
    pub residual: Gaussian,
    whitened_slope: [f64; 3],
    slope_precision: f64,
}

/// Quantities of the NLOS family that depend only on the feature point.
#[derive(Debug, Clone, Copy)]
pub struct FittedSlice {
    /// Normalizing constants and `-C/2`.
    base: f64,
    a: f64,
    b: f64,
    b0: f64,
    lambda: f64,
}

impl FittedSlice {
    /// `ln ((f ⊗ N(0, sigma^2))(u, x))`, convolution along `b` only.
    pub fn ln_convolved(&self, u: f64, sigma: f64) -> f64 {
        let inv = 1.0 / (sigma * sigma);
        self.base - 0.5 * (LN_2PI + 2.0 * sigma.ln()) - 0.5 * u * u * inv
            + ln_half_line(self.a + inv, self.b + u * inv - self.lambda, self.b0)
    }

    /// `ln int f(b, x) db`.
    pub fn ln_feature_density(&self) -> f64 {
        self.base + ln_half_line(self.a, self.b - self.lambda, self.b0)
    }

    /// `E[b | x]`.
    pub fn conditional_mean(&self) -> f64 {
        truncated_mean(self.a, self.b - self.lambda, self.b0)
    }
}

impl FittedNlos {
    pub fn new(b0: f64, lambda: f64, intercept: Vec<f64>, slope: Vec<f64>, residual: Gaussian) -> Result<Self> {
        let k = residual.dim();
        if intercept.len() != k || slope.len() != k {
            return Err(domain("inconsistent NLOS parameter dimensions"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) || !b0.is_finite() {
            return Err(domain(format!("invalid exponential parameters b0={b0} lambda={lambda}")));
        }
        let whitened_slope = residual.whiten(&slope);
        let slope_precision = whitened_slope[..k].iter().map(|v| v * v).sum();
        Ok(Self {
            b0,
            lambda,
            intercept,
            slope,
            residual,
            whitened_slope,
            slope_precision,
        })
    }

    pub fn dim(&self) -> usize {
        self.residual.dim()
    }

    /// Joint log density `ln f(b, x)`; `-inf` below `b0`.
    pub fn ln_density(&self, b: f64, x: &[f64]) -> f64 {
        if b < self.b0 {
            return f64::NEG_INFINITY;
        }
        let r: Vec<f64> = (0..self.dim())
            .map(|i| x[i] - self.intercept[i] - self.slope[i] * b)
            .collect();
        self.lambda.ln() - self.lambda * (b - self.b0) + self.residual.ln_pdf(&r)
    }

    pub fn slice(&self, x: &[f64]) -> FittedSlice {
        let k = self.dim();
        let r: Vec<f64> = (0..k).map(|i| x[i] - self.intercept[i]).collect();
        let y = self.residual.whiten(&r);
        let c: f64 = y[..k].iter().map(|v| v * v).sum();
        let b: f64 = (0..k).map(|i| y[i] * self.whitened_slope[i]).sum();
        FittedSlice {
            base: self.lambda.ln() + self.lambda * self.b0 + self.residual.ln_norm() - 0.5 * c,
            a: self.slope_precision,
            b,
            b0: self.b0,
            lambda: self.lambda,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, Vec<f64>) {
        let b = self.b0 + Exp::new(self.lambda).expect("positive rate").sample(rng);
        let noise = self.residual.sample(rng);
        let x = (0..self.dim())
            .map(|i| self.intercept[i] + self.slope[i] * b + noise[i])
            .collect();
        (b, x)
    }

    /// Integral of the joint density: composite Simpson in `b` over
    /// `[b0, b0 + 40/lambda]`, whitened trapezoidal lattice in the features.
    pub fn quadrature_mass(&self) -> f64 {
        let k = self.dim();
        let n = 1000;
        let h = 40.0 / self.lambda / n as f64;
        let jac = (0.5 * self.residual.log_det()).exp();
        let mut total = 0.0;
        for i in 0..=n {
            let b = self.b0 + i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let inner = whitened_lattice(k, |z| {
                let c = self.residual.color(z);
                let x: Vec<f64> = (0..k)
                    .map(|j| self.intercept[j] + self.slope[j] * b + c[j])
                    .collect();
                self.ln_density(b, &x).exp() * jac
            });
            total += w * inner;
        }
        total * h / 3.0
    }
}

/// Held-out goodness of fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoodnessOfFit {
    /// Mean log density of the held-out samples under the training fit.
    pub heldout_mean_loglik: f64,
    pub n_train: usize,
    pub n_heldout: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub goodness: GoodnessOfFit,
    /// Diagonal loading was applied to the feature covariance.
    pub regularized: bool,
}

/// A fitted analytic density for one channel state.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedDensity {
    Los(FittedLos),
    Nlos(FittedNlos),
}

/// One training point: bias and model features.
pub type BiasSample = (f64, Vec<f64>);

const MIN_FIT_SAMPLES: usize = 10;

fn is_heldout(i: usize) -> bool {
    i % 5 == 4
}

fn split(samples: &[BiasSample]) -> (Vec<BiasSample>, Vec<BiasSample>) {
    let mut train = Vec::new();
    let mut hold = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if is_heldout(i) {
            hold.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    (train, hold)
}

fn mean_cov(rows: &[Vec<f64>], k: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut cov = vec![0.0; k * k];
    for r in rows {
        for i in 0..k {
            for j in 0..k {
                cov[i * k + j] += (r[i] - mean[i]) * (r[j] - mean[j]) / n;
            }
        }
    }
    (mean, cov)
}

fn check_samples(samples: &[BiasSample]) -> Result<usize> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(domain(format!(
            "analytic fit needs at least {MIN_FIT_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let k = samples[0].1.len();
    if k > 3 {
        return Err(domain(format!("at most 3 features supported, got {k}")));
    }
    if samples.iter().any(|s| s.1.len() != k || !s.0.is_finite() || s.1.iter().any(|v| !v.is_finite())) {
        return Err(domain("inconsistent or non-finite fit samples"));
    }
    Ok(k)
}

pub fn fit_los(samples: &[BiasSample]) -> Result<(FittedLos, bool)> {
    let k = check_samples(samples)?;
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.1.clone()).collect();
    let (mean, cov) = mean_cov(&rows, k);
    let (features, regularized) = Gaussian::from_covariance(mean, &cov)?;
    Ok((FittedLos { features }, regularized))
}

pub fn fit_nlos(samples: &[BiasSample], b0: f64) -> Result<(FittedNlos, bool)> {
    let k = check_samples(samples)?;
    let n = samples.len() as f64;
    if let Some(s) = samples.iter().find(|s| s.0 < b0) {
        return Err(domain(format!("NLOS bias {} below the support bound {b0}", s.0)));
    }
    let excess = samples.iter().map(|s| s.0 - b0).sum::<f64>() / n;
    if !(excess > 0.0) {
        return Err(domain("all NLOS biases sit on the support bound"));
    }
    let lambda = 1.0 / excess;
    let mb = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let vb = samples.iter().map(|s| (s.0 - mb).powi(2)).sum::<f64>() / n;
    let mut intercept = vec![0.0; k];
    let mut slope = vec![0.0; k];
    for j in 0..k {
        let mx = samples.iter().map(|s| s.1[j]).sum::<f64>() / n;
        let cxb = samples.iter().map(|s| (s.0 - mb) * (s.1[j] - mx)).sum::<f64>() / n;
        slope[j] = if vb > 0.0 { cxb / vb } else { 0.0 };
        intercept[j] = mx - slope[j] * mb;
    }
    let residuals: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| (0..k).map(|j| s.1[j] - intercept[j] - slope[j] * s.0).collect())
        .collect();
    let (_, cov) = mean_cov(&residuals, k);
    let (residual, regularized) = Gaussian::from_covariance(vec![0.0; k], &cov)?;
    Ok((FittedNlos::new(b0, lambda, intercept, slope, residual)?, regularized))
}

fn ln_joint(d: &FittedDensity, s: &BiasSample) -> f64 {
    match d {
        FittedDensity::Los(l) => l.ln_feature_density(&s.1),
        FittedDensity::Nlos(n) => n.ln_density(s.0, &s.1),
    }
}

/// Fits the family for `nlos` (true) or LOS samples. Goodness of fit is the
/// mean held-out log density of every fifth sample under a fit to the rest;
/// the returned parameters use all samples.
pub fn fit_analytic(samples: &[BiasSample], nlos: bool, b0: f64) -> Result<(FittedDensity, FitReport)> {
    check_samples(samples)?;
    let fit = |s: &[BiasSample]| -> Result<(FittedDensity, bool)> {
        if nlos {
            fit_nlos(s, b0).map(|(f, r)| (FittedDensity::Nlos(f), r))
        } else {
            fit_los(s).map(|(f, r)| (FittedDensity::Los(f), r))
        }
    };
    let (train, hold) = split(samples);
    let goodness = if train.len() >= MIN_FIT_SAMPLES && !hold.is_empty() {
        let (partial, _) = fit(&train)?;
        let ll = hold.iter().map(|s| ln_joint(&partial, s)).sum::<f64>() / hold.len() as f64;
        GoodnessOfFit {
            heldout_mean_loglik: ll,
            n_train: train.len(),
            n_heldout: hold.len(),
        }
    } else {
        GoodnessOfFit {
            heldout_mean_loglik: f64::NAN,
            n_train: samples.len(),
            n_heldout: 0,
        }
    };
    let (full, regularized) = fit(samples)?;
    if regularized {
        log::warn!("singular feature covariance regularized by diagonal loading");
    }
    Ok((full, FitReport { goodness, regularized }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::record_rng;
    use crate::stats::norm_pdf;

    fn reference() -> FittedNlos {
        let cov = [4.0e-4, 1.0e-13, 1.0e-13, 1.0e-18];
        let (res, reg) = Gaussian::from_covariance(vec![0.0, 0.0], &cov).unwrap();
        assert!(!reg);
        FittedNlos::new(1.0674e-9, 1.0 / 0.8e-9, vec![0.5, 2e-9], vec![-1e8, 3.0], res).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn recovers_parameters_from_its_own_draws() {
        let truth = reference();
        let mut rng = record_rng(5, 0);
        let samples: Vec<BiasSample> = (0..10_000).map(|_| truth.sample(&mut rng)).collect();
        let (fit, report) = fit_analytic(&samples, true, truth.b0).unwrap();
        let FittedDensity::Nlos(fit) = fit else { panic!() };
        assert!(rel(fit.lambda, truth.lambda) < 0.05);
        for j in 0..2 {
            assert!(rel(fit.intercept[j], truth.intercept[j]) < 0.05, "intercept {j}");
            assert!(rel(fit.slope[j], truth.slope[j]) < 0.05, "slope {j}");
        }
        let (c, t) = (fit.residual.covariance(), truth.residual.covariance());
        for i in [0, 3] {
            assert!(rel(c[i], t[i]) < 0.05);
        }
        assert!(report.goodness.heldout_mean_loglik.is_finite());
        assert_eq!(report.goodness.n_heldout, 2000);
    }

    #[test]
    fn quadrature_integrates_to_one() {
        assert!((reference().quadrature_mass() - 1.0).abs() < 1e-6);
        let (g, _) = Gaussian::from_covariance(vec![1.0, -2.0, 3e-9], &[2.0, 0.3, 0.0, 0.3, 1.0, 1e-10, 0.0, 1e-10, 1e-17]).unwrap();
        assert!((g.quadrature_mass() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn closed_forms_match_numerical_integration() {
        let f = reference();
        let x = [0.45, 2.2e-9 + 3.0 * 1.6e-9];
        let s = f.slice(&x);
        let n = 400_000;
        let h = 40.0 / f.lambda / n as f64;
        let mut marg = 0.0;
        let mut first = 0.0;
        for i in 0..n {
            let b = f.b0 + (i as f64 + 0.5) * h;
            let v = f.ln_density(b, &x).exp() * h;
            marg += v;
            first += v * b;
        }
        assert!(rel(s.ln_feature_density().exp(), marg) < 1e-6, "{} {marg}", s.ln_feature_density().exp());
        assert!(rel(s.conditional_mean(), first / marg) < 1e-6);

        let sigma = 0.4e-9;
        for u in [0.5e-9, 1.5e-9, 3e-9] {
            let conv: f64 = (0..n)
                .map(|i| {
                    let b = f.b0 + (i as f64 + 0.5) * h;
                    f.ln_density(b, &x).exp() * norm_pdf(u - b, sigma) * h
                })
                .sum();
            assert!(rel(s.ln_convolved(u, sigma).exp(), conv) < 1e-6);
        }
    }

    #[test]
    fn zero_feature_family_is_the_exponential() {
        let (g, _) = Gaussian::from_covariance(vec![], &[]).unwrap();
        let f = FittedNlos::new(1e-9, 1e9, vec![], vec![], g).unwrap();
        let s = f.slice(&[]);
        assert!(s.ln_feature_density().abs() < 1e-12);
        assert!(rel(s.conditional_mean(), 2e-9) < 1e-12);
    }

    #[test]
    fn los_fit_has_point_mass_bias() {
        let mut rng = record_rng(9, 9);
        let samples: Vec<BiasSample> = (0..50)
            .map(|_| (0.0, vec![rng.random::<f64>(), rng.random::<f64>()]))
            .collect();
        let (d, _) = fit_analytic(&samples, false, 1e-9).unwrap();
        assert!(matches!(d, FittedDensity::Los(_)));
        assert!(fit_analytic(&samples[..5], false, 1e-9).is_err());
    }

    #[test]
    fn singular_covariance_is_loaded() {
        let samples: Vec<BiasSample> = (0..20).map(|i| (0.0, vec![i as f64, 2.0 * i as f64])).collect();
        let (_, report) = fit_analytic(&samples, false, 1e-9).unwrap();
        assert!(report.regularized);
    }
}
