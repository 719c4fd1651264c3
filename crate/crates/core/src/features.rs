//! Waveform features, distance-free reparameterization and correlation
//! statistics.
//!
//! Integrals use the trapezoidal rule on the uniform grid `t_k = t0 + k*dt`.

use crate::error::{domain, Error, Result};

/// Borrowed view of a uniformly sampled waveform.
#[derive(Debug, Clone, Copy)]
pub struct Signal<'a> {
    pub samples: &'a [f64],
    /// Sample period, s.
    pub dt: f64,
    /// Time of `samples[0]`, s.
    pub t0: f64,
}

impl<'a> Signal<'a> {
    pub fn new(samples: &'a [f64], dt: f64, t0: f64) -> Self {
        Self { samples, dt, t0 }
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    fn non_empty(&self) -> Result<()> {
        if self.samples.is_empty() {
            Err(domain("empty waveform"))
        } else if !(self.dt > 0.0) {
            Err(domain(format!("sample period must be positive, got {}", self.dt)))
        } else {
            Ok(())
        }
    }

    /// Trapezoidal integral of `f(k, |r_k|)` over the record.
    fn integrate(&self, f: impl Fn(usize, f64) -> f64) -> f64 {
        let n = self.samples.len();
        if n < 2 {
            return 0.0;
        }
        let mut acc = 0.0;
        for (k, s) in self.samples.iter().enumerate() {
            let v = f(k, s.abs());
            acc += if k == 0 || k == n - 1 { 0.5 * v } else { v };
        }
        acc * self.dt
    }
}

/// The six per-link waveform features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    /// Maximum amplitude.
    pub r_max: f64,
    /// Mean excess delay, s.
    pub tau_m: f64,
    /// Delay spread as a second central moment, s^2.
    pub tau_ds: f64,
    /// Energy, amplitude^2 s.
    pub energy: f64,
    /// Rise time, s.
    pub rise_time: f64,
    pub kurtosis: f64,
}

impl FeatureVector {
    pub const NAMES: [&'static str; 6] = ["r_max", "tau_m", "tau_ds", "energy", "rise_time", "kurtosis"];

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.r_max,
            self.tau_m,
            self.tau_ds,
            self.energy,
            self.rise_time,
            self.kurtosis,
        ]
    }

    pub fn from_array(x: [f64; 6]) -> Self {
        Self {
            r_max: x[0],
            tau_m: x[1],
            tau_ds: x[2],
            energy: x[3],
            rise_time: x[4],
            kurtosis: x[5],
        }
    }
}

/// Features with their linear distance dependence removed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceFreeFeatures {
    /// `r_max + r_max^m d`.
    pub r_max0: f64,
    /// `tau_m / d`, s/m.
    pub tau_m_slope: f64,
    /// `(tau_ds - tau_ds^0) / d`, s^2/m.
    pub tau_ds_slope: f64,
}

/// Constants of the linear feature-vs-distance models.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureModelParams {
    /// Decrease of `r_max` per meter, non-negative.
    pub r_max_slope: f64,
    /// Delay spread at zero distance, s^2.
    pub tau_ds_offset: f64,
}

/// Ordinary least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
    /// Residual standard deviation with `n - 2` degrees of freedom.
    pub residual_sd: f64,
    pub n: usize,
}

impl LineFit {
    pub fn fit(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(domain(format!("length mismatch {} vs {}", x.len(), y.len())));
        }
        let n = x.len();
        if n < 2 {
            return Err(domain("line fit needs at least two points"));
        }
        let nf = n as f64;
        let mx = x.iter().sum::<f64>() / nf;
        let my = y.iter().sum::<f64>() / nf;
        let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
        if !(sxx > 0.0) {
            return Err(domain("line fit needs at least two distinct abscissae"));
        }
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let sse: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let r = b - intercept - slope * a;
                r * r
            })
            .sum();
        let residual_sd = if n > 2 { (sse / (nf - 2.0)).sqrt() } else { 0.0 };
        let slope_stderr = residual_sd / sxx.sqrt();
        let intercept_stderr = residual_sd * (1.0 / nf + mx * mx / sxx).sqrt();
        Ok(Self {
            slope,
            intercept,
            slope_stderr,
            intercept_stderr,
            residual_sd,
            n,
        })
    }
}

/// Result of [`fit_feature_models`]: the model constants plus the two
/// underlying regressions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureModelFit {
    pub params: FeatureModelParams,
    pub r_max_line: LineFit,
    pub tau_ds_line: LineFit,
}

pub fn max_amplitude(s: &Signal) -> Result<f64> {
    s.non_empty()?;
    Ok(s.samples.iter().fold(0.0, |m, v| m.max(v.abs())))
}

pub fn energy(s: &Signal) -> Result<f64> {
    s.non_empty()?;
    Ok(s.integrate(|_, a| a * a))
}

fn positive_energy(s: &Signal) -> Result<f64> {
    let e = energy(s)?;
    if e > 0.0 {
        Ok(e)
    } else {
        Err(domain("zero-energy waveform"))
    }
}

/// Energy-weighted mean arrival time, s.
pub fn mean_excess_delay(s: &Signal) -> Result<f64> {
    let e = positive_energy(s)?;
    // Integrate relative to t0 so large offsets do not cost precision.
    let rel = s.integrate(|k, a| k as f64 * s.dt * a * a) / e;
    Ok(s.t0 + rel)
}

/// Energy-weighted second central moment of arrival time, s^2.
pub fn delay_spread(s: &Signal) -> Result<f64> {
    let e = positive_energy(s)?;
    let rel_mean = s.integrate(|k, a| k as f64 * s.dt * a * a) / e;
    let var = s.integrate(|k, a| {
        let u = k as f64 * s.dt - rel_mean;
        u * u * a * a
    }) / e;
    Ok(var.max(0.0))
}

/// First time `|r|` exceeds `fraction * max|r|`, linearly interpolated
/// between the bracketing samples.
pub(crate) fn first_crossing(s: &Signal, peak: f64, fraction: f64) -> Option<f64> {
    let level = fraction * peak;
    let k = s.samples.iter().position(|v| v.abs() > level)?;
    if k == 0 {
        return Some(s.t0);
    }
    let a = s.samples[k - 1].abs();
    let b = s.samples[k].abs();
    let frac = ((level - a) / (b - a)).clamp(0.0, 1.0);
    Some(s.time(k - 1) + frac * s.dt)
}

/// Time between the first 10% and first 90% crossings of `|r|`, s.
pub fn rise_time(s: &Signal) -> Result<f64> {
    let peak = max_amplitude(s)?;
    if !(peak > 0.0) {
        return Err(domain("rise time of an all-zero waveform"));
    }
    let lo = first_crossing(s, peak, 0.1).expect("peak exceeds 10% of itself");
    let hi = first_crossing(s, peak, 0.9).expect("peak exceeds 90% of itself");
    Ok((hi - lo).max(0.0))
}

/// Fourth standardized moment of `|r(t)|` over the window `[start, end]`
/// (seconds, inclusive), or over the whole record when `window` is `None`.
pub fn kurtosis(s: &Signal, window: Option<(f64, f64)>) -> Result<f64> {
    s.non_empty()?;
    let view = match window {
        None => *s,
        Some((start, end)) => {
            if !(end > start) {
                return Err(domain(format!("empty kurtosis window [{start}, {end}]")));
            }
            let first = ((start - s.t0) / s.dt).ceil().max(0.0) as usize;
            let last = (((end - s.t0) / s.dt).floor() as isize).min(s.samples.len() as isize - 1);
            if last < first as isize + 1 {
                return Err(domain("kurtosis window covers fewer than two samples"));
            }
            Signal::new(&s.samples[first..=last as usize], s.dt, s.time(first))
        }
    };
    let n = view.samples.len();
    if n < 2 {
        return Err(Error::DegenerateSignal(
            "kurtosis needs at least two samples".into(),
        ));
    }
    let span = (n - 1) as f64 * view.dt;
    let mu = view.integrate(|_, a| a) / span;
    let var = view.integrate(|_, a| (a - mu).powi(2)) / span;
    let peak = max_amplitude(&view)?;
    if !(var > 1e-24 * peak * peak) {
        return Err(Error::DegenerateSignal(
            "constant |r| over the kurtosis window".into(),
        ));
    }
    let m4 = view.integrate(|_, a| (a - mu).powi(4)) / span;
    Ok(m4 / (var * var))
}

/// All six features, kurtosis over the full record.
pub fn extract_all(s: &Signal) -> Result<FeatureVector> {
    Ok(FeatureVector {
        r_max: max_amplitude(s)?,
        tau_m: mean_excess_delay(s)?,
        tau_ds: delay_spread(s)?,
        energy: energy(s)?,
        rise_time: rise_time(s)?,
        kurtosis: kurtosis(s, None)?,
    })
}

/// Pearson correlation coefficient.
pub fn correlation_coefficient(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(domain(format!("length mismatch {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(domain("correlation needs at least two samples"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x - ma, y - mb);
        sab += u * v;
        saa += u * u;
        sbb += v * v;
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return Err(domain("correlation of a constant sequence"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Least-squares fits of `r_max` and `tau_ds` against distance.
pub fn fit_feature_models(features: &[FeatureVector], distances: &[f64]) -> Result<FeatureModelFit> {
    if features.len() != distances.len() {
        return Err(domain(format!(
            "{} feature vectors but {} distances",
            features.len(),
            distances.len()
        )));
    }
    let r_max: Vec<f64> = features.iter().map(|f| f.r_max).collect();
    let tau_ds: Vec<f64> = features.iter().map(|f| f.tau_ds).collect();
    let r_max_line = LineFit::fit(distances, &r_max)?;
    let tau_ds_line = LineFit::fit(distances, &tau_ds)?;
    if r_max_line.slope > 0.0 {
        log::warn!(
            "r_max grows with distance (slope {:.3e}); clamping r_max^m to 0",
            r_max_line.slope
        );
    }
    Ok(FeatureModelFit {
        params: FeatureModelParams {
            r_max_slope: (-r_max_line.slope).max(0.0),
            tau_ds_offset: tau_ds_line.intercept,
        },
        r_max_line,
        tau_ds_line,
    })
}

pub fn to_distance_free(
    x: &FeatureVector,
    d: f64,
    params: &FeatureModelParams,
) -> Result<DistanceFreeFeatures> {
    if !(d > 0.0) {
        return Err(domain(format!("distance must be positive, got {d}")));
    }
    Ok(DistanceFreeFeatures {
        r_max0: x.r_max + params.r_max_slope * d,
        tau_m_slope: x.tau_m / d,
        tau_ds_slope: (x.tau_ds - params.tau_ds_offset) / d,
    })
}
