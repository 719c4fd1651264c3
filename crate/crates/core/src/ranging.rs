//! TOA observation model `tau = d/c0 + b + w` with `w ~ N(0, gamma sigma_n^2 d^beta)`,
//! and a leading-edge threshold TOA estimator.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::KvConfig;
use crate::corpus::{ChannelState, WaveformRecord};
use crate::error::{domain, Result};
use crate::features::{first_crossing, max_amplitude, FeatureVector, Signal};
use crate::{Point2, SPEED_OF_LIGHT};

/// Distance-dependent TOA noise law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub gamma: f64,
    /// s^2 m^-beta.
    pub sigma_n2: f64,
    pub beta: f64,
}

impl Default for NoiseModel {
    /// `sigma_w(1 m) = 0.3 ns`, variance growing with `d^2`.
    fn default() -> Self {
        Self {
            gamma: 1.0,
            sigma_n2: 9e-20,
            beta: 2.0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(domain(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.sigma_n2 > 0.0 && self.sigma_n2.is_finite()) {
            return Err(domain(format!("sigma_n2 must be positive, got {}", self.sigma_n2)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(domain(format!("beta must be non-negative, got {}", self.beta)));
        }
        Ok(())
    }

    /// Standard deviation of the TOA noise at distance `d`, s.
    pub fn noise_stddev(&self, d: f64) -> Result<f64> {
        if !(d > 0.0) {
            return Err(domain(format!("distance must be positive, got {d}")));
        }
        Ok(self.stddev_unchecked(d))
    }

    pub(crate) fn stddev_unchecked(&self, d: f64) -> f64 {
        (self.gamma * self.sigma_n2 * d.powf(self.beta)).sqrt()
    }

    /// Reads `gamma`, `sigma_n2` and `beta` from `cfg`, defaulting the rest.
    pub fn from_kv(cfg: &mut KvConfig) -> Result<Self> {
        let mut m = NoiseModel::default();
        cfg.take_into("gamma", &mut m.gamma)?;
        cfg.take_into("sigma_n2", &mut m.sigma_n2)?;
        cfg.take_into("beta", &mut m.beta)?;
        m.validate()?;
        Ok(m)
    }
}

/// Ground truth of a simulated link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkTruth {
    pub distance: f64,
    pub bias: f64,
    pub state: ChannelState,
}

/// One anchor's TOA measurement and waveform features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangingObservation {
    /// s.
    pub tau: f64,
    pub features: FeatureVector,
    pub anchor: Point2,
    pub truth: Option<LinkTruth>,
}

/// Draws `d/c0 + b + w` for the record's ground truth.
pub fn simulate_toa<R: Rng + ?Sized>(w: &WaveformRecord, model: &NoiseModel, rng: &mut R) -> f64 {
    simulate_link_toa(w.distance, w.bias, model, rng)
}

/// Draws `d/c0 + b + w` for an explicit distance and bias.
pub fn simulate_link_toa<R: Rng + ?Sized>(distance: f64, bias: f64, model: &NoiseModel, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    distance / SPEED_OF_LIGHT + bias + model.stddev_unchecked(distance) * z
}

/// Earliest time `|r|` exceeds `threshold_fraction * max|r|`, interpolated.
pub fn threshold_toa(s: &Signal, threshold_fraction: f64) -> Result<f64> {
    if !(threshold_fraction > 0.0 && threshold_fraction < 1.0) {
        return Err(domain(format!(
            "threshold fraction must lie in (0, 1), got {threshold_fraction}"
        )));
    }
    let peak = max_amplitude(s)?;
    if !(peak > 0.0) {
        return Err(domain("threshold TOA of an all-zero waveform"));
    }
    Ok(first_crossing(s, peak, threshold_fraction).expect("peak exceeds a fraction of itself"))
}

pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.1;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, record_rng, CorpusConfig};

    fn record(d: f64, b: f64) -> WaveformRecord {
        WaveformRecord {
            samples: vec![0.0, 1.0],
            sample_rate: 1e9,
            t0: 0.0,
            distance: d,
            bias: b,
            state: if b == 0.0 { ChannelState::Los } else { ChannelState::Nlos },
        }
    }

    #[test]
    fn stddev_examples() {
        let m = NoiseModel {
            gamma: 1.0,
            sigma_n2: 1e-20,
            beta: 2.0,
        };
        assert!((m.noise_stddev(2.0).unwrap() - 2e-10).abs() < 1e-24);
        assert!((m.noise_stddev(4.0).unwrap() - 2.0 * m.noise_stddev(2.0).unwrap()).abs() < 1e-24);
        let flat = NoiseModel { beta: 0.0, ..m };
        assert_eq!(flat.noise_stddev(1.0).unwrap(), flat.noise_stddev(7.0).unwrap());
        assert!(m.noise_stddev(0.0).is_err());
        assert!((NoiseModel::default().noise_stddev(1.0).unwrap() - 0.3e-9).abs() < 1e-20);
    }

    #[test]
    fn noiseless_toa_is_exact() {
        let m = NoiseModel {
            sigma_n2: 1e-300,
            ..NoiseModel::default()
        };
        let mut rng = record_rng(0, 0);
        let t = simulate_toa(&record(3.0, 0.0), &m, &mut rng);
        assert!((t - 1.000692286e-8).abs() < 1e-17);
        let t = simulate_toa(&record(3.0, 2e-9), &m, &mut rng);
        assert!((t - (3.0 / SPEED_OF_LIGHT + 2e-9)).abs() < 1e-20);
    }

    #[test]
    fn toa_mean_and_variance() {
        let m = NoiseModel::default();
        let rec = record(2.5, 1.3e-9);
        let sigma = m.noise_stddev(2.5).unwrap();
        let truth = rec.direct_path_toa();
        let mut rng = record_rng(42, 1);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| simulate_toa(&rec, &m, &mut rng) - truth).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 * sigma / (n as f64).sqrt());
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // 99% chi-square interval, normal approximation for large n.
        let half = 2.576 * (2.0 / (n - 1) as f64).sqrt();
        let ratio = var / (sigma * sigma);
        assert!((1.0 - half..=1.0 + half).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn threshold_toa_examples() {
        let v = [0.0, 0.0, 0.0, 2.0, 1.0, 0.5];
        let s = Signal::new(&v, 1e-9, 5e-9);
        let t = threshold_toa(&s, 0.1).unwrap();
        assert!((t - 8e-9).abs() <= 1e-9);
        let near_one = threshold_toa(&s, 1.0 - 1e-12).unwrap();
        assert!((near_one - 8e-9).abs() < 1e-18);
        let scaled: Vec<f64> = v.iter().map(|x| 7.5 * x).collect();
        assert_eq!(threshold_toa(&Signal::new(&scaled, 1e-9, 5e-9), 0.1).unwrap(), t);
        assert!(threshold_toa(&s, 0.0).is_err());
        assert!(threshold_toa(&Signal::new(&[0.0; 4], 1e-9, 0.0), 0.1).is_err());
    }

    #[test]
    fn nlos_threshold_toa_not_before_geometric() {
        let cfg = CorpusConfig {
            n_los: 0,
            n_nlos: 40,
            noise_floor: 0.0,
            ..CorpusConfig::default()
        };
        for rec in generate_corpus(&cfg).unwrap() {
            let t = threshold_toa(&rec.signal(), DEFAULT_THRESHOLD_FRACTION).unwrap();
            assert!(t - rec.geometric_toa() >= 0.0);
        }
    }
}
