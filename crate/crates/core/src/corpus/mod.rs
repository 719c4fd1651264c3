//! Synthetic LOS/NLOS waveform corpus with known ground truth.
//!
//! Each record is a sampled multipath impulse response: a direct path at
//! `d/c0 + b` followed by Saleh-Valenzuela style clusters of rays with
//! double-exponential power decay, plus white Gaussian noise. NLOS records
//! draw a bias `b` from a truncated shifted exponential on
//! `[t_wall/c0, bias_max_factor * t_wall/c0]`. Decay times and direct-path
//! attenuation are affine in the relative excess bias and the wall
//! penetration loss is exponential in it, so the delay spread grows and the
//! peak amplitude shrinks with `b`.

mod generator;
mod io;

use std::fmt;
use std::str::FromStr;

pub use generator::{draw_bias, generate_corpus, generate_waveform, record_rng};
pub use io::{load_corpus, read_corpus, save_corpus, write_corpus, CORPUS_MAGIC, CORPUS_VERSION};

use crate::config::KvConfig;
use crate::error::{domain, Error, Result};
use crate::features::Signal;
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChannelState {
    Los,
    Nlos,
}

impl ChannelState {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelState::Los => "LOS",
            ChannelState::Nlos => "NLOS",
        }
    }
}

impl fmt::Display for ChannelState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelState {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LOS" => Ok(ChannelState::Los),
            "NLOS" => Ok(ChannelState::Nlos),
            other => Err(domain(format!("unknown channel state `{other}`"))),
        }
    }
}

/// Parameters of the synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub n_los: usize,
    pub n_nlos: usize,
    /// Hz.
    pub sample_rate: f64,
    /// Record length, s.
    pub duration: f64,
    /// Time of the first sample relative to transmission, s.
    pub t0: f64,
    /// m.
    pub wall_thickness: f64,
    /// m.
    pub d_min: f64,
    /// m.
    pub d_max: f64,
    /// Amplitude falls as `d^(-beta/2)`.
    pub path_loss_exponent: f64,
    pub seed: u64,
    /// Mean of the exponential NLOS excess bias before truncation, s.
    pub bias_mean_excess: f64,
    /// Upper bias bound as a multiple of `t_wall/c0`.
    pub bias_max_factor: f64,
    /// 1/s.
    pub cluster_arrival_rate: f64,
    /// 1/s.
    pub ray_arrival_rate: f64,
    /// Cluster power decay constant, s.
    pub cluster_decay: f64,
    /// Ray power decay constant, s.
    pub ray_decay: f64,
    /// Cluster decay grows as `1 + factor * (b - b_wall)/b_wall` under NLOS.
    pub nlos_decay_factor: f64,
    /// Same for the ray decay.
    pub nlos_ray_decay_factor: f64,
    /// Delay of the first cluster after the direct path, s.
    pub first_cluster_delay: f64,
    /// Multipath amplitude relative to the unobstructed direct path.
    pub los_multipath_gain: f64,
    pub nlos_multipath_gain: f64,
    /// Direct-path amplitude through the wall at minimum bias.
    pub nlos_direct_gain: f64,
    /// Extra direct-path attenuation per unit relative excess bias.
    pub direct_attenuation_slope: f64,
    /// Lower clip of the direct-path attenuation factor.
    pub direct_attenuation_min: f64,
    /// Every NLOS path is scaled by `exp(-penetration_slope * (b - b_wall)/b_wall)`.
    pub penetration_slope: f64,
    /// Rayleigh-distributed ray amplitudes when true, unit magnitude otherwise.
    pub rayleigh_rays: bool,
    /// Standard deviation of the additive white Gaussian noise.
    pub noise_floor: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_los: 105,
            n_nlos: 174,
            sample_rate: 24.2e9,
            duration: 200e-9,
            t0: 0.0,
            wall_thickness: 0.32,
            d_min: 1.0,
            d_max: 5.0,
            path_loss_exponent: 2.0,
            seed: 2010,
            bias_mean_excess: 1.0e-9,
            bias_max_factor: 5.0,
            cluster_arrival_rate: 1.0 / 12e-9,
            ray_arrival_rate: 1.0 / 0.7e-9,
            cluster_decay: 8e-9,
            ray_decay: 1.8e-9,
            nlos_decay_factor: 1.0,
            nlos_ray_decay_factor: 0.0,
            first_cluster_delay: 1.0e-9,
            los_multipath_gain: 0.4,
            nlos_multipath_gain: 1.0,
            nlos_direct_gain: 1.4,
            direct_attenuation_slope: 0.0,
            direct_attenuation_min: 0.2,
            penetration_slope: 1.0,
            rayleigh_rays: true,
            noise_floor: 1e-4,
        }
    }
}

impl CorpusConfig {
    /// `t_wall / c0`, the smallest possible NLOS bias.
    pub fn wall_delay(&self) -> f64 {
        self.wall_thickness / SPEED_OF_LIGHT
    }

    pub fn bias_max(&self) -> f64 {
        self.bias_max_factor * self.wall_delay()
    }

    pub fn n_samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sample_rate", self.sample_rate),
            ("duration", self.duration),
            ("wall_thickness", self.wall_thickness),
            ("d_min", self.d_min),
            ("bias_mean_excess", self.bias_mean_excess),
            ("cluster_arrival_rate", self.cluster_arrival_rate),
            ("ray_arrival_rate", self.ray_arrival_rate),
            ("cluster_decay", self.cluster_decay),
            ("ray_decay", self.ray_decay),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.d_max > self.d_min) || !self.d_max.is_finite() {
            return Err(domain(format!(
                "need 0 < d_min < d_max, got [{}, {}]",
                self.d_min, self.d_max
            )));
        }
        if !(self.bias_max_factor > 1.0) {
            return Err(domain("bias_max_factor must exceed 1"));
        }
        if self.path_loss_exponent < 0.0 {
            return Err(domain("path_loss_exponent must be non-negative"));
        }
        let non_negative = [
            ("t0", self.t0),
            ("noise_floor", self.noise_floor),
            ("first_cluster_delay", self.first_cluster_delay),
            ("los_multipath_gain", self.los_multipath_gain),
            ("nlos_multipath_gain", self.nlos_multipath_gain),
            ("nlos_direct_gain", self.nlos_direct_gain),
            ("nlos_decay_factor", self.nlos_decay_factor),
            ("nlos_ray_decay_factor", self.nlos_ray_decay_factor),
            ("direct_attenuation_slope", self.direct_attenuation_slope),
            ("direct_attenuation_min", self.direct_attenuation_min),
            ("penetration_slope", self.penetration_slope),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(domain(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.n_samples() == 0 {
            return Err(domain("duration * sample_rate rounds to zero samples"));
        }
        Ok(())
    }

    /// Reads the fields present in `cfg`, leaving defaults for the rest.
    pub fn from_kv(cfg: &mut KvConfig) -> Result<Self> {
        let mut c = CorpusConfig::default();
        cfg.take_into("n_los", &mut c.n_los)?;
        cfg.take_into("n_nlos", &mut c.n_nlos)?;
        cfg.take_into("sample_rate", &mut c.sample_rate)?;
        cfg.take_into("duration", &mut c.duration)?;
        cfg.take_into("t0", &mut c.t0)?;
        cfg.take_into("wall_thickness", &mut c.wall_thickness)?;
        cfg.take_into("d_min", &mut c.d_min)?;
        cfg.take_into("d_max", &mut c.d_max)?;
        cfg.take_into("path_loss_exponent", &mut c.path_loss_exponent)?;
        cfg.take_into("seed", &mut c.seed)?;
        cfg.take_into("bias_mean_excess", &mut c.bias_mean_excess)?;
        cfg.take_into("bias_max_factor", &mut c.bias_max_factor)?;
        cfg.take_into("cluster_arrival_rate", &mut c.cluster_arrival_rate)?;
        cfg.take_into("ray_arrival_rate", &mut c.ray_arrival_rate)?;
        cfg.take_into("cluster_decay", &mut c.cluster_decay)?;
        cfg.take_into("ray_decay", &mut c.ray_decay)?;
        cfg.take_into("nlos_decay_factor", &mut c.nlos_decay_factor)?;
        cfg.take_into("nlos_ray_decay_factor", &mut c.nlos_ray_decay_factor)?;
        cfg.take_into("first_cluster_delay", &mut c.first_cluster_delay)?;
        cfg.take_into("los_multipath_gain", &mut c.los_multipath_gain)?;
        cfg.take_into("nlos_multipath_gain", &mut c.nlos_multipath_gain)?;
        cfg.take_into("nlos_direct_gain", &mut c.nlos_direct_gain)?;
        cfg.take_into("direct_attenuation_slope", &mut c.direct_attenuation_slope)?;
        cfg.take_into("direct_attenuation_min", &mut c.direct_attenuation_min)?;
        cfg.take_into("penetration_slope", &mut c.penetration_slope)?;
        cfg.take_into("rayleigh_rays", &mut c.rayleigh_rays)?;
        cfg.take_into("noise_floor", &mut c.noise_floor)?;
        c.validate()?;
        Ok(c)
    }

    /// `key=value` lines for every field, in declaration order. Floats use
    /// Rust's shortest round-trip formatting.
    pub fn to_kv_lines(&self) -> Vec<String> {
        vec![
            format!("n_los={}", self.n_los),
            format!("n_nlos={}", self.n_nlos),
            format!("sample_rate={:?}", self.sample_rate),
            format!("duration={:?}", self.duration),
            format!("t0={:?}", self.t0),
            format!("wall_thickness={:?}", self.wall_thickness),
            format!("d_min={:?}", self.d_min),
            format!("d_max={:?}", self.d_max),
            format!("path_loss_exponent={:?}", self.path_loss_exponent),
            format!("seed={}", self.seed),
            format!("bias_mean_excess={:?}", self.bias_mean_excess),
            format!("bias_max_factor={:?}", self.bias_max_factor),
            format!("cluster_arrival_rate={:?}", self.cluster_arrival_rate),
            format!("ray_arrival_rate={:?}", self.ray_arrival_rate),
            format!("cluster_decay={:?}", self.cluster_decay),
            format!("ray_decay={:?}", self.ray_decay),
            format!("nlos_decay_factor={:?}", self.nlos_decay_factor),
            format!("nlos_ray_decay_factor={:?}", self.nlos_ray_decay_factor),
            format!("first_cluster_delay={:?}", self.first_cluster_delay),
            format!("los_multipath_gain={:?}", self.los_multipath_gain),
            format!("nlos_multipath_gain={:?}", self.nlos_multipath_gain),
            format!("nlos_direct_gain={:?}", self.nlos_direct_gain),
            format!("direct_attenuation_slope={:?}", self.direct_attenuation_slope),
            format!("direct_attenuation_min={:?}", self.direct_attenuation_min),
            format!("penetration_slope={:?}", self.penetration_slope),
            format!("rayleigh_rays={}", self.rayleigh_rays),
            format!("noise_floor={:?}", self.noise_floor),
        ]
    }
}

/// One sampled received waveform with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformRecord {
    pub samples: Vec<f64>,
    /// Hz.
    pub sample_rate: f64,
    /// Time of `samples[0]` relative to the transmission instant, s.
    pub t0: f64,
    /// True transmitter-receiver distance, m.
    pub distance: f64,
    /// True NLOS bias, s. Zero for LOS records.
    pub bias: f64,
    pub state: ChannelState,
}

impl WaveformRecord {
    pub fn signal(&self) -> Signal<'_> {
        Signal::new(&self.samples, 1.0 / self.sample_rate, self.t0)
    }

    /// Geometric time of flight `d / c0`.
    pub fn geometric_toa(&self) -> f64 {
        self.distance / SPEED_OF_LIGHT
    }

    /// Arrival time of the direct path, `d/c0 + b`.
    pub fn direct_path_toa(&self) -> f64 {
        self.geometric_toa() + self.bias
    }

    /// Sample index nearest the direct-path arrival.
    pub fn direct_path_index(&self) -> usize {
        ((self.direct_path_toa() - self.t0) * self.sample_rate).round() as usize
    }
}
