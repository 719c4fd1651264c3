use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;

use super::{ChannelState, CorpusConfig, WaveformRecord};
use crate::error::{domain, Result};
use crate::SPEED_OF_LIGHT;

/// Independent rng stream for record `index` of a corpus seeded with `seed`.
pub fn record_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws the TOA bias for a link in `state`.
///
/// LOS links have zero bias. NLOS biases follow `b_wall + E` where `E` is
/// exponential with mean `bias_mean_excess`, truncated so that
/// `b <= bias_max`; sampled by inverting the truncated CDF.
pub fn draw_bias<R: Rng + ?Sized>(config: &CorpusConfig, state: ChannelState, rng: &mut R) -> f64 {
    match state {
        ChannelState::Los => 0.0,
        ChannelState::Nlos => {
            let lo = config.wall_delay();
            let span = config.bias_max() - lo;
            let m = config.bias_mean_excess;
            let u: f64 = rng.random();
            let mass = -(-span / m).exp_m1();
            let excess = -m * (-u * mass).ln_1p();
            (lo + excess).clamp(lo, config.bias_max())
        }
    }
}

/// Generates one waveform at distance `d` in `state`.
pub fn generate_waveform<R: Rng + ?Sized>(
    config: &CorpusConfig,
    state: ChannelState,
    d: f64,
    rng: &mut R,
) -> Result<WaveformRecord> {
    if !(d >= config.d_min && d <= config.d_max) {
        return Err(domain(format!(
            "distance {d} m outside [{}, {}]",
            config.d_min, config.d_max
        )));
    }
    let bias = draw_bias(config, state, rng);
    let n = config.n_samples();
    let fs = config.sample_rate;
    let t_end = config.t0 + n as f64 / fs;
    let mut samples = vec![0.0; n];

    let path_amp = d.powf(-0.5 * config.path_loss_exponent);
    let b_wall = config.wall_delay();
    let (direct, multipath_gain, cluster_decay, ray_decay) = match state {
        ChannelState::Los => (
            path_amp,
            config.los_multipath_gain * path_amp,
            config.cluster_decay,
            config.ray_decay,
        ),
        ChannelState::Nlos => {
            let excess = (bias - b_wall) / b_wall;
            let penetration = (-config.penetration_slope * excess).exp();
            let attenuation = (1.0 - config.direct_attenuation_slope * excess)
                .max(config.direct_attenuation_min);
            (
                path_amp * config.nlos_direct_gain * attenuation * penetration,
                config.nlos_multipath_gain * path_amp * penetration,
                config.cluster_decay * (1.0 + config.nlos_decay_factor * excess),
                config.ray_decay * (1.0 + config.nlos_ray_decay_factor * excess),
            )
        }
    };

    let place = |samples: &mut [f64], t: f64, a: f64| {
        let k = ((t - config.t0) * fs).round();
        if k >= 0.0 && (k as usize) < samples.len() {
            samples[k as usize] += a;
        }
    };

    let t_direct = d / SPEED_OF_LIGHT + bias;
    place(&mut samples, t_direct, direct);

    let cluster_gap = Exp::new(config.cluster_arrival_rate).expect("validated rate");
    let ray_gap = Exp::new(config.ray_arrival_rate).expect("validated rate");
    let mut cluster_t = t_direct + config.first_cluster_delay;
    while cluster_t < t_end && cluster_t - t_direct <= CLUSTER_SPAN * cluster_decay {
        let cluster_gain = (-(cluster_t - t_direct) / (2.0 * cluster_decay)).exp();
        let mut ray_t = 0.0;
        while cluster_t + ray_t < t_end && ray_t <= RAY_SPAN * ray_decay {
            let mean = multipath_gain * cluster_gain * (-ray_t / (2.0 * ray_decay)).exp();
            let magnitude = if config.rayleigh_rays {
                rayleigh(rng)
            } else {
                1.0
            };
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            place(&mut samples, cluster_t + ray_t, sign * mean * magnitude);
            ray_t += ray_gap.sample(rng);
        }
        cluster_t += cluster_gap.sample(rng);
    }

    if config.noise_floor > 0.0 {
        for s in samples.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *s += config.noise_floor * z;
        }
    }

    Ok(WaveformRecord {
        samples,
        sample_rate: fs,
        t0: config.t0,
        distance: d,
        bias,
        state,
    })
}

/// Generates `n_los` LOS records followed by `n_nlos` NLOS records.
///
/// Record `i` uses its own rng stream derived from `(seed, i)`, so the corpus
/// is a pure function of the config and generation parallelizes freely.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Vec<WaveformRecord>> {
    config.validate()?;
    let total = config.n_los + config.n_nlos;
    (0..total)
        .into_par_iter()
        .map(|i| {
            let state = if i < config.n_los {
                ChannelState::Los
            } else {
                ChannelState::Nlos
            };
            let mut rng = record_rng(config.seed, i as u64);
            let d = rng.random_range(config.d_min..=config.d_max);
            generate_waveform(config, state, d, &mut rng)
        })
        .collect()
}

// Clusters and rays are dropped once their mean power is e^-8 resp. e^-6 below the start.
const CLUSTER_SPAN: f64 = 8.0;
const RAY_SPAN: f64 = 6.0;

/// Rayleigh variate with unit mean square.
fn rayleigh<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    (-(1.0 - u).ln()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ChannelState::{Los, Nlos};

    fn quiet() -> CorpusConfig {
        CorpusConfig {
            noise_floor: 0.0,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn los_bias_is_exactly_zero() {
        let cfg = CorpusConfig::default();
        let mut rng = record_rng(1, 0);
        for _ in 0..100 {
            assert_eq!(draw_bias(&cfg, Los, &mut rng), 0.0);
        }
    }

    #[test]
    fn nlos_bias_support_and_tail() {
        let cfg = CorpusConfig::default();
        let mut rng = record_rng(7, 3);
        let lo = cfg.wall_delay();
        let hi = cfg.bias_max();
        let draws: Vec<f64> = (0..100_000).map(|_| draw_bias(&cfg, Nlos, &mut rng)).collect();
        let min = draws.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= lo, "min {min} below wall delay {lo}");
        assert!(draws.iter().all(|&b| b <= hi));
        assert!((lo - 1.0674e-9).abs() < 1e-13);

        // The mode is the first bin; counts must decrease beyond it within
        // 4 sigma of Poisson noise.
        let bins = 20;
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &b in &draws {
            counts[(((b - lo) / width) as usize).min(bins - 1)] += 1;
        }
        for w in counts.windows(2) {
            let slack = 4.0 * ((w[0] + w[1]) as f64).sqrt();
            assert!(
                (w[1] as f64) <= w[0] as f64 + slack,
                "tail not decreasing: {counts:?}"
            );
        }
        assert!(counts[0] > counts[bins - 1] * 10);
    }

    #[test]
    fn out_of_range_distance_is_rejected() {
        let cfg = CorpusConfig::default();
        let mut rng = record_rng(0, 0);
        assert!(generate_waveform(&cfg, Los, 0.5, &mut rng).is_err());
        assert!(generate_waveform(&cfg, Los, 5.5, &mut rng).is_err());
    }

    #[test]
    fn los_direct_path_lands_on_expected_sample() {
        let cfg = quiet();
        let mut rng = record_rng(3, 9);
        let rec = generate_waveform(&cfg, Los, 3.0, &mut rng).unwrap();
        let expected = ((3.0 / SPEED_OF_LIGHT - cfg.t0) * cfg.sample_rate).round() as usize;
        assert_eq!(rec.direct_path_index(), expected);
        let first = rec.samples.iter().position(|&s| s != 0.0).unwrap();
        assert_eq!(first, expected);
        let t_first = cfg.t0 + first as f64 / cfg.sample_rate;
        assert!((t_first - 3.0 / SPEED_OF_LIGHT).abs() <= 0.5 / cfg.sample_rate);
        assert_eq!(rec.bias, 0.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = CorpusConfig {
            n_los: 4,
            n_nlos: 5,
            ..CorpusConfig::default()
        };
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|r| r.state == Los).count(), 4);
        assert_eq!(a.iter().filter(|r| r.state == Nlos).count(), 5);
    }

    #[test]
    fn nlos_only_corpus() {
        let cfg = CorpusConfig {
            n_los: 0,
            n_nlos: 6,
            ..CorpusConfig::default()
        };
        let c = generate_corpus(&cfg).unwrap();
        assert_eq!(c.len(), 6);
        assert!(c.iter().all(|r| r.state == Nlos && r.bias >= cfg.wall_delay()));
    }
}
