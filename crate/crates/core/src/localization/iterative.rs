//! Link-by-link bias correction.
//!
//! Starting from `b = 0`, each round forms `d = c0 (tau - b)`, slices the
//! model at the features seen from that distance, weighs the two channel
//! states by `p_state f_state(x)` and updates `b` from the NLOS conditional
//! mean. The residual `tau - d/c0` equals `b` by construction and carries no
//! information, so it is left out of the state weights.

use crate::density::DensityModel;
use crate::error::{domain, Result};
use crate::ranging::{NoiseModel, RangingObservation};
use crate::SPEED_OF_LIGHT;

use super::MIN_DISTANCE;

/// How the state posterior turns into a bias estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionRule {
    /// Pick the more probable state: LOS gives `b = 0`, NLOS gives
    /// `E[b | x, NLOS]`. LOS wins ties.
    Hard,
    /// `P(NLOS | x) E[b | x, NLOS]`.
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterativeOptions {
    pub max_iters: usize,
    /// Stop once the bias estimate moves less than this, s.
    pub tol: f64,
    pub rule: DecisionRule,
}

impl Default for IterativeOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-12,
            rule: DecisionRule::Hard,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasCorrection {
    /// `tau - b`.
    pub corrected_tau: f64,
    pub bias: f64,
    pub p_los_posterior: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn iterative_bias_correct(
    obs: &RangingObservation,
    model: &DensityModel,
    noise: &NoiseModel,
    opts: &IterativeOptions,
) -> Result<BiasCorrection> {
    noise.validate()?;
    if opts.max_iters == 0 {
        return Err(domain("max_iters must be at least 1"));
    }
    if !(opts.tol >= 0.0) {
        return Err(domain(format!("tolerance must be non-negative, got {}", opts.tol)));
    }
    let fallback_mean = model.nlos().bias_mean();
    let mut b = 0.0;
    let mut post = model.p_los();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let d = (SPEED_OF_LIGHT * (obs.tau - b)).max(MIN_DISTANCE);
        let kernel = model.kernel(&model.model_features(&obs.features, d)?)?;
        let (wl, wn) = kernel.state_weights();
        post = if wl + wn > 0.0 { wl / (wl + wn) } else { model.p_los() };
        let nlos_mean = kernel.nlos_conditional_mean().unwrap_or(fallback_mean);
        let next = match opts.rule {
            DecisionRule::Hard if post >= 0.5 => 0.0,
            DecisionRule::Hard => nlos_mean,
            DecisionRule::Soft => (1.0 - post) * nlos_mean,
        };
        let delta = (next - b).abs();
        b = next;
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(BiasCorrection {
        corrected_tau: obs.tau - b,
        bias: b,
        p_los_posterior: post,
        iterations,
        converged,
    })
}
