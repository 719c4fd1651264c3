//! Joint densities of NLOS bias and waveform features per channel state, and
//! the noise-convolved mixture likelihood used by the ML estimators.
//!
//! A model over `dims` coordinates has the bias on axis 0 and `dims - 1`
//! features after it:
//!
//! | dims | distance-dependent      | distance-free                  |
//! |------|-------------------------|--------------------------------|
//! | 1    | none (bias marginal)    | none                           |
//! | 2    | `tau_ds`                | `tau_ds^m`                     |
//! | 4    | `r_max, tau_m, tau_ds`  | `r_max^0, tau_m^m, tau_ds^m`   |
//!
//! The LOS component is a point mass at `b = 0` times a feature density, so
//! its convolution with the TOA noise is a plain Gaussian in the residual.

mod convolution;
mod fitted;
mod grid;
mod io;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

pub use convolution::{convolve_bias_axis, BiasProfile};
pub use fitted::{
    fit_analytic, fit_los, fit_nlos, BiasSample, FitReport, FittedDensity, FittedLos, FittedNlos,
    FittedSlice, Gaussian, GoodnessOfFit,
};
pub use grid::{build_histogram, interpolate_smooth, Axis, HistogramGrid, SmoothingParams};
pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};

use crate::corpus::ChannelState;
use crate::error::{domain, Result};
use crate::features::{fit_feature_models, to_distance_free, FeatureModelParams, FeatureVector};

/// Density returned for out-of-support queries, in the model's SI units.
pub const DEFAULT_FLOOR: f64 = 1e-12;
pub const DEFAULT_P_LOS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothing {
    Raw,
    Interpolated,
    Fitted,
}

impl Smoothing {
    pub fn as_str(self) -> &'static str {
        match self {
            Smoothing::Raw => "raw",
            Smoothing::Interpolated => "interpolated",
            Smoothing::Fitted => "fitted",
        }
    }
}

impl fmt::Display for Smoothing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Smoothing {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "raw" => Ok(Smoothing::Raw),
            "interp" | "interpolated" => Ok(Smoothing::Interpolated),
            "fitted" => Ok(Smoothing::Fitted),
            _ => Err(format!("unknown smoothing `{s}` (raw, interp, fitted)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameterization {
    DistanceDependent,
    DistanceFree,
}

impl Parameterization {
    pub fn as_str(self) -> &'static str {
        match self {
            Parameterization::DistanceDependent => "dist",
            Parameterization::DistanceFree => "distfree",
        }
    }
}

impl fmt::Display for Parameterization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Parameterization {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dist" => Ok(Parameterization::DistanceDependent),
            "distfree" => Ok(Parameterization::DistanceFree),
            _ => Err(format!("unknown parameterization `{s}` (dist, distfree)")),
        }
    }
}

/// What [`build_model`] should construct.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    /// 1, 2 or 4.
    pub dims: usize,
    pub smoothing: Smoothing,
    pub parameterization: Parameterization,
    /// Bins per axis; `None` picks 25 for 1-D/2-D and 12 for 4-D.
    pub bins: Option<usize>,
    pub smoothing_params: SmoothingParams,
    pub p_los: f64,
    pub floor: f64,
    /// Lower edge of the NLOS bias support, s.
    pub wall_delay: f64,
}

impl ModelSpec {
    pub fn new(dims: usize, smoothing: Smoothing, parameterization: Parameterization, wall_delay: f64) -> Self {
        Self {
            dims,
            smoothing,
            parameterization,
            bins: None,
            smoothing_params: SmoothingParams::default(),
            p_los: DEFAULT_P_LOS,
            floor: DEFAULT_FLOOR,
            wall_delay,
        }
    }

    pub fn bins(&self) -> usize {
        self.bins.unwrap_or(if self.dims == 4 { 12 } else { 25 })
    }

    fn validate(&self) -> Result<()> {
        check_dims(self.dims)?;
        check_common(self.p_los, self.floor, self.wall_delay)?;
        if self.bins() == 0 {
            return Err(domain("bin count must be positive"));
        }
        Ok(())
    }
}

fn check_dims(dims: usize) -> Result<()> {
    if matches!(dims, 1 | 2 | 4) {
        Ok(())
    } else {
        Err(domain(format!("model dimension must be 1, 2 or 4, got {dims}")))
    }
}

fn check_common(p_los: f64, floor: f64, wall_delay: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p_los) {
        return Err(domain(format!("p_los must lie in [0, 1], got {p_los}")));
    }
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(domain(format!("floor density must be positive, got {floor}")));
    }
    if !(wall_delay >= 0.0 && wall_delay.is_finite()) {
        return Err(domain(format!("wall delay must be non-negative, got {wall_delay}")));
    }
    Ok(())
}

/// One corpus link used for training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSample {
    pub bias: f64,
    pub distance: f64,
    pub features: FeatureVector,
    pub state: ChannelState,
}

/// LOS feature density (the bias is a point mass at zero).
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureDensity {
    /// Over the feature axes only; a grid without axes is the constant 1.
    Grid(HistogramGrid),
    Gaussian(Gaussian),
}

impl FeatureDensity {
    pub fn dim(&self) -> usize {
        match self {
            FeatureDensity::Grid(g) => g.n_dims(),
            FeatureDensity::Gaussian(g) => g.dim(),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            FeatureDensity::Grid(g) => g.value_at(x),
            FeatureDensity::Gaussian(g) => g.ln_pdf(x).exp(),
        }
    }

    fn ln_value(&self, x: &[f64]) -> f64 {
        match self {
            FeatureDensity::Grid(g) => g.value_at(x).ln(),
            FeatureDensity::Gaussian(g) => g.ln_pdf(x),
        }
    }

    /// Total probability, by exact summation or lattice quadrature.
    pub fn mass(&self) -> f64 {
        match self {
            FeatureDensity::Grid(g) => g.total_mass(),
            FeatureDensity::Gaussian(g) => g.quadrature_mass(),
        }
    }
}

/// NLOS joint density of bias (axis 0) and features.
#[derive(Debug, Clone, PartialEq)]
pub enum NlosDensity {
    Grid(HistogramGrid),
    Fitted(FittedNlos),
}

impl NlosDensity {
    pub fn dim(&self) -> usize {
        match self {
            NlosDensity::Grid(g) => g.n_dims(),
            NlosDensity::Fitted(f) => f.dim() + 1,
        }
    }

    pub fn mass(&self) -> f64 {
        match self {
            NlosDensity::Grid(g) => g.total_mass(),
            NlosDensity::Fitted(f) => f.quadrature_mass(),
        }
    }

    /// Marginal mean of the bias.
    pub fn bias_mean(&self) -> f64 {
        match self {
            NlosDensity::Grid(g) => g.axis_mean(0),
            NlosDensity::Fitted(f) => f.b0 + 1.0 / f.lambda,
        }
    }

    /// Lower edge of the bias support.
    pub fn bias_lower(&self) -> f64 {
        match self {
            NlosDensity::Grid(g) => g.axes()[0].lower,
            NlosDensity::Fitted(f) => f.b0,
        }
    }

    fn bias_marginal(&self) -> NlosDensity {
        match self {
            NlosDensity::Grid(g) => NlosDensity::Grid(g.marginal(&[0])),
            NlosDensity::Fitted(f) => {
                let (empty, _) = Gaussian::from_covariance(vec![], &[]).expect("empty Gaussian");
                NlosDensity::Fitted(
                    FittedNlos::new(f.b0, f.lambda, vec![], vec![], empty).expect("valid parameters"),
                )
            }
        }
    }
}

/// Immutable mixture model; cheap to clone.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    dims: usize,
    smoothing: Smoothing,
    parameterization: Parameterization,
    p_los: f64,
    floor: f64,
    wall_delay: f64,
    feature_params: FeatureModelParams,
    los: Arc<FeatureDensity>,
    nlos: Arc<NlosDensity>,
}

/// Counts and fit diagnostics from [`build_model`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildReport {
    pub n_los: usize,
    pub n_nlos: usize,
    /// Samples clamped into edge bins.
    pub los_clamped: usize,
    pub nlos_clamped: usize,
    pub los_fit: Option<FitReport>,
    pub nlos_fit: Option<FitReport>,
}

impl DensityModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dims: usize,
        smoothing: Smoothing,
        parameterization: Parameterization,
        p_los: f64,
        floor: f64,
        wall_delay: f64,
        feature_params: FeatureModelParams,
        los: FeatureDensity,
        nlos: NlosDensity,
    ) -> Result<Self> {
        check_dims(dims)?;
        check_common(p_los, floor, wall_delay)?;
        if los.dim() + 1 != dims || nlos.dim() != dims {
            return Err(domain(format!(
                "component dimensions {} (LOS features) and {} (NLOS) do not fit a {dims}-D model",
                los.dim(),
                nlos.dim()
            )));
        }
        if nlos.bias_lower() < wall_delay * (1.0 - 1e-12) {
            return Err(domain(format!(
                "NLOS bias support starts at {} before the wall delay {wall_delay}",
                nlos.bias_lower()
            )));
        }
        Ok(Self {
            dims,
            smoothing,
            parameterization,
            p_los,
            floor,
            wall_delay,
            feature_params,
            los: Arc::new(los),
            nlos: Arc::new(nlos),
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn smoothing(&self) -> Smoothing {
        self.smoothing
    }

    pub fn parameterization(&self) -> Parameterization {
        self.parameterization
    }

    pub fn p_los(&self) -> f64 {
        self.p_los
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn wall_delay(&self) -> f64 {
        self.wall_delay
    }

    pub fn feature_params(&self) -> FeatureModelParams {
        self.feature_params
    }

    pub fn los(&self) -> &FeatureDensity {
        &self.los
    }

    pub fn nlos(&self) -> &NlosDensity {
        &self.nlos
    }

    /// Same densities with a different LOS prior.
    pub fn with_p_los(&self, p_los: f64) -> Result<Self> {
        check_common(p_los, self.floor, self.wall_delay)?;
        Ok(Self {
            p_los,
            ..self.clone()
        })
    }

    /// The 1-D model of the bias alone, with the same prior.
    pub fn bias_marginal(&self) -> Self {
        let los = match &*self.los {
            FeatureDensity::Grid(_) => {
                FeatureDensity::Grid(HistogramGrid::new(vec![], vec![1.0]).expect("unit grid"))
            }
            FeatureDensity::Gaussian(_) => {
                FeatureDensity::Gaussian(Gaussian::from_covariance(vec![], &[]).expect("empty Gaussian").0)
            }
        };
        Self {
            dims: 1,
            los: Arc::new(los),
            nlos: Arc::new(self.nlos.bias_marginal()),
            ..self.clone()
        }
    }

    /// Features this model conditions on, taken from the raw vector and (for
    /// distance-free models) the hypothesised link distance.
    pub fn model_features(&self, fv: &FeatureVector, distance: f64) -> Result<Vec<f64>> {
        select_features(self.dims, self.parameterization, &self.feature_params, fv, distance)
    }

    /// Precomputes everything that depends on the features only.
    pub fn kernel(&self, x: &[f64]) -> Result<LinkKernel> {
        if x.len() + 1 != self.dims {
            return Err(domain(format!(
                "{}-D model needs {} features, got {}",
                self.dims,
                self.dims - 1,
                x.len()
            )));
        }
        Ok(self.kernel_unchecked(x))
    }

    pub(crate) fn kernel_unchecked(&self, x: &[f64]) -> LinkKernel {
        let ln_f_los = self.los.ln_value(x);
        let nlos = match &*self.nlos {
            NlosDensity::Grid(g) => match g.leading_slice(x) {
                Some(values) if values.iter().any(|v| *v > 0.0) => {
                    NlosKernel::Profile(BiasProfile { axis: g.axes()[0], values })
                }
                _ => NlosKernel::Empty,
            },
            NlosDensity::Fitted(f) => NlosKernel::Fitted(f.slice(x)),
        };
        LinkKernel {
            p_los: self.p_los,
            ln_f_los,
            nlos,
            ln_floor: self.floor.ln(),
        }
    }

    /// Mixture likelihood of residual `u = tau - d/c0` and features `x`,
    /// never below the floor.
    pub fn evaluate_likelihood(&self, u: f64, x: &[f64], sigma: f64) -> Result<f64> {
        if !(sigma > 0.0) {
            return Err(domain(format!("noise standard deviation must be positive, got {sigma}")));
        }
        Ok(self.kernel(x)?.likelihood(u, sigma))
    }
}

/// Free-function form of [`DensityModel::evaluate_likelihood`].
pub fn evaluate_likelihood(model: &DensityModel, u: f64, x: &[f64], sigma: f64) -> Result<f64> {
    model.evaluate_likelihood(u, x, sigma)
}

fn select_features(
    dims: usize,
    param: Parameterization,
    params: &FeatureModelParams,
    fv: &FeatureVector,
    distance: f64,
) -> Result<Vec<f64>> {
    Ok(match (dims, param) {
        (1, _) => vec![],
        (2, Parameterization::DistanceDependent) => vec![fv.tau_ds],
        (4, Parameterization::DistanceDependent) => vec![fv.r_max, fv.tau_m, fv.tau_ds],
        (2, Parameterization::DistanceFree) => vec![to_distance_free(fv, distance, params)?.tau_ds_slope],
        (4, Parameterization::DistanceFree) => {
            let f = to_distance_free(fv, distance, params)?;
            vec![f.r_max0, f.tau_m_slope, f.tau_ds_slope]
        }
        _ => return Err(domain(format!("unsupported model dimension {dims}"))),
    })
}

#[derive(Debug, Clone)]
enum NlosKernel {
    Empty,
    Profile(BiasProfile),
    Fitted(FittedSlice),
}

/// A model sliced at one feature point: a function of the residual and the
/// noise level only.
#[derive(Debug, Clone)]
pub struct LinkKernel {
    p_los: f64,
    /// `ln f_LOS(x)`, `-inf` outside the LOS support.
    ln_f_los: f64,
    nlos: NlosKernel,
    ln_floor: f64,
}

fn ln_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        m
    } else {
        m + ((a - m).exp() + (b - m).exp()).ln()
    }
}

impl LinkKernel {
    fn ln_nlos_unfloored(&self, u: f64, sigma: f64) -> f64 {
        let w = 1.0 - self.p_los;
        if w <= 0.0 {
            return f64::NEG_INFINITY;
        }
        match &self.nlos {
            NlosKernel::Empty => f64::NEG_INFINITY,
            NlosKernel::Profile(p) => (w * p.convolve_unchecked(u, sigma)).ln(),
            NlosKernel::Fitted(s) => w.ln() + s.ln_convolved(u, sigma),
        }
    }

    fn ln_los_unfloored(&self, u: f64, sigma: f64) -> f64 {
        if self.p_los <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let z = u / sigma;
        self.p_los.ln() + self.ln_f_los - 0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    /// Log of the floored mixture likelihood; computed in the log domain so
    /// that far-tail LOS terms do not underflow.
    pub fn ln_likelihood(&self, u: f64, sigma: f64) -> f64 {
        ln_add_exp(self.ln_los_unfloored(u, sigma), self.ln_nlos_unfloored(u, sigma)).max(self.ln_floor)
    }

    pub fn likelihood(&self, u: f64, sigma: f64) -> f64 {
        self.ln_likelihood(u, sigma).exp()
    }

    pub fn ln_floor(&self) -> f64 {
        self.ln_floor
    }

    /// Unnormalized state weights `(p f_LOS(x), (1 - p) f_NLOS(x))` with the
    /// bias integrated out.
    pub fn state_weights(&self) -> (f64, f64) {
        let los = self.p_los * self.ln_f_los.exp();
        let f_nlos = match &self.nlos {
            NlosKernel::Empty => 0.0,
            NlosKernel::Profile(p) => p.mass(),
            NlosKernel::Fitted(s) => s.ln_feature_density().exp(),
        };
        (los, (1.0 - self.p_los) * f_nlos)
    }

    /// `E[b | x, NLOS]`, `None` when the NLOS density vanishes at `x`.
    pub fn nlos_conditional_mean(&self) -> Option<f64> {
        match &self.nlos {
            NlosKernel::Empty => None,
            NlosKernel::Profile(p) => p.mean(),
            NlosKernel::Fitted(s) => {
                let m = s.conditional_mean();
                m.is_finite().then_some(m)
            }
        }
    }
}

/// Builds a model from training links. Distance-free parameters are fitted
/// on all samples regardless of state.
pub fn build_model(samples: &[TrainingSample], spec: &ModelSpec) -> Result<(DensityModel, BuildReport)> {
    spec.validate()?;
    let feature_params = match spec.parameterization {
        Parameterization::DistanceDependent => FeatureModelParams::default(),
        Parameterization::DistanceFree => {
            let fv: Vec<FeatureVector> = samples.iter().map(|s| s.features).collect();
            let d: Vec<f64> = samples.iter().map(|s| s.distance).collect();
            fit_feature_models(&fv, &d)?.params
        }
    };
    let mut los_rows = Vec::new();
    let mut nlos_rows = Vec::new();
    for s in samples {
        let x = select_features(spec.dims, spec.parameterization, &feature_params, &s.features, s.distance)?;
        match s.state {
            ChannelState::Los => los_rows.push(x),
            ChannelState::Nlos => {
                let mut row = Vec::with_capacity(x.len() + 1);
                row.push(s.bias);
                row.extend(x);
                nlos_rows.push(row);
            }
        }
    }
    if los_rows.is_empty() || nlos_rows.is_empty() {
        return Err(domain(format!(
            "model needs samples of both states ({} LOS, {} NLOS)",
            los_rows.len(),
            nlos_rows.len()
        )));
    }
    if let Some(b) = nlos_rows.iter().map(|r| r[0]).find(|b| !b.is_finite()) {
        return Err(domain(format!("non-finite NLOS bias {b}")));
    }
    let mut report = BuildReport {
        n_los: los_rows.len(),
        n_nlos: nlos_rows.len(),
        los_clamped: 0,
        nlos_clamped: 0,
        los_fit: None,
        nlos_fit: None,
    };
    let (los, nlos) = match spec.smoothing {
        Smoothing::Raw | Smoothing::Interpolated => {
            let bins = spec.bins();
            let los_axes = spanning_axes(&los_rows, 0, bins)?;
            let max_b = nlos_rows.iter().map(|r| r[0]).fold(f64::NEG_INFINITY, f64::max);
            let mut nlos_axes = vec![Axis::spanning(spec.wall_delay, max_b.max(spec.wall_delay), bins)?];
            nlos_axes.extend(spanning_axes(&nlos_rows, 1, bins)?);
            let (mut los_grid, lc) = build_histogram(&los_rows, los_axes)?;
            let (mut nlos_grid, nc) = build_histogram(&nlos_rows, nlos_axes)?;
            report.los_clamped = lc;
            report.nlos_clamped = nc;
            if spec.smoothing == Smoothing::Interpolated {
                if los_grid.n_dims() > 0 {
                    los_grid = interpolate_smooth(&los_grid, spec.smoothing_params)?;
                }
                nlos_grid = interpolate_smooth(&nlos_grid, spec.smoothing_params)?;
            }
            (FeatureDensity::Grid(los_grid), NlosDensity::Grid(nlos_grid))
        }
        Smoothing::Fitted => {
            let los_samples: Vec<BiasSample> = los_rows.into_iter().map(|x| (0.0, x)).collect();
            let nlos_samples: Vec<BiasSample> = nlos_rows
                .into_iter()
                .map(|mut r| {
                    let b = r.remove(0);
                    (b, r)
                })
                .collect();
            let (los, lr) = fit_analytic(&los_samples, false, spec.wall_delay)?;
            let (nlos, nr) = fit_analytic(&nlos_samples, true, spec.wall_delay)?;
            report.los_fit = Some(lr);
            report.nlos_fit = Some(nr);
            let (FittedDensity::Los(los), FittedDensity::Nlos(nlos)) = (los, nlos) else {
                unreachable!("fit_analytic returns the requested state")
            };
            (FeatureDensity::Gaussian(los.features), NlosDensity::Fitted(nlos))
        }
    };
    let model = DensityModel::new(
        spec.dims,
        spec.smoothing,
        spec.parameterization,
        spec.p_los,
        spec.floor,
        spec.wall_delay,
        feature_params,
        los,
        nlos,
    )?;
    Ok((model, report))
}

/// One axis per column from `skip` on, spanning the observed range.
fn spanning_axes(rows: &[Vec<f64>], skip: usize, bins: usize) -> Result<Vec<Axis>> {
    let k = rows[0].len();
    (skip..k)
        .map(|j| {
            let (lo, hi) = rows
                .iter()
                .map(|r| r[j])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            Axis::spanning(lo, hi, bins)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig};
    use crate::features::extract_all;
    use crate::stats::norm_pdf;

    pub(crate) fn corpus_samples() -> (Vec<TrainingSample>, f64) {
        let cfg = CorpusConfig::default();
        let samples = generate_corpus(&cfg)
            .unwrap()
            .iter()
            .map(|r| TrainingSample {
                bias: r.bias,
                distance: r.distance,
                features: extract_all(&r.signal()).unwrap(),
                state: r.state,
            })
            .collect();
        (samples, cfg.wall_delay())
    }

    fn all_specs(wall: f64) -> Vec<ModelSpec> {
        let mut out = Vec::new();
        for dims in [2, 4] {
            for smoothing in [Smoothing::Raw, Smoothing::Interpolated, Smoothing::Fitted] {
                for p in [Parameterization::DistanceDependent, Parameterization::DistanceFree] {
                    out.push(ModelSpec::new(dims, smoothing, p, wall));
                }
            }
        }
        out
    }

    #[test]
    fn every_variant_is_normalized() {
        let (samples, wall) = corpus_samples();
        for spec in all_specs(wall) {
            let (m, _) = build_model(&samples, &spec).unwrap();
            assert!((m.los().mass() - 1.0).abs() < 1e-6, "{spec:?} LOS");
            assert!((m.nlos().mass() - 1.0).abs() < 1e-6, "{spec:?} NLOS");
            let marg = m.bias_marginal();
            assert!((marg.nlos().mass() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn nlos_support_respects_wall_delay() {
        let (samples, wall) = corpus_samples();
        let spec = ModelSpec::new(2, Smoothing::Interpolated, Parameterization::DistanceDependent, wall);
        let (m, _) = build_model(&samples, &spec).unwrap();
        let NlosDensity::Grid(g) = m.nlos() else { panic!() };
        assert!(g.axes()[0].lower >= wall);
    }

    #[test]
    fn pure_los_is_gaussian_times_feature_density() {
        let (samples, wall) = corpus_samples();
        let spec = ModelSpec::new(2, Smoothing::Raw, Parameterization::DistanceDependent, wall);
        let (m, _) = build_model(&samples, &spec).unwrap();
        let m = m.with_p_los(1.0).unwrap();
        let los = samples.iter().find(|s| s.state == ChannelState::Los).unwrap();
        let x = m.model_features(&los.features, los.distance).unwrap();
        let sigma = 0.5e-9;
        let got = m.evaluate_likelihood(0.0, &x, sigma).unwrap();
        let want = norm_pdf(0.0, sigma) * m.los().value(&x);
        assert!(want > 0.0);
        assert!((got - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn null_region_sits_at_the_floor() {
        let (samples, wall) = corpus_samples();
        for spec in all_specs(wall) {
            let (m, _) = build_model(&samples, &spec).unwrap();
            let m = m.with_p_los(0.0).unwrap();
            let nlos = samples.iter().find(|s| s.state == ChannelState::Nlos).unwrap();
            let x = m.model_features(&nlos.features, nlos.distance).unwrap();
            let sigma = 0.3e-9;
            // Densities here are of order 1e26 in SI units, so the Gaussian
            // tail has to be far longer than 4 sigma to drop below 1e-12.
            let v = m.evaluate_likelihood(wall - 15.0 * sigma, &x, sigma).unwrap();
            assert!(v <= m.floor() * (1.0 + 1e-12), "{spec:?}: {v}");
        }
    }

    #[test]
    fn mixture_is_linear_in_p_los() {
        let (samples, wall) = corpus_samples();
        for spec in all_specs(wall) {
            let (m, _) = build_model(&samples, &spec).unwrap();
            for s in samples.iter().step_by(37) {
                let x = m.model_features(&s.features, s.distance).unwrap();
                let sigma = 0.6e-9;
                let u = s.bias + 0.2e-9;
                let at = |p: f64| m.with_p_los(p).unwrap().evaluate_likelihood(u, &x, sigma).unwrap();
                let (l, n, h) = (at(1.0), at(0.0), at(0.5));
                if l > 1e6 * m.floor() && n > 1e6 * m.floor() {
                    assert!((h - 0.5 * (l + n)).abs() <= 1e-9 * h, "{spec:?}");
                }
            }
        }
    }

    #[test]
    fn monotone_in_p_los_where_los_dominates() {
        let (samples, wall) = corpus_samples();
        let spec = ModelSpec::new(4, Smoothing::Interpolated, Parameterization::DistanceDependent, wall);
        let (m, _) = build_model(&samples, &spec).unwrap();
        let los = samples.iter().find(|s| s.state == ChannelState::Los).unwrap();
        let x = m.model_features(&los.features, los.distance).unwrap();
        let sigma = 0.3e-9;
        let l = m.with_p_los(1.0).unwrap().evaluate_likelihood(0.0, &x, sigma).unwrap();
        let n = m.with_p_los(0.0).unwrap().evaluate_likelihood(0.0, &x, sigma).unwrap();
        assert!(l > n);
        let mut prev = 0.0;
        for k in 0..=10 {
            let v = m.with_p_los(k as f64 / 10.0).unwrap().evaluate_likelihood(0.0, &x, sigma).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (samples, wall) = corpus_samples();
        let (m, _) = build_model(
            &samples,
            &ModelSpec::new(4, Smoothing::Raw, Parameterization::DistanceDependent, wall),
        )
        .unwrap();
        assert!(m.evaluate_likelihood(0.0, &[1.0], 1e-9).is_err());
        assert!(m.evaluate_likelihood(0.0, &[1.0, 2.0, 3.0], 0.0).is_err());
        let spec = ModelSpec::new(3, Smoothing::Raw, Parameterization::DistanceDependent, wall);
        assert!(build_model(&samples, &spec).is_err());
    }

    #[test]
    fn single_state_training_is_rejected() {
        let (samples, wall) = corpus_samples();
        let only: Vec<_> = samples.into_iter().filter(|s| s.state == ChannelState::Los).collect();
        let spec = ModelSpec::new(2, Smoothing::Raw, Parameterization::DistanceDependent, wall);
        assert!(build_model(&only, &spec).is_err());
    }

    #[test]
    fn fitted_kernel_matches_grid_of_the_same_family_in_mean() {
        let (samples, wall) = corpus_samples();
        let spec = ModelSpec::new(2, Smoothing::Fitted, Parameterization::DistanceDependent, wall);
        let (m, report) = build_model(&samples, &spec).unwrap();
        assert!(report.nlos_fit.unwrap().goodness.heldout_mean_loglik.is_finite());
        let mean = m.nlos().bias_mean();
        let emp = samples
            .iter()
            .filter(|s| s.state == ChannelState::Nlos)
            .map(|s| s.bias)
            .sum::<f64>()
            / report.n_nlos as f64;
        assert!((mean - emp).abs() < 1e-15);
    }
}
