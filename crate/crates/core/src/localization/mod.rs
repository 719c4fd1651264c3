//! Position estimators over a square search grid: least squares, ML with the
//! joint bias/feature likelihood, and per-link iterative bias correction
//! followed by least squares.

mod grid;
mod iterative;

use std::fmt;
use std::str::FromStr;

pub use grid::GridSpec;
pub use iterative::{iterative_bias_correct, BiasCorrection, DecisionRule, IterativeOptions};

use crate::density::{DensityModel, LinkKernel, Parameterization, Smoothing};
use crate::error::{domain, Error, Result};
use crate::features::FeatureVector;
use crate::ranging::{NoiseModel, RangingObservation};
use crate::{Point2, SPEED_OF_LIGHT};

/// Distances below this are clamped when a grid vertex sits on an anchor,
/// keeping the noise law and distance-free features finite. m.
pub const MIN_DISTANCE: f64 = 1e-3;

/// The eight estimators of the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Ls,
    Ve,
    Ml4d,
    Ml2d,
    Ml2dId,
    Ml4dF,
    Ml4dIt,
    Ml2dIt,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Ls,
        Algorithm::Ve,
        Algorithm::Ml4d,
        Algorithm::Ml2d,
        Algorithm::Ml2dId,
        Algorithm::Ml4dF,
        Algorithm::Ml4dIt,
        Algorithm::Ml2dIt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ls => "ls",
            Algorithm::Ve => "ve",
            Algorithm::Ml4d => "ml4d",
            Algorithm::Ml2d => "ml2d",
            Algorithm::Ml2dId => "ml2did",
            Algorithm::Ml4dF => "ml4df",
            Algorithm::Ml4dIt => "ml4dit",
            Algorithm::Ml2dIt => "ml2dit",
        }
    }

    /// The ML variant that a model of this shape implements.
    pub fn for_ml_model(model: &DensityModel) -> Algorithm {
        match (model.dims(), model.smoothing(), model.parameterization()) {
            (4, Smoothing::Fitted, _) => Algorithm::Ml4dF,
            (4, _, _) => Algorithm::Ml4d,
            (_, _, Parameterization::DistanceFree) => Algorithm::Ml2dId,
            _ => Algorithm::Ml2d,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

/// Observations of one mobile station by at least three anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    observations: Vec<RangingObservation>,
    noise: NoiseModel,
}

impl Scenario {
    pub fn new(observations: Vec<RangingObservation>, noise: NoiseModel) -> Result<Self> {
        noise.validate()?;
        if observations.len() < 3 {
            return Err(domain(format!(
                "localization needs at least 3 anchors, got {}",
                observations.len()
            )));
        }
        if let Some(o) = observations
            .iter()
            .find(|o| !(o.tau.is_finite() && o.anchor.x.is_finite() && o.anchor.y.is_finite()))
        {
            return Err(domain(format!("non-finite observation at anchor {}", o.anchor)));
        }
        let anchors: Vec<Point2> = observations.iter().map(|o| o.anchor).collect();
        let spread = collinearity(&anchors);
        if spread < 1e-12 {
            return Err(domain("anchors are collinear"));
        }
        if spread < 1e-3 {
            log::warn!("anchors are nearly collinear (relative spread {spread:.2e})");
        }
        Ok(Self { observations, noise })
    }

    pub fn observations(&self) -> &[RangingObservation] {
        &self.observations
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn anchors(&self) -> Vec<Point2> {
        self.observations.iter().map(|o| o.anchor).collect()
    }

    /// Same anchors and features with replaced TOAs.
    pub fn with_taus(&self, taus: &[f64]) -> Scenario {
        let observations = self
            .observations
            .iter()
            .zip(taus)
            .map(|(o, &tau)| RangingObservation { tau, ..*o })
            .collect();
        Scenario {
            observations,
            noise: self.noise,
        }
    }

    /// Rows `anchor_x,anchor_y,tau,x0..x5` with the features in
    /// [`FeatureVector::NAMES`] order. A non-numeric first line is a header.
    pub fn from_csv(text: &str, noise: NoiseModel) -> Result<Self> {
        let mut observations = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
            let values = match parsed {
                Ok(v) => v,
                Err(_) if idx == 0 => continue,
                Err(e) => {
                    return Err(crate::error::parse_err(
                        crate::error::Location::Line(idx + 1),
                        format!("invalid number: {e}"),
                    ))
                }
            };
            if values.len() != 9 {
                return Err(crate::error::parse_err(
                    crate::error::Location::Line(idx + 1),
                    format!("expected 9 columns, got {}", values.len()),
                ));
            }
            let mut fv = [0.0; 6];
            fv.copy_from_slice(&values[3..]);
            observations.push(RangingObservation {
                tau: values[2],
                features: FeatureVector::from_array(fv),
                anchor: Point2::new(values[0], values[1]),
                truth: None,
            });
        }
        Scenario::new(observations, noise)
    }

    fn describe(&self) -> String {
        let anchors: Vec<String> = self.observations.iter().map(|o| o.anchor.to_string()).collect();
        format!("scenario with anchors [{}]", anchors.join(", "))
    }
}

/// Smallest triangle area over anchor triples relative to the squared
/// largest anchor separation; 0 when all anchors are collinear.
fn collinearity(anchors: &[Point2]) -> f64 {
    let mut max_area: f64 = 0.0;
    let mut max_sep: f64 = 0.0;
    for (i, a) in anchors.iter().enumerate() {
        for (j, b) in anchors.iter().enumerate().skip(i + 1) {
            max_sep = max_sep.max(a.distance_sq(b));
            for c in &anchors[j + 1..] {
                let area = ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)).abs();
                max_area = max_area.max(area);
            }
        }
    }
    if max_sep > 0.0 {
        max_area / max_sep
    } else {
        0.0
    }
}

/// Per-link output of the iterative estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkDiagnostics {
    pub bias_estimate: f64,
    pub p_los_posterior: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionEstimate {
    pub theta: Point2,
    /// Log-likelihood for ML estimators, negative squared range residual
    /// (m^2) for least squares. Larger is better.
    pub score: f64,
    pub algorithm: Algorithm,
    /// Row-major index of the selected vertex.
    pub grid_index: usize,
    /// Filled by the iterative estimators.
    pub links: Vec<LinkDiagnostics>,
}

/// How the ML search evaluates per-link log-likelihoods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikelihoodMode {
    /// Full evaluation at every vertex.
    Exact,
    /// Per-link log-likelihood tabulated over distance at `step/oversample`
    /// and linearly interpolated.
    Tabulated { oversample: usize },
}

pub fn ls_localize(s: &Scenario, grid: &GridSpec) -> Result<PositionEstimate> {
    let ranges: Vec<(Point2, f64)> = s
        .observations
        .iter()
        .map(|o| (o.anchor, SPEED_OF_LIGHT * o.tau))
        .collect();
    let (index, score) = grid.argmax(|p| {
        let mut acc = 0.0;
        for (a, r) in &ranges {
            let e = r - p.distance_sq(a).sqrt();
            acc += e * e;
        }
        -acc
    });
    Ok(PositionEstimate {
        theta: grid.vertex(index),
        score,
        algorithm: Algorithm::Ls,
        grid_index: index,
        links: Vec::new(),
    })
}

pub fn ml_localize(s: &Scenario, model: &DensityModel, grid: &GridSpec) -> Result<PositionEstimate> {
    ml_localize_with(s, model, grid, LikelihoodMode::Exact)
}

enum LinkEval {
    Fixed(LinkKernel),
    PerDistance(FeatureVector),
}

pub fn ml_localize_with(
    s: &Scenario,
    model: &DensityModel,
    grid: &GridSpec,
    mode: LikelihoodMode,
) -> Result<PositionEstimate> {
    let noise = s.noise;
    let evals: Vec<(Point2, f64, LinkEval)> = s
        .observations
        .iter()
        .map(|o| {
            let per_distance = model.parameterization() == Parameterization::DistanceFree && model.dims() > 1;
            let eval = if per_distance {
                LinkEval::PerDistance(o.features)
            } else {
                LinkEval::Fixed(model.kernel(&model.model_features(&o.features, 1.0)?)?)
            };
            Ok((o.anchor, o.tau, eval))
        })
        .collect::<Result<_>>()?;
    let ln_link = |tau: f64, eval: &LinkEval, d: f64| -> f64 {
        let d = d.max(MIN_DISTANCE);
        let sigma = noise.stddev_unchecked(d);
        let u = tau - d / SPEED_OF_LIGHT;
        match eval {
            LinkEval::Fixed(k) => k.ln_likelihood(u, sigma),
            LinkEval::PerDistance(fv) => {
                let x = model
                    .model_features(fv, d)
                    .expect("positive distance and supported dimension");
                model.kernel_unchecked(&x).ln_likelihood(u, sigma)
            }
        }
    };
    let ln_floor = model.floor().ln();
    let floor_sum = evals.iter().fold(0.0, |acc, _| acc + ln_floor);
    let (index, score) = match mode {
        LikelihoodMode::Exact => grid.argmax(|p| {
            let mut acc = 0.0;
            for (a, tau, eval) in &evals {
                acc += ln_link(*tau, eval, p.distance_sq(a).sqrt());
            }
            acc
        }),
        LikelihoodMode::Tabulated { oversample } => {
            if oversample == 0 {
                return Err(domain("table oversampling must be positive"));
            }
            let h = grid.step / oversample as f64;
            let tables: Vec<(Point2, DistanceTable)> = evals
                .iter()
                .map(|(a, tau, eval)| {
                    let (lo, hi) = grid.distance_range(a);
                    (*a, DistanceTable::build(lo, hi, h, |d| ln_link(*tau, eval, d)))
                })
                .collect();
            grid.argmax(|p| {
                let mut acc = 0.0;
                for (a, t) in &tables {
                    acc += t.eval(p.distance_sq(a).sqrt());
                }
                acc
            })
        }
    };
    if score <= floor_sum {
        return Err(Error::DegenerateLikelihood(format!(
            "likelihood is at the floor on the whole grid for {}",
            s.describe()
        )));
    }
    Ok(PositionEstimate {
        theta: grid.vertex(index),
        score,
        algorithm: Algorithm::for_ml_model(model),
        grid_index: index,
        links: Vec::new(),
    })
}

/// Samples of a function of distance on a uniform grid.
struct DistanceTable {
    lower: f64,
    inv_h: f64,
    values: Vec<f64>,
}

impl DistanceTable {
    fn build(lower: f64, upper: f64, h: f64, f: impl Fn(f64) -> f64) -> Self {
        let n = ((upper - lower) / h).ceil() as usize + 1;
        let values = (0..=n).map(|i| f(lower + i as f64 * h)).collect();
        Self {
            lower,
            inv_h: 1.0 / h,
            values,
        }
    }

    fn eval(&self, d: f64) -> f64 {
        let p = ((d - self.lower) * self.inv_h).max(0.0);
        let i = (p as usize).min(self.values.len() - 2);
        let t = (p - i as f64).min(1.0);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        y0 + t * (y1 - y0)
    }
}

fn corrected_localize(
    s: &Scenario,
    model: &DensityModel,
    grid: &GridSpec,
    opts: &IterativeOptions,
    algorithm: Algorithm,
) -> Result<PositionEstimate> {
    let mut taus = Vec::with_capacity(s.observations.len());
    let mut links = Vec::with_capacity(s.observations.len());
    for o in &s.observations {
        let c = iterative_bias_correct(o, model, &s.noise, opts)?;
        if !c.converged {
            log::debug!("bias correction did not converge at anchor {}", o.anchor);
        }
        taus.push(c.corrected_tau);
        links.push(LinkDiagnostics {
            bias_estimate: c.bias,
            p_los_posterior: c.p_los_posterior,
            iterations: c.iterations,
            converged: c.converged,
        });
    }
    let mut est = ls_localize(&s.with_taus(&taus), grid)?;
    est.algorithm = algorithm;
    est.links = links;
    Ok(est)
}

/// Bias correction from the bias marginal alone, then least squares. A
/// model with features is reduced to its bias marginal first.
pub fn ve_localize(
    s: &Scenario,
    model: &DensityModel,
    grid: &GridSpec,
    opts: &IterativeOptions,
) -> Result<PositionEstimate> {
    let marginal;
    let model = if model.dims() == 1 {
        model
    } else {
        marginal = model.bias_marginal();
        &marginal
    };
    corrected_localize(s, model, grid, opts, Algorithm::Ve)
}

/// Feature-aided bias correction with the joint model, then least squares.
pub fn ml_it_localize(
    s: &Scenario,
    model: &DensityModel,
    grid: &GridSpec,
    opts: &IterativeOptions,
) -> Result<PositionEstimate> {
    let algorithm = if model.dims() == 4 {
        Algorithm::Ml4dIt
    } else {
        Algorithm::Ml2dIt
    };
    corrected_localize(s, model, grid, opts, algorithm)
}
