//! Monte-Carlo benchmark: the mobile station sits at the origin, each anchor
//! is placed at the distance of a corpus record drawn by a LOS/NLOS coin
//! flip, and every configured estimator localizes the same scenario.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::KvConfig;
use crate::corpus::{generate_corpus, load_corpus, ChannelState, CorpusConfig, WaveformRecord};
use crate::density::{build_model, load_model, DensityModel, ModelSpec, Parameterization, Smoothing, TrainingSample};
use crate::error::{domain, Error, Result};
use crate::features::{extract_all, FeatureVector};
use crate::localization::{
    ls_localize, ml_it_localize, ml_localize_with, ve_localize, Algorithm, DecisionRule, GridSpec, IterativeOptions,
    LikelihoodMode, PositionEstimate, Scenario,
};
use crate::ranging::{simulate_link_toa, NoiseModel, RangingObservation};
use crate::Point2;

/// Where the waveform corpus comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum CorpusSource {
    Generate(CorpusConfig),
    /// One file holding both states.
    File(PathBuf),
    /// Separate LOS and NLOS files.
    Split { los: PathBuf, nlos: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n_anchors: usize,
    pub p_los: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub algorithms: Vec<Algorithm>,
    pub grid_step: f64,
    pub grid_half_extent: f64,
    pub likelihood: LikelihoodMode,
    pub noise: NoiseModel,
    pub corpus: CorpusSource,
    /// Model files overriding the built-in ones, per algorithm.
    pub model_paths: BTreeMap<Algorithm, PathBuf>,
    /// Fixed model prior; `None` uses each sweep point's `p_los`.
    pub model_p_los: Option<f64>,
    pub ve_options: IterativeOptions,
    pub it_options: IterativeOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_anchors: 3,
            p_los: (0..=10).map(|i| i as f64 / 10.0).collect(),
            trials: 1000,
            seed: 2010,
            algorithms: Algorithm::ALL.to_vec(),
            grid_step: GridSpec::DEFAULT_STEP,
            grid_half_extent: GridSpec::DEFAULT_HALF_EXTENT,
            likelihood: LikelihoodMode::Tabulated { oversample: 8 },
            noise: NoiseModel::default(),
            corpus: CorpusSource::Generate(CorpusConfig::default()),
            model_paths: BTreeMap::new(),
            model_p_los: None,
            ve_options: IterativeOptions {
                rule: DecisionRule::Soft,
                ..IterativeOptions::default()
            },
            it_options: IterativeOptions::default(),
        }
    }
}

fn parse_rule(s: &str) -> Result<DecisionRule> {
    match s {
        "hard" => Ok(DecisionRule::Hard),
        "soft" => Ok(DecisionRule::Soft),
        _ => Err(Error::Config(format!("unknown decision rule `{s}` (hard, soft)"))),
    }
}

impl ExperimentConfig {
    /// Reads a `key = value` file; relative paths resolve against
    /// `base_dir`. Unknown keys are an error.
    pub fn from_kv(mut cfg: KvConfig, base_dir: &Path) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        cfg.take_into("n_anchors", &mut c.n_anchors)?;
        if let Some(p) = cfg.take_list("p_los")? {
            c.p_los = p;
        }
        cfg.take_into("trials", &mut c.trials)?;
        cfg.take_into("seed", &mut c.seed)?;
        if let Some(a) = cfg.take_list::<Algorithm>("algorithms")? {
            c.algorithms = a;
        }
        cfg.take_into("grid_step", &mut c.grid_step)?;
        cfg.take_into("grid_half_extent", &mut c.grid_half_extent)?;
        let mut oversample = 8;
        cfg.take_into("table_oversample", &mut oversample)?;
        let mode: String = cfg.take("likelihood")?.unwrap_or_else(|| "tabulated".into());
        c.likelihood = match mode.as_str() {
            "exact" => LikelihoodMode::Exact,
            "tabulated" => LikelihoodMode::Tabulated { oversample },
            other => return Err(Error::Config(format!("unknown likelihood mode `{other}`"))),
        };
        c.model_p_los = cfg.take("model_p_los")?;
        if let Some(r) = cfg.take::<String>("ve_rule")? {
            c.ve_options.rule = parse_rule(&r)?;
        }
        if let Some(r) = cfg.take::<String>("it_rule")? {
            c.it_options.rule = parse_rule(&r)?;
        }
        cfg.take_into("max_iters", &mut c.it_options.max_iters)?;
        cfg.take_into("tol", &mut c.it_options.tol)?;
        c.ve_options.max_iters = c.it_options.max_iters;
        c.ve_options.tol = c.it_options.tol;

        let resolve = |p: String| base_dir.join(p);
        let corpus: Option<String> = cfg.take("corpus")?;
        let los: Option<String> = cfg.take("los_corpus")?;
        let nlos: Option<String> = cfg.take("nlos_corpus")?;
        let mut gen_kv = cfg.take_prefixed("corpus.");
        c.corpus = match (corpus, los, nlos) {
            (Some(p), None, None) => CorpusSource::File(resolve(p)),
            (None, Some(l), Some(n)) => CorpusSource::Split {
                los: resolve(l),
                nlos: resolve(n),
            },
            (None, None, None) => {
                let g = CorpusConfig::from_kv(&mut gen_kv)?;
                CorpusSource::Generate(g)
            }
            _ => {
                return Err(Error::Config(
                    "give either `corpus`, or both `los_corpus` and `nlos_corpus`".into(),
                ))
            }
        };
        gen_kv.finish()?;
        let mut noise_kv = cfg.take_prefixed("noise.");
        c.noise = NoiseModel::from_kv(&mut noise_kv)?;
        noise_kv.finish()?;
        let mut models = cfg.take_prefixed("model.");
        for a in Algorithm::ALL {
            if let Some(p) = models.take::<String>(a.as_str())? {
                c.model_paths.insert(a, resolve(p));
            }
        }
        models.finish()?;
        cfg.finish()?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_kv(KvConfig::load(path)?, base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_anchors < 3 {
            return Err(Error::Config(format!("n_anchors must be at least 3, got {}", self.n_anchors)));
        }
        if self.p_los.is_empty() || self.p_los.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("p_los values must lie in [0, 1]".into()));
        }
        if self.p_los.len() > u32::MAX as usize || self.trials > u32::MAX as usize {
            return Err(Error::Config("sweep too large".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms configured".into()));
        }
        if let Some(p) = self.model_p_los {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("model_p_los must lie in [0, 1], got {p}")));
            }
        }
        GridSpec::new(Point2::ORIGIN, self.grid_half_extent, self.grid_step)
            .map_err(|e| Error::Config(e.to_string()))?;
        self.noise.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// Anchor `i` (1-based) of `n` at distance `d` from the origin.
pub fn place_anchor(i: usize, n: usize, d: f64) -> Result<Point2> {
    if !(1..=n).contains(&i) {
        return Err(domain(format!("anchor index {i} outside 1..={n}")));
    }
    if !(d > 0.0 && d.is_finite()) {
        return Err(domain(format!("anchor distance must be positive, got {d}")));
    }
    let phi = 2.0 * std::f64::consts::PI * (i - 1) as f64 / n as f64;
    Ok(Point2::new(d * phi.sin(), d * phi.cos()))
}

/// A corpus record reduced to what the benchmark needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusLink {
    pub distance: f64,
    pub bias: f64,
    pub state: ChannelState,
    pub features: FeatureVector,
}

impl CorpusLink {
    pub fn training_sample(&self) -> TrainingSample {
        TrainingSample {
            bias: self.bias,
            distance: self.distance,
            features: self.features,
            state: self.state,
        }
    }
}

/// Extracts features of every record in parallel, keeping order.
pub fn corpus_links(records: &[WaveformRecord]) -> Result<Vec<CorpusLink>> {
    records
        .par_iter()
        .map(|r| {
            Ok(CorpusLink {
                distance: r.distance,
                bias: r.bias,
                state: r.state,
                features: extract_all(&r.signal())?,
            })
        })
        .collect()
}

/// The model built for `alg` when no file is given. `None` for LS.
pub fn default_model_spec(alg: Algorithm, wall_delay: f64) -> Option<ModelSpec> {
    use Parameterization::*;
    use Smoothing::*;
    let (dims, smoothing, param) = match alg {
        Algorithm::Ls => return None,
        Algorithm::Ve | Algorithm::Ml2d | Algorithm::Ml2dIt => (2, Interpolated, DistanceDependent),
        Algorithm::Ml4d | Algorithm::Ml4dIt => (4, Interpolated, DistanceDependent),
        Algorithm::Ml2dId => (2, Interpolated, DistanceFree),
        Algorithm::Ml4dF => (4, Fitted, DistanceDependent),
    };
    Some(ModelSpec::new(dims, smoothing, param, wall_delay))
}

/// Loaded corpus and models, shared read-only by all trials.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub los: Vec<CorpusLink>,
    pub nlos: Vec<CorpusLink>,
    /// Per algorithm; VE holds the bias marginal.
    pub models: BTreeMap<Algorithm, DensityModel>,
}

fn read_corpus_file(path: &Path) -> Result<(Option<CorpusConfig>, Vec<WaveformRecord>)> {
    load_corpus(path).map_err(|e| Error::Config(format!("cannot load corpus {}: {e}", path.display())))
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (gen_config, records) = match &config.corpus {
            CorpusSource::Generate(g) => (Some(g.clone()), generate_corpus(g)?),
            CorpusSource::File(p) => read_corpus_file(p)?,
            CorpusSource::Split { los, nlos } => {
                let (cfg, mut a) = read_corpus_file(los)?;
                let (_, b) = read_corpus_file(nlos)?;
                if a.iter().any(|r| r.state != ChannelState::Los) || b.iter().any(|r| r.state != ChannelState::Nlos) {
                    return Err(Error::Config("LOS/NLOS corpus files contain records of the other state".into()));
                }
                a.extend(b);
                (cfg, a)
            }
        };
        let links = corpus_links(&records)?;
        Self::from_links(config, links, gen_config.map(|g| g.wall_delay()))
    }

    /// Builds default models from `links`. Without a known wall delay the
    /// smallest NLOS bias bounds the NLOS support.
    pub fn from_links(config: ExperimentConfig, links: Vec<CorpusLink>, wall_delay: Option<f64>) -> Result<Self> {
        config.validate()?;
        let (los, nlos): (Vec<&CorpusLink>, Vec<&CorpusLink>) = links.iter().partition(|l| l.state == ChannelState::Los);
        let needs_los = config.p_los.iter().any(|&p| p > 0.0);
        let needs_nlos = config.p_los.iter().any(|&p| p < 1.0);
        if (needs_los && los.is_empty()) || (needs_nlos && nlos.is_empty()) {
            return Err(Error::Config(format!(
                "corpus has {} LOS and {} NLOS records; the sweep needs both",
                los.len(),
                nlos.len()
            )));
        }
        let wall_delay = wall_delay.unwrap_or_else(|| nlos.iter().map(|l| l.bias).fold(f64::INFINITY, f64::min));
        let samples: Vec<TrainingSample> = links.iter().map(CorpusLink::training_sample).collect();
        let mut built: BTreeMap<ModelSpecKey, DensityModel> = BTreeMap::new();
        let mut models = BTreeMap::new();
        for &alg in &config.algorithms {
            let model = if let Some(path) = config.model_paths.get(&alg) {
                load_model(path).map_err(|e| Error::Config(format!("cannot load model {}: {e}", path.display())))?
            } else if let Some(spec) = default_model_spec(alg, wall_delay) {
                let key = ModelSpecKey::of(&spec);
                match built.get(&key) {
                    Some(m) => m.clone(),
                    None => {
                        let (m, report) = build_model(&samples, &spec)
                            .map_err(|e| Error::Config(format!("cannot build the {alg} model: {e}")))?;
                        log::info!(
                            "{alg}: built {}-D {} model ({} LOS, {} NLOS samples)",
                            spec.dims,
                            spec.smoothing,
                            report.n_los,
                            report.n_nlos
                        );
                        built.insert(key, m.clone());
                        m
                    }
                }
            } else {
                continue;
            };
            let model = if alg == Algorithm::Ve { model.bias_marginal() } else { model };
            models.insert(alg, model);
        }
        Ok(Self {
            config,
            los: los.into_iter().copied().collect(),
            nlos: nlos.into_iter().copied().collect(),
            models,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct ModelSpecKey(usize, u8, u8);

impl ModelSpecKey {
    fn of(s: &ModelSpec) -> Self {
        ModelSpecKey(s.dims, s.smoothing as u8, s.parameterization as u8)
    }
}

/// One estimator's outcome in one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialResult {
    pub algorithm: Algorithm,
    pub p_los: f64,
    pub trial: usize,
    pub theta_hat: Point2,
    /// m^2.
    pub squared_error: f64,
    /// The estimator failed (degenerate likelihood) and the LS estimate was
    /// used instead.
    pub fallback: bool,
}

/// The rng of trial `trial` at sweep point `p_index`.
pub fn trial_rng(seed: u64, p_index: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((p_index as u64) << 32) | trial as u64);
    rng
}

/// Draws one scenario. Returns the observations in anchor order.
pub fn draw_scenario<R: Rng + ?Sized>(exp: &Experiment, p_los: f64, rng: &mut R) -> Result<Scenario> {
    let n = exp.config.n_anchors;
    let mut observations = Vec::with_capacity(n);
    for i in 1..=n {
        let los = rng.random::<f64>() < p_los;
        let pool = if los { &exp.los } else { &exp.nlos };
        if pool.is_empty() {
            return Err(Error::Config(format!(
                "no {} records to draw from",
                if los { "LOS" } else { "NLOS" }
            )));
        }
        let link = pool[rng.random_range(0..pool.len())];
        let tau = simulate_link_toa(link.distance, link.bias, &exp.config.noise, rng);
        observations.push(RangingObservation {
            tau,
            features: link.features,
            anchor: place_anchor(i, n, link.distance)?,
            truth: Some(crate::ranging::LinkTruth {
                distance: link.distance,
                bias: link.bias,
                state: link.state,
            }),
        });
    }
    Scenario::new(observations, exp.config.noise)
}

/// Runs every configured algorithm on one drawn scenario.
pub fn run_trial<R: Rng + ?Sized>(exp: &Experiment, p_los: f64, trial: usize, rng: &mut R) -> Result<Vec<TrialResult>> {
    let scenario = draw_scenario(exp, p_los, rng)?;
    let cfg = &exp.config;
    let grid = GridSpec::around(&scenario.anchors(), cfg.grid_half_extent, cfg.grid_step)?;
    let ls = ls_localize(&scenario, &grid)?;
    let model_for = |alg: Algorithm| -> Result<DensityModel> {
        let m = exp
            .models
            .get(&alg)
            .ok_or_else(|| Error::Config(format!("no model for {alg}")))?;
        m.with_p_los(cfg.model_p_los.unwrap_or(p_los))
    };
    let mut out = Vec::with_capacity(cfg.algorithms.len());
    for &alg in &cfg.algorithms {
        let estimate: Result<PositionEstimate> = match alg {
            Algorithm::Ls => Ok(ls.clone()),
            Algorithm::Ve => ve_localize(&scenario, &model_for(alg)?, &grid, &cfg.ve_options),
            Algorithm::Ml4dIt | Algorithm::Ml2dIt => ml_it_localize(&scenario, &model_for(alg)?, &grid, &cfg.it_options),
            _ => ml_localize_with(&scenario, &model_for(alg)?, &grid, cfg.likelihood),
        };
        let (theta, fallback) = match estimate {
            Ok(e) => (e.theta, false),
            Err(Error::DegenerateLikelihood(msg)) => {
                log::warn!("{alg} trial {trial}: {msg}; using the LS estimate");
                (ls.theta, true)
            }
            Err(e) => return Err(e),
        };
        out.push(TrialResult {
            algorithm: alg,
            p_los,
            trial,
            theta_hat: theta,
            squared_error: theta.distance_sq(&Point2::ORIGIN),
            fallback,
        });
    }
    Ok(out)
}

/// RMSE of one algorithm at one sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub algorithm: Algorithm,
    pub p_los: f64,
    pub trials: usize,
    pub rmse: f64,
    /// Delta-method standard error `sd(e^2) / (2 sqrt(n) rmse)`.
    pub rmse_stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    /// Ordered by sweep point, then trial, then configured algorithm.
    pub trials: Vec<TrialResult>,
    pub summary: Vec<SummaryRow>,
}

/// Runs all trials of all sweep points. Trials run in parallel; results
/// are collected in order, so the output does not depend on scheduling.
pub fn sweep(exp: &Experiment) -> Result<SweepOutput> {
    let cfg = &exp.config;
    let mut trials = Vec::with_capacity(cfg.p_los.len() * cfg.trials * cfg.algorithms.len());
    for (pi, &p) in cfg.p_los.iter().enumerate() {
        let point: Vec<Vec<TrialResult>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(exp, p, t, &mut trial_rng(cfg.seed, pi, t)))
            .collect::<Result<_>>()?;
        trials.extend(point.into_iter().flatten());
    }
    let summary = aggregate(&trials);
    Ok(SweepOutput { trials, summary })
}

/// Groups by `(p_los, algorithm)` in first-appearance order and computes
/// RMSE with its standard error. Sums run in input order.
pub fn aggregate(results: &[TrialResult]) -> Vec<SummaryRow> {
    let mut keys: Vec<(u64, Algorithm)> = Vec::new();
    let mut groups: BTreeMap<(u64, Algorithm), Vec<f64>> = BTreeMap::new();
    for r in results {
        let key = (r.p_los.to_bits(), r.algorithm);
        groups
            .entry(key)
            .or_insert_with(|| {
                keys.push(key);
                Vec::new()
            })
            .push(r.squared_error);
    }
    keys.into_iter()
        .map(|key| {
            let sq = &groups[&key];
            let n = sq.len() as f64;
            let mse = sq.iter().sum::<f64>() / n;
            let rmse = mse.sqrt();
            let rmse_stderr = if sq.len() > 1 && rmse > 0.0 {
                let var = sq.iter().map(|e| (e - mse) * (e - mse)).sum::<f64>() / (n - 1.0);
                var.sqrt() / n.sqrt() / (2.0 * rmse)
            } else {
                0.0
            };
            SummaryRow {
                algorithm: key.1,
                p_los: f64::from_bits(key.0),
                trials: sq.len(),
                rmse,
                rmse_stderr,
            }
        })
        .collect()
}

pub const RESULTS_HEADER: &str = "algorithm,p_los,trials,rmse_m,rmse_stderr_m";

/// Long-format results table; floats in shortest round-trip form.
pub fn write_results_csv<W: Write>(mut out: W, rows: &[SummaryRow]) -> Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{:?},{},{:?},{:?}",
            r.algorithm, r.p_los, r.trials, r.rmse, r.rmse_stderr
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trials_csv<W: Write>(mut out: W, trials: &[TrialResult]) -> Result<()> {
    writeln!(out, "algorithm,p_los,trial,theta_x_m,theta_y_m,squared_error_m2,fallback")?;
    for t in trials {
        writeln!(
            out,
            "{},{:?},{},{:?},{:?},{:?},{}",
            t.algorithm, t.p_los, t.trial, t.theta_hat.x, t.theta_hat.y, t.squared_error, t.fallback as u8
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Wide table: one row per `p_los`, one RMSE column per algorithm.
pub fn write_plot_tsv<W: Write>(mut out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut algs: Vec<Algorithm> = Vec::new();
    let mut points: Vec<u64> = Vec::new();
    for r in rows {
        if !algs.contains(&r.algorithm) {
            algs.push(r.algorithm);
        }
        if !points.contains(&r.p_los.to_bits()) {
            points.push(r.p_los.to_bits());
        }
    }
    write!(out, "p_los")?;
    for a in &algs {
        write!(out, "\t{a}")?;
    }
    writeln!(out)?;
    for p in points {
        write!(out, "{:?}", f64::from_bits(p))?;
        for a in &algs {
            match rows.iter().find(|r| r.algorithm == *a && r.p_los.to_bits() == p) {
                Some(r) => write!(out, "\t{:?}", r.rmse)?,
                None => write!(out, "\tNaN")?,
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
