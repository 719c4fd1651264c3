mod tables;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use uwb_nlos::config::KvConfig;
use uwb_nlos::corpus::{generate_corpus, load_corpus, save_corpus, ChannelState, CorpusConfig};
use uwb_nlos::density::{build_model, load_model, save_model, ModelSpec, Parameterization, Smoothing};
use uwb_nlos::features::{correlation_coefficient, extract_all, fit_feature_models, to_distance_free, FeatureVector};
use uwb_nlos::harness::{sweep, write_plot_tsv, write_results_csv, write_trials_csv, Experiment, ExperimentConfig};
use uwb_nlos::localization::{
    ls_localize, ml_it_localize, ml_localize_with, ve_localize, Algorithm, DecisionRule,
    GridSpec, IterativeOptions, LikelihoodMode, Scenario, MIN_DISTANCE,
};
use uwb_nlos::ranging::{simulate_toa, threshold_toa, NoiseModel, DEFAULT_THRESHOLD_FRACTION};

use uwb_nlos::SPEED_OF_LIGHT;

use tables::{read_feature_rows, write_feature_rows, FeatureRow};

#[derive(Parser)]
#[command(name = "uwbnlos", version, about = "UWB NLOS bias characterization and TOA localization")]
struct Cli {
    /// Log more (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic waveform corpus.
    GenCorpus {
        /// key=value file with corpus parameters; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the LOS and NLOS records to separate files.
        #[arg(long, requires = "nlos_out")]
        los_out: Option<PathBuf>,
        #[arg(long, requires = "los_out")]
        nlos_out: Option<PathBuf>,
    },
    /// Extract waveform features of every corpus record.
    Extract {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fit the distance models on the corpus and append the distance-free triple.
        #[arg(long)]
        params: bool,
    },
    /// Correlation of features with the bias and the distance.
    Correlate {
        #[arg(long)]
        features: PathBuf,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate TOA observations for every corpus record.
    Simulate {
        #[arg(long)]
        corpus: PathBuf,
        /// key=value file with gamma, sigma_n2, beta.
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long, default_value_t = 2010)]
        seed: u64,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate a joint bias/feature density from a features table.
    FitDensity {
        #[arg(long)]
        features: PathBuf,
        /// raw, interp or fitted.
        #[arg(long, default_value = "interp")]
        mode: Smoothing,
        #[arg(long, default_value_t = 2)]
        dims: usize,
        /// dist or distfree.
        #[arg(long, default_value = "dist")]
        param: Parameterization,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long, default_value_t = uwb_nlos::density::DEFAULT_P_LOS)]
        p_los: f64,
        /// Smallest NLOS bias, s. Defaults to the smallest NLOS bias in the table.
        #[arg(long)]
        wall_delay: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Localize one scenario.
    Localize {
        /// CSV rows anchor_x,anchor_y,tau,x0..x5.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "ls")]
        algo: Algorithm,
        /// Required by every algorithm except ls.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = GridSpec::DEFAULT_STEP)]
        grid_step: f64,
        #[arg(long, default_value_t = GridSpec::DEFAULT_HALF_EXTENT)]
        grid_half_extent: f64,
        /// Overrides the prior stored in the model.
        #[arg(long)]
        p_los: Option<f64>,
        #[arg(long)]
        noise: Option<PathBuf>,
        /// Tabulate per-link likelihoods with this oversampling instead of exact evaluation.
        #[arg(long)]
        table_oversample: Option<usize>,
    },
    /// Run the Monte-Carlo RMSE sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Wide table, one RMSE column per algorithm.
        #[arg(long)]
        plot_data: Option<PathBuf>,
        /// Per-trial rows.
        #[arg(long)]
        trials_out: Option<PathBuf>,
        /// Worker threads; all cores by default.
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_kv(path: &Path) -> Result<KvConfig> {
    KvConfig::load(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_noise(path: Option<&PathBuf>) -> Result<NoiseModel> {
    match path {
        None => Ok(NoiseModel::default()),
        Some(p) => {
            let mut kv = load_kv(p)?;
            let m = NoiseModel::from_kv(&mut kv)?;
            kv.finish()?;
            Ok(m)
        }
    }
}

fn gen_corpus(config: Option<&Path>, out: &Path, split: Option<(&Path, &Path)>) -> Result<()> {
    let cfg = match config {
        Some(p) => {
            let mut kv = load_kv(p)?;
            let c = CorpusConfig::from_kv(&mut kv)?;
            kv.finish()?;
            c
        }
        None => CorpusConfig::default(),
    };
    let records = generate_corpus(&cfg)?;
    save_corpus(out, &records, Some(&cfg))?;
    if let Some((los, nlos)) = split {
        let (l, n): (Vec<_>, Vec<_>) = records.iter().cloned().partition(|r| r.state == ChannelState::Los);
        save_corpus(los, &l, Some(&cfg))?;
        save_corpus(nlos, &n, Some(&cfg))?;
    }
    log::info!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

fn extract(corpus: &Path, out: &Path, params: bool) -> Result<()> {
    let (_, records) = load_corpus(corpus).with_context(|| format!("cannot load {}", corpus.display()))?;
    let rows: Vec<FeatureRow> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(FeatureRow {
                record_id: i,
                sample: uwb_nlos::density::TrainingSample {
                    bias: r.bias,
                    distance: r.distance,
                    features: extract_all(&r.signal()).with_context(|| format!("record {i}"))?,
                    state: r.state,
                },
            })
        })
        .collect::<Result<_>>()?;
    let distance_free = if params {
        let fv: Vec<FeatureVector> = rows.iter().map(|r| r.sample.features).collect();
        let d: Vec<f64> = rows.iter().map(|r| r.sample.distance).collect();
        let fit = fit_feature_models(&fv, &d)?;
        eprintln!(
            "r_max_slope={:?}\ntau_ds_offset={:?}",
            fit.params.r_max_slope, fit.params.tau_ds_offset
        );
        Some(
            rows.iter()
                .map(|r| to_distance_free(&r.sample.features, r.sample.distance, &fit.params))
                .collect::<uwb_nlos::Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    write_feature_rows(create(out)?, &rows, distance_free.as_deref())
}

fn abs_corr(a: &[f64], b: &[f64]) -> f64 {
    match correlation_coefficient(a, b) {
        Ok(c) => c.abs(),
        Err(_) => f64::NAN,
    }
}

fn correlate(features: &Path, out: Option<&PathBuf>) -> Result<()> {
    let rows = read_feature_rows(&fs::read_to_string(features)?)?;
    let mut w = output(out)?;
    writeln!(w, "state,target,n,{},d", FeatureVector::NAMES.join(","))?;
    for state in [ChannelState::Nlos, ChannelState::Los] {
        let sel: Vec<_> = rows.iter().filter(|r| r.sample.state == state).map(|r| r.sample).collect();
        let b: Vec<f64> = sel.iter().map(|s| s.bias).collect();
        let d: Vec<f64> = sel.iter().map(|s| s.distance).collect();
        for (name, target) in [("b", &b), ("d", &d)] {
            write!(w, "{state},{name},{}", sel.len())?;
            for k in 0..6 {
                let col: Vec<f64> = sel.iter().map(|s| s.features.to_array()[k]).collect();
                write!(w, ",{:.3}", abs_corr(target, &col))?;
            }
            writeln!(w, ",{:.3}", abs_corr(target, &d))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn simulate(corpus: &Path, noise: &NoiseModel, seed: u64, out: Option<&PathBuf>) -> Result<()> {
    let (_, records) = load_corpus(corpus).with_context(|| format!("cannot load {}", corpus.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = output(out)?;
    writeln!(w, "record_id,state,d_m,b_s,tau_s,threshold_toa_s")?;
    for (i, r) in records.iter().enumerate() {
        let tau = simulate_toa(r, noise, &mut rng);
        let th = threshold_toa(&r.signal(), DEFAULT_THRESHOLD_FRACTION).unwrap_or(f64::NAN);
        writeln!(w, "{i},{},{:?},{:?},{tau:?},{th:?}", r.state, r.distance, r.bias)?;
    }
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fit_density(
    features: &Path,
    mode: Smoothing,
    dims: usize,
    param: Parameterization,
    bins: Option<usize>,
    p_los: f64,
    wall_delay: Option<f64>,
    out: &Path,
) -> Result<()> {
    let rows = read_feature_rows(&fs::read_to_string(features)?)?;
    let samples: Vec<_> = rows.iter().map(|r| r.sample).collect();
    let wall = match wall_delay {
        Some(w) => w,
        None => {
            let min = samples
                .iter()
                .filter(|s| s.state == ChannelState::Nlos)
                .map(|s| s.bias)
                .fold(f64::INFINITY, f64::min);
            if !min.is_finite() {
                bail!("features table has no NLOS rows");
            }
            min
        }
    };
    let mut spec = ModelSpec::new(dims, mode, param, wall);
    spec.bins = bins;
    spec.p_los = p_los;
    let (model, report) = build_model(&samples, &spec)?;
    save_model(out, &model)?;
    eprintln!(
        "{dims}-D {mode} model: {} LOS and {} NLOS samples, {} + {} clamped into edge bins",
        report.n_los, report.n_nlos, report.los_clamped, report.nlos_clamped
    );
    for (name, fit) in [("LOS", report.los_fit), ("NLOS", report.nlos_fit)] {
        if let Some(f) = fit {
            eprintln!(
                "{name} fit: held-out mean log-likelihood {:.3} ({} train, {} held out){}",
                f.goodness.heldout_mean_loglik,
                f.goodness.n_train,
                f.goodness.n_heldout,
                if f.regularized { ", covariance regularized" } else { "" }
            );
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn localize(
    scenario: &Path,
    algo: Algorithm,
    model: Option<&Path>,
    step: f64,
    half_extent: f64,
    p_los: Option<f64>,
    noise: &NoiseModel,
    table_oversample: Option<usize>,
) -> Result<()> {
    let text = fs::read_to_string(scenario).with_context(|| format!("cannot read {}", scenario.display()))?;
    let s = Scenario::from_csv(&text, *noise)?;
    let grid = GridSpec::around(&s.anchors(), half_extent, step)?;
    let (est, model) = if algo == Algorithm::Ls {
        (ls_localize(&s, &grid)?, None)
    } else {
        let path = model.with_context(|| format!("--model is required for {algo}"))?;
        let mut m = load_model(path).with_context(|| format!("cannot load {}", path.display()))?;
        if let Some(p) = p_los {
            m = m.with_p_los(p)?;
        }
        let est = match algo {
            Algorithm::Ve => {
                let opts = IterativeOptions {
                    rule: DecisionRule::Soft,
                    ..IterativeOptions::default()
                };
                ve_localize(&s, &m, &grid, &opts)?
            }
            Algorithm::Ml2dIt | Algorithm::Ml4dIt => ml_it_localize(&s, &m, &grid, &IterativeOptions::default())?,
            _ => {
                let mode = match table_oversample {
                    Some(oversample) => LikelihoodMode::Tabulated { oversample },
                    None => LikelihoodMode::Exact,
                };
                ml_localize_with(&s, &m, &grid, mode)?
            }
        };
        (est, Some(m))
    };
    println!("algorithm {}", est.algorithm);
    println!("theta_x_m {:?}", est.theta.x);
    println!("theta_y_m {:?}", est.theta.y);
    println!("score {:?}", est.score);
    for (k, o) in s.observations().iter().enumerate() {
        let d = o.anchor.distance(&est.theta).max(MIN_DISTANCE);
        print!("link {k} anchor {} residual_m {:?}", o.anchor, SPEED_OF_LIGHT * o.tau - d);
        if let Some(m) = &model {
            // State posterior with the bias integrated out, at the estimate.
            let (wl, wn) = m.kernel(&m.model_features(&o.features, d)?)?.state_weights();
            if wl + wn > 0.0 {
                print!(" p_los_at_estimate {:.4}", wl / (wl + wn));
            }
        }
        if let Some(l) = est.links.get(k) {
            print!(
                " bias_s {:?} p_los {:.4} iterations {} converged {}",
                l.bias_estimate, l.p_los_posterior, l.iterations, l.converged
            );
        }
        println!();
    }
    Ok(())
}

fn run_sweep(
    config: &Path,
    out: &Path,
    plot_data: Option<&Path>,
    trials_out: Option<&Path>,
    threads: Option<usize>,
) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let exp = Experiment::prepare(cfg)?;
    let result = sweep(&exp)?;
    let fallbacks = result.trials.iter().filter(|t| t.fallback).count();
    if fallbacks > 0 {
        log::warn!("{fallbacks} estimates fell back to least squares");
    }
    write_results_csv(create(out)?, &result.summary)?;
    if let Some(p) = plot_data {
        write_plot_tsv(create(p)?, &result.summary)?;
    }
    if let Some(p) = trials_out {
        write_trials_csv(create(p)?, &result.trials)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenCorpus {
            config,
            out,
            los_out,
            nlos_out,
        } => gen_corpus(
            config.as_deref(),
            &out,
            los_out.as_deref().zip(nlos_out.as_deref()),
        ),
        Command::Extract { corpus, out, params } => extract(&corpus, &out, params),
        Command::Correlate { features, out } => correlate(&features, out.as_ref()),
        Command::Simulate {
            corpus,
            noise,
            seed,
            out,
        } => simulate(&corpus, &load_noise(noise.as_ref())?, seed, out.as_ref()),
        Command::FitDensity {
            features,
            mode,
            dims,
            param,
            bins,
            p_los,
            wall_delay,
            out,
        } => fit_density(&features, mode, dims, param, bins, p_los, wall_delay, &out),
        Command::Localize {
            scenario,
            algo,
            model,
            grid_step,
            grid_half_extent,
            p_los,
            noise,
            table_oversample,
        } => localize(
            &scenario,
            algo,
            model.as_deref(),
            grid_step,
            grid_half_extent,
            p_los,
            &load_noise(noise.as_ref())?,
            table_oversample,
        ),
        Command::Sweep {
            config,
            out,
            plot_data,
            trials_out,
            threads,
        } => run_sweep(&config, &out, plot_data.as_deref(), trials_out.as_deref(), threads),
    }
}
