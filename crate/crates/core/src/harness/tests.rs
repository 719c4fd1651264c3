use super::*;
use std::sync::OnceLock;

fn links() -> Vec<CorpusLink> {
    static LINKS: OnceLock<Vec<CorpusLink>> = OnceLock::new();
    LINKS
        .get_or_init(|| corpus_links(&generate_corpus(&CorpusConfig::default()).unwrap()).unwrap())
        .clone()
}

fn experiment(config: ExperimentConfig) -> Experiment {
    let wall = CorpusConfig::default().wall_delay();
    Experiment::from_links(config, links(), Some(wall)).unwrap()
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        p_los: vec![0.0, 0.5],
        trials: 6,
        grid_step: 0.05,
        grid_half_extent: 3.0,
        ..ExperimentConfig::default()
    }
}

#[test]
fn anchor_placement_examples() {
    assert_eq!(place_anchor(1, 3, 5.0).unwrap(), Point2::new(0.0, 5.0));
    let p = place_anchor(2, 3, 5.0).unwrap();
    let phi = 2.0 * std::f64::consts::PI / 3.0;
    assert_eq!(p, Point2::new(5.0 * phi.sin(), 5.0 * phi.cos()));
    assert!((p.x - 4.330127018922193).abs() < 1e-12 && (p.y + 2.5).abs() < 1e-12);
    assert_eq!(place_anchor(1, 4, 2.0).unwrap(), Point2::new(0.0, 2.0));
    assert!(place_anchor(0, 3, 1.0).is_err());
    assert!(place_anchor(4, 3, 1.0).is_err());
    assert!(place_anchor(1, 3, 0.0).is_err());
}

#[test]
fn constant_error_aggregates_to_that_constant() {
    let results: Vec<TrialResult> = (0..50)
        .flat_map(|t| {
            [(Algorithm::Ls, 0.3), (Algorithm::Ve, 1.25)].map(|(algorithm, e)| TrialResult {
                algorithm,
                p_los: 0.4,
                trial: t,
                theta_hat: Point2::new(e, 0.0),
                squared_error: e * e,
                fallback: false,
            })
        })
        .collect();
    let rows = aggregate(&results);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].algorithm, Algorithm::Ls);
    assert!((rows[0].rmse - 0.3).abs() < 1e-15);
    assert!((rows[1].rmse - 1.25).abs() < 1e-15);
    assert!(rows.iter().all(|r| r.trials == 50 && r.rmse_stderr < 1e-15));
}

#[test]
fn all_los_draws_are_los() {
    let exp = experiment(ExperimentConfig {
        p_los: vec![1.0],
        ..small_config()
    });
    for t in 0..20 {
        let s = draw_scenario(&exp, 1.0, &mut trial_rng(3, 0, t)).unwrap();
        for o in s.observations() {
            let truth = o.truth.unwrap();
            assert_eq!(truth.state, ChannelState::Los);
            assert_eq!(truth.bias, 0.0);
            assert!((o.anchor.distance(&Point2::ORIGIN) - truth.distance).abs() < 1e-12);
        }
    }
}

#[test]
fn trials_are_deterministic() {
    let exp = experiment(small_config());
    let a = run_trial(&exp, 0.5, 4, &mut trial_rng(11, 1, 4)).unwrap();
    let b = run_trial(&exp, 0.5, 4, &mut trial_rng(11, 1, 4)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), Algorithm::ALL.len());
    assert!(a.iter().all(|r| r.squared_error >= 0.0));
    let other = run_trial(&exp, 0.5, 5, &mut trial_rng(11, 1, 5)).unwrap();
    assert_ne!(a, other);
}

#[test]
fn noise_free_all_los_is_quantization_bounded() {
    let step = 0.01;
    let exp = experiment(ExperimentConfig {
        p_los: vec![1.0],
        trials: 1,
        grid_step: step,
        grid_half_extent: 1.0,
        noise: NoiseModel {
            sigma_n2: 1e-26,
            ..NoiseModel::default()
        },
        ..ExperimentConfig::default()
    });
    let out = sweep(&exp).unwrap();
    assert_eq!(out.summary.len(), Algorithm::ALL.len());
    for r in &out.summary {
        assert!(r.rmse <= step * std::f64::consts::SQRT_2 / 2.0, "{}: {}", r.algorithm, r.rmse);
    }
}

#[test]
fn summary_matches_recomputation_from_trial_rows() {
    let exp = experiment(small_config());
    let out = sweep(&exp).unwrap();
    let mut buf = Vec::new();
    write_trials_csv(&mut buf, &out.trials).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut sums: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let e = sums.entry((f[0].to_string(), f[1].to_string())).or_default();
        e.0 += f[5].parse::<f64>().unwrap();
        e.1 += 1;
    }
    assert_eq!(sums.len(), out.summary.len());
    for r in &out.summary {
        let (sum, n) = sums[&(r.algorithm.to_string(), format!("{:?}", r.p_los))];
        assert_eq!(n, r.trials);
        assert!(((sum / n as f64).sqrt() - r.rmse).abs() <= 1e-12);
    }
}

#[test]
fn output_tables() {
    let rows = vec![
        SummaryRow {
            algorithm: Algorithm::Ls,
            p_los: 0.0,
            trials: 10,
            rmse: 0.5,
            rmse_stderr: 0.01,
        },
        SummaryRow {
            algorithm: Algorithm::Ml2d,
            p_los: 0.0,
            trials: 10,
            rmse: 0.25,
            rmse_stderr: 0.02,
        },
        SummaryRow {
            algorithm: Algorithm::Ls,
            p_los: 1.0,
            trials: 10,
            rmse: 0.1,
            rmse_stderr: 0.003,
        },
    ];
    let mut csv = Vec::new();
    write_results_csv(&mut csv, &rows).unwrap();
    assert_eq!(
        String::from_utf8(csv).unwrap(),
        "algorithm,p_los,trials,rmse_m,rmse_stderr_m\nls,0.0,10,0.5,0.01\nml2d,0.0,10,0.25,0.02\nls,1.0,10,0.1,0.003\n"
    );
    let mut tsv = Vec::new();
    write_plot_tsv(&mut tsv, &rows).unwrap();
    assert_eq!(
        String::from_utf8(tsv).unwrap(),
        "p_los\tls\tml2d\n0.0\t0.5\t0.25\n1.0\t0.1\tNaN\n"
    );
}

#[test]
fn config_file_parsing() {
    let text = "trials = 25\np_los = 0, 0.5, 1\nalgorithms = ls, ml2d\nseed = 7\n\
                grid_step = 0.02\nlikelihood = exact\nnoise.sigma_n2 = 4e-20\n\
                corpus.n_nlos = 50\nmodel.ml2d = models/m.txt\n";
    let c = ExperimentConfig::from_kv(KvConfig::parse(text).unwrap(), Path::new("/data")).unwrap();
    assert_eq!(c.trials, 25);
    assert_eq!(c.p_los, vec![0.0, 0.5, 1.0]);
    assert_eq!(c.algorithms, vec![Algorithm::Ls, Algorithm::Ml2d]);
    assert_eq!(c.likelihood, LikelihoodMode::Exact);
    assert_eq!(c.noise.sigma_n2, 4e-20);
    assert_eq!(c.model_paths[&Algorithm::Ml2d], Path::new("/data/models/m.txt"));
    match &c.corpus {
        CorpusSource::Generate(g) => assert_eq!(g.n_nlos, 50),
        other => panic!("unexpected corpus source {other:?}"),
    }
    let split = ExperimentConfig::from_kv(
        KvConfig::parse("los_corpus = a.bin\nnlos_corpus = b.bin\n").unwrap(),
        Path::new("base"),
    )
    .unwrap();
    assert_eq!(
        split.corpus,
        CorpusSource::Split {
            los: PathBuf::from("base/a.bin"),
            nlos: PathBuf::from("base/b.bin")
        }
    );
}

#[test]
fn config_errors() {
    let bad = [
        "trails = 10\n",
        "n_anchors = 2\n",
        "p_los = 0, 1.5\n",
        "trials = 0\n",
        "algorithms = ls, ml9d\n",
        "likelihood = fast\n",
        "corpus = a.bin\nlos_corpus = b.bin\n",
        "corpus.bogus = 1\n",
        "model.ml2d = m.txt\nmodel.nope = x\n",
        "grid_step = -1\n",
    ];
    for text in bad {
        let r = KvConfig::parse(text).and_then(|kv| ExperimentConfig::from_kv(kv, Path::new(".")));
        assert!(r.is_err(), "accepted {text:?}");
    }
}

#[test]
fn missing_state_is_a_config_error() {
    let only_los: Vec<CorpusLink> = links().into_iter().filter(|l| l.state == ChannelState::Los).collect();
    let r = Experiment::from_links(small_config(), only_los, None);
    assert!(matches!(r, Err(Error::Config(_))));
}
