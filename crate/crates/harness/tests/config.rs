use abcgan_harness::config::{deep_merge, ExperimentConfig};
use abcgan_harness::registry::{build_simulator, lookup};
use abcgan_harness::{default_config, registry, run, Method, EXPERIMENTS};

#[test]
fn registry_defaults_validate() {
    let reg = registry();
    assert_eq!(reg.len(), EXPERIMENTS.len());
    for (info, cfg) in &reg {
        assert_eq!(info.name, cfg.experiment);
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", info.name));
        assert_eq!(cfg.prior.len(), info.param_names.len());
        let sim = build_simulator(cfg).unwrap();
        assert_eq!(sim.param_dim(), cfg.prior.len());
    }
}

#[test]
fn registered_defaults_match_reference_settings() {
    let ricker = default_config("ricker").unwrap();
    assert_eq!(ricker.prior, vec![[0.0, 5.0], [0.0, 1.0], [0.0, 15.0]]);
    assert_eq!(ricker.true_theta, vec![3.8, 0.3, 10.0]);

    let glm = default_config("glm16").unwrap();
    assert_eq!((glm.train.iterations, glm.train.minibatch, glm.train.lr), (4000, 10, 1e-2));
    assert!(glm.prior.iter().all(|b| *b == [-100.0, 100.0]));

    let mix = default_config("mixture_normal").unwrap();
    assert_eq!((mix.train.iterations, mix.train.minibatch, mix.train.lr), (5000, 10, 1e-3));

    let mvn = default_config("mvn16").unwrap();
    assert_eq!(mvn.prior.len(), 16);
    assert!(mvn.metrics.l1);
}

#[test]
fn overrides_merge_into_defaults() {
    let cfg = ExperimentConfig::resolve("mvn16", Some("[train]\nlr = 0.05\n")).unwrap();
    let base = default_config("mvn16").unwrap();
    assert_eq!(cfg.train.lr, 0.05);
    assert_eq!(cfg.train.iterations, base.train.iterations);
    assert_eq!(cfg.network, base.network);
}

#[test]
fn deep_merge_keeps_sibling_keys() {
    let mut base: toml::Value = toml::from_str("[a]\nx = 1\ny = 2\n[b]\nz = 3\n").unwrap();
    deep_merge(&mut base, toml::from_str("[a]\ny = 5\n").unwrap());
    let expected: toml::Value = toml::from_str("[a]\nx = 1\ny = 5\n[b]\nz = 3\n").unwrap();
    assert_eq!(base, expected);
}

#[test]
fn serialized_config_round_trips() {
    for name in EXPERIMENTS {
        let cfg = default_config(name).unwrap();
        let back = ExperimentConfig::resolve(name, Some(&cfg.to_toml())).unwrap();
        assert_eq!(back, cfg, "{name}");
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let cases = [
        ("univariate_normal", "[train]\nminibatch = 1\n"),
        ("univariate_normal", "true_theta = [9.0, 1.0]\n"),
        ("univariate_normal", "prior = [[0.0, 5.0]]\n"),
        ("univariate_normal", "[posterior]\nwindow = 999999\n"),
        ("univariate_normal", "[train]\nbandwidth = \"silverman\"\n"),
        ("univariate_normal", "[simulator.glm]\nnoise_std = 1.0\n"),
        ("ricker", "[simulator.ricker]\nn0 = -1.0\n"),
        ("mvn16", "experiment = \"glm16\"\n"),
        ("mvn16", "[metrics]\nkl = true\n"),
        ("mvn16", "[network]\nwidth = 3\n"),
    ];
    for (name, text) in cases {
        let err = ExperimentConfig::resolve(name, Some(text)).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{name} with {text:?}: {err}");
    }
    assert!(lookup("nope").is_none());
    assert!(ExperimentConfig::resolve("nope", None).is_err());
}

#[test]
fn short_mvn_run_tracks_l1_every_iteration() {
    let cfg = ExperimentConfig::resolve(
        "mvn16",
        Some("[train]\niterations = 15\n[posterior]\nwindow = 5\n[data]\nsim_size = 10\n"),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = run(&cfg, 2, dir.path()).unwrap();
    let traj = report.metrics.l1_trajectory.as_ref().unwrap();
    assert_eq!(traj.len(), 15);
    assert!(traj.iter().all(|v| v.is_finite() && *v >= 0.0));
    assert!(report.metrics.l1_mean_error.unwrap() >= 0.0);
    for file in ["trace.csv", "timing.csv", "posterior.csv", "report.json"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
}

#[test]
fn rejection_run_reports_its_acceptance_rate() {
    let cfg = ExperimentConfig::resolve(
        "univariate_normal",
        Some("method = \"rejection\"\n[rejection]\nproposals = 400\nquantile = 0.05\n"),
    )
    .unwrap();
    assert_eq!(cfg.method, Method::Rejection);
    let dir = tempfile::tempdir().unwrap();
    let report = run(&cfg, 4, dir.path()).unwrap();
    assert_eq!(report.metrics.acceptance_rate, Some(0.05));
    assert_eq!(report.posterior.unwrap().samples, 20);
}
