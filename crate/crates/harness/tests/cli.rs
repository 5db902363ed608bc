use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use abcgan_harness::Report;

fn abcgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abcgan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn short_config(dir: &Path) -> String {
    let path = dir.join("short.toml");
    fs::write(
        &path,
        "[train]\niterations = 60\nminibatch = 10\n\n[posterior]\nwindow = 20\n\n[data]\nsim_size = 30\n",
    )
    .unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn list_shows_every_experiment() {
    let out = abcgan(&["list"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 7);
    for name in abcgan_harness::EXPERIMENTS {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing");
    }
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nlearning_rate = 0.1\n").unwrap();
    let out = abcgan(&[
        "run",
        "--experiment",
        "univariate_normal",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "1",
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn unknown_experiment_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = abcgan(&[
        "run",
        "--experiment",
        "lotka_volterra",
        "--seed",
        "1",
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_plotdata_and_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let run_dir = dir.path().join("run");
    let out = abcgan(&[
        "run",
        "--experiment",
        "univariate_normal",
        "--config",
        &cfg,
        "--seed",
        "3",
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let report = Report::read(&run_dir).unwrap();
    assert_eq!(report.status, "ok");
    assert_eq!(report.iterations_completed, 60);
    let post = report.posterior.as_ref().unwrap();
    assert_eq!(post.samples, 20 * 10);
    assert!(post.estimates.contains_key("mu") && post.estimates.contains_key("sigma2"));

    let trace = fs::read_to_string(run_dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "iteration,mu,sigma2,L_A,L_G,L_theta");
    assert_eq!(trace.lines().count(), 61);

    let out = abcgan(&["plotdata", "--run", run_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for param in ["mu", "sigma2"] {
        let hist = fs::read_to_string(run_dir.join(format!("plot_hist_{param}.csv"))).unwrap();
        let mut lines = hist.lines();
        assert_eq!(lines.next(), Some("bin_lo,bin_hi,count"));
        let total: usize = lines.map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(total, post.samples, "{param}");
    }

    let out = abcgan(&["compare", "--runs", run_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    let mut blocks = table.split("\n\n");
    let per_run = blocks.next().unwrap();
    assert_eq!(per_run.lines().count(), 2);
    assert!(per_run.contains("univariate_normal\tAbcgan\t3\tok"));
    let summary = blocks.next().unwrap();
    assert!(summary.contains("univariate_normal\tAbcgan\t1/1"));
}

#[test]
fn plotdata_on_a_missing_run_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = abcgan(&["plotdata", "--run", dir.path().join("nothing").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}
