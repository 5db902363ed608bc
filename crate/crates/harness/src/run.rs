//! Executes one configured experiment and writes its run directory:
//! `trace.csv`, `timing.csv`, `posterior.csv` and `report.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use abcgan_core::autodiff::Tensor;
use abcgan_core::baseline::{column_means, mean_variance, rejection_abc};
use abcgan_core::metrics::{kl_histogram, l1_mean_error, symmetrize, write_samples_csv};
use abcgan_core::model::{posterior_from_trace, AbcGanModel, InputTransform, IterationRecord, Observed};
use abcgan_core::rng::{derive_seed, rng_from, stream_seed, Stream};
use abcgan_core::simulators::Simulator;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method, RejectionSummary};
use crate::registry::{build_simulator, known_density, lookup};
use crate::HarnessError;

pub const TRACE_FILE: &str = "trace.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const POSTERIOR_FILE: &str = "posterior.csv";
pub const REPORT_FILE: &str = "report.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub samples: usize,
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
    /// Posterior mean keyed by parameter name.
    pub estimates: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl_in_range: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl_dropped: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l1_mean_error: Option<f64>,
    /// L1 error of each iteration's minibatch mean.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l1_trajectory: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abs_band_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub method: Method,
    pub seed: u64,
    /// `"ok"` or `"failed"`.
    pub status: String,
    pub error: Option<String>,
    pub param_names: Vec<String>,
    pub true_theta: Vec<f64>,
    pub iterations_completed: usize,
    pub posterior: Option<PosteriorSummary>,
    pub metrics: MetricsReport,
    pub wall_clock_s: f64,
    pub config: ExperimentConfig,
}

impl Report {
    pub fn read(run_dir: &Path) -> Result<Self, HarnessError> {
        let path = run_dir.join(REPORT_FILE);
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
    }

    fn write(&self, run_dir: &Path) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        write_file(&run_dir.join(REPORT_FILE), text.as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

fn is_matrix_experiment(cfg: &ExperimentConfig) -> bool {
    matches!(cfg.experiment.as_str(), "dcc" | "dcc_conv")
}

/// Raw observed units, units×(one simulator output). Series and i.i.d.
/// data come from one long simulation split into consecutive windows;
/// matrix data from one simulation per unit.
pub fn observed_units(cfg: &ExperimentConfig, sim: &dyn Simulator, seed: u64) -> Result<Tensor, HarnessError> {
    let d = &cfg.data;
    let unit_shape = sim.output_shape(d.sim_size);
    let mut shape = vec![d.units];
    shape.extend_from_slice(&unit_shape);
    if d.zero_observation {
        return Ok(Tensor::zeros(&shape));
    }
    let obs_seed = stream_seed(seed, Stream::Observed);
    if is_matrix_experiment(cfg) {
        let parts = (0..d.units)
            .map(|u| sim.simulate(&cfg.true_theta, derive_seed(obs_seed, u as u64, 0), d.sim_size))
            .collect::<Result<Vec<_>, _>>()?;
        return Tensor::stack(&parts).map_err(|e| HarnessError::Numeric(e.to_string()));
    }
    let long = sim.simulate(&cfg.true_theta, obs_seed, d.units * d.sim_size)?;
    long.reshape(&shape).map_err(|e| HarnessError::Numeric(e.to_string()))
}

fn trace_csv(names: &[String], trace: &[IterationRecord]) -> String {
    let mut out = String::from("iteration");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push_str(",L_A,L_G,L_theta\n");
    for r in trace {
        let last = r.last_approx();
        out.push_str(&r.iteration.to_string());
        for v in r.theta_mean() {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{},{},{}\n", last.l_a, r.l_g, last.l_theta));
    }
    out
}

fn timing_csv(trace: &[IterationRecord]) -> String {
    let mut out = String::from("iteration,elapsed_s\n");
    for r in trace {
        out.push_str(&format!("{},{}\n", r.iteration, r.elapsed_s));
    }
    out
}

fn summarize(names: &[String], samples: &Tensor) -> PosteriorSummary {
    let n = samples.rows();
    let d = samples.row_len();
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for j in 0..d {
        let col: Vec<f64> = (0..n).map(|i| samples.row(i)[j]).collect();
        let m = col.iter().sum::<f64>() / n.max(1) as f64;
        mean[j] = m;
        std[j] = (col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n.max(1) as f64).sqrt();
    }
    PosteriorSummary {
        samples: n,
        estimates: names.iter().cloned().zip(mean.iter().copied()).collect(),
        mean,
        std,
    }
}

fn sample_metrics(cfg: &ExperimentConfig, samples: &Tensor, summary: &PosteriorSummary) -> Result<MetricsReport, HarnessError> {
    let m = &cfg.metrics;
    let mut report = MetricsReport::default();
    if m.kl && samples.row_len() == 1 {
        if let Some(pdf) = known_density(cfg) {
            let xs = if m.symmetrize {
                symmetrize(samples.data())
            } else {
                samples.data().to_vec()
            };
            let kl = kl_histogram(pdf, &xs, (m.kl_range[0], m.kl_range[1]), m.kl_bins)
                .map_err(|e| HarnessError::Numeric(e.to_string()))?;
            report.kl = Some(kl.kl);
            report.kl_in_range = Some(kl.in_range);
            report.kl_dropped = Some(kl.dropped);
        }
    }
    if m.l1 {
        report.l1_mean_error =
            Some(l1_mean_error(&summary.mean, &cfg.true_theta).map_err(|e| HarnessError::Config(e.to_string()))?);
    }
    if m.abs_band[1] > m.abs_band[0] {
        let inside = samples.data().iter().filter(|x| m.abs_band[0] < x.abs() && x.abs() < m.abs_band[1]).count();
        report.abs_band_fraction = Some(inside as f64 / samples.len().max(1) as f64);
    }
    Ok(report)
}

/// Runs `cfg` with root seed `seed`, writing artifacts into `out`. On a
/// training failure the completed part of the trace and a `failed` report
/// are still written before the error is returned.
pub fn run(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Report, HarnessError> {
    cfg.validate()?;
    let info = lookup(&cfg.experiment).expect("validated experiment");
    let names = info.param_names;
    let sim = build_simulator(cfg)?;
    fs::create_dir_all(out).map_err(|e| HarnessError::Io(format!("{}: {e}", out.display())))?;
    let start = Instant::now();
    let raw = observed_units(cfg, sim.as_ref(), seed)?;
    let transform: InputTransform = cfg.data.transform.into();

    let mut report = Report {
        experiment: cfg.experiment.clone(),
        method: cfg.method,
        seed,
        status: "ok".into(),
        error: None,
        param_names: names.clone(),
        true_theta: cfg.true_theta.clone(),
        iterations_completed: 0,
        posterior: None,
        metrics: MetricsReport::default(),
        wall_clock_s: 0.0,
        config: cfg.clone(),
    };

    let outcome = match cfg.method {
        Method::Abcgan => run_abcgan(cfg, seed, out, sim.as_ref(), &raw, &transform, &names, &mut report),
        Method::Rejection => run_rejection(cfg, seed, sim.as_ref(), &raw, &transform, &names, &mut report),
    };
    report.wall_clock_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok(samples) => {
            write_samples_csv(&out.join(POSTERIOR_FILE), &names, &samples)
                .map_err(|e| HarnessError::Io(e.to_string()))?;
            report.write(out)?;
            Ok(report)
        }
        Err(e) => {
            report.status = "failed".into();
            report.error = Some(e.to_string());
            report.write(out)?;
            Err(e)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_abcgan(
    cfg: &ExperimentConfig,
    seed: u64,
    out: &Path,
    sim: &dyn Simulator,
    raw: &Tensor,
    transform: &InputTransform,
    names: &[String],
    report: &mut Report,
) -> Result<Tensor, HarnessError> {
    let observed = Observed::from_raw(raw, transform)?;
    let spec = cfg.model_spec(observed.inputs().shape()[1..].to_vec())?;
    let mut model = AbcGanModel::new(spec, &mut rng_from(stream_seed(seed, Stream::Init)))?;
    let train_cfg = cfg.train_config(seed)?;
    log::info!(
        "{}: {} iterations, minibatch {}, {} observed units",
        cfg.experiment,
        train_cfg.iterations,
        train_cfg.minibatch,
        observed.len()
    );
    let (trace, failure) = match model.train(sim, transform, &observed, &train_cfg) {
        Ok(t) => (t, None),
        Err(e) => (e.trace, Some(e.error)),
    };
    write_file(&out.join(TRACE_FILE), trace_csv(names, &trace).as_bytes())?;
    write_file(&out.join(TIMING_FILE), timing_csv(&trace).as_bytes())?;
    report.iterations_completed = trace.len();
    if let Some(e) = failure {
        return Err(e.into());
    }
    let posterior = posterior_from_trace(&trace, cfg.posterior.window)?;
    let summary = summarize(names, &posterior.samples);
    report.metrics = sample_metrics(cfg, &posterior.samples, &summary)?;
    if cfg.metrics.l1 {
        let trajectory = trace
            .iter()
            .map(|r| l1_mean_error(&r.theta_mean(), &cfg.true_theta).expect("matching dims"))
            .collect();
        report.metrics.l1_trajectory = Some(trajectory);
    }
    report.posterior = Some(summary);
    Ok(posterior.samples)
}

fn run_rejection(
    cfg: &ExperimentConfig,
    seed: u64,
    sim: &dyn Simulator,
    raw: &Tensor,
    transform: &InputTransform,
    names: &[String],
    report: &mut Report,
) -> Result<Tensor, HarnessError> {
    if cfg.experiment == "dcc_conv" {
        return Err(HarnessError::Config(
            "rejection needs fixed summaries; use the dcc experiment instead of dcc_conv".into(),
        ));
    }
    // The whole observed record is one dataset for the baseline.
    let observed = if is_matrix_experiment(cfg) {
        Tensor::new(raw.shape()[1..].to_vec(), raw.row(0).to_vec()).expect("unit shape")
    } else {
        let features = raw.len() / (cfg.data.units * cfg.data.sim_size);
        raw.clone()
            .reshape(&[cfg.data.units * cfg.data.sim_size, features])
            .map_err(|e| HarnessError::Numeric(e.to_string()))?
    };
    let kind = cfg.rejection.summary;
    let transform = transform.clone();
    let summary = move |data: &Tensor| -> Vec<f64> {
        let t = transform.apply(data);
        match kind {
            RejectionSummary::MeanVariance => mean_variance(&t),
            RejectionSummary::ColumnMeans if t.ndim() == 1 => t.data().to_vec(),
            RejectionSummary::ColumnMeans => column_means(&t),
        }
    };
    let prior = cfg.prior_spec()?;
    let result = rejection_abc(
        &prior,
        sim,
        &summary,
        &observed,
        &cfg.rejection_config(),
        stream_seed(seed, Stream::Baseline),
    )?;
    if result.accepted.is_empty() {
        return Err(HarnessError::Numeric(format!(
            "rejection accepted none of {} proposals",
            result.proposals
        )));
    }
    let summary = summarize(names, &result.samples);
    report.metrics = sample_metrics(cfg, &result.samples, &summary)?;
    report.metrics.acceptance_rate = Some(result.acceptance_rate);
    report.posterior = Some(summary);
    Ok(result.samples)
}

/// Writes `cfg` as TOML next to a run, for reuse with `--config`.
pub fn write_config(cfg: &ExperimentConfig, path: &Path) -> Result<(), HarnessError> {
    let mut f = fs::File::create(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(cfg.to_toml().as_bytes())
        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}
