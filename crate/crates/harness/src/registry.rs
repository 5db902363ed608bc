//! The seven registered experiments and their default configurations.

use abcgan_core::simulators::{Dcc, DccConfig, Glm, MixtureNormal, Mvn, Ricker, SimError, Simulator, UnivariateNormal};

use crate::config::*;
use crate::HarnessError;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentInfo {
    pub name: &'static str,
    pub description: &'static str,
    pub param_names: Vec<String>,
    /// The `[simulator.*]` table this experiment requires, if any.
    pub simulator_section: Option<&'static str>,
}

pub const EXPERIMENTS: [&str; 7] = [
    "univariate_normal",
    "mixture_normal",
    "mvn16",
    "glm16",
    "ricker",
    "dcc",
    "dcc_conv",
];

fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

pub fn lookup(name: &str) -> Option<ExperimentInfo> {
    let (name, description, param_names, section) = match name {
        "univariate_normal" => (
            "univariate_normal",
            "mean and variance of a univariate normal from 1000 observations",
            names(&["mu", "sigma2"]),
            None,
        ),
        "mixture_normal" => (
            "mixture_normal",
            "location of an equal mixture of a narrow and a wide normal, observed y = 0",
            names(&["theta"]),
            Some("mixture"),
        ),
        "mvn16" => ("mvn16", "mean of a 16-dimensional normal with identity covariance", indexed("x", 16), None),
        "glm16" => ("glm16", "16-dimensional linear Gaussian model s = Cθ + ε", indexed("theta", 16), Some("glm")),
        "ricker" => (
            "ricker",
            "Ricker population map observed through Poisson counts",
            names(&["log_r", "sigma", "phi"]),
            Some("ricker"),
        ),
        "dcc" => (
            "dcc",
            "day care center transmission model, matrix features summarized by a dense network",
            names(&["lambda", "beta", "theta"]),
            Some("dcc"),
        ),
        "dcc_conv" => (
            "dcc_conv",
            "day care center transmission model, convolutional summarizer",
            names(&["lambda", "beta", "theta"]),
            Some("dcc"),
        ),
        _ => return None,
    };
    Some(ExperimentInfo {
        name,
        description,
        param_names,
        simulator_section: section,
    })
}

/// Every experiment with its default configuration.
pub fn registry() -> Vec<(ExperimentInfo, ExperimentConfig)> {
    EXPERIMENTS
        .iter()
        .map(|&n| (lookup(n).expect("registered"), default_config(n).expect("registered")))
        .collect()
}

fn base(experiment: &str, prior: Vec<[f64; 2]>, true_theta: Vec<f64>) -> ExperimentConfig {
    let d = prior.len();
    ExperimentConfig {
        experiment: experiment.into(),
        method: Method::Abcgan,
        prior,
        true_theta,
        data: DataConfig {
            units: 10,
            sim_size: 10,
            transform: TransformKind::Identity,
            zero_observation: false,
        },
        simulator: SimulatorConfig::default(),
        network: NetworkConfig {
            summary_dim: 8,
            generator_hidden: vec![16],
            generator_activation: ActivationKind::Tanh,
            generator_noise: 0,
            approximator_hidden: vec![16],
            approximator_activation: ActivationKind::Tanh,
            approximator_noise: d,
            decoder_hidden: vec![16],
            decoder_activation: ActivationKind::Tanh,
            init: InitKind::Normal,
            init_std: 1.0,
            summarizer: SummarizerSection {
                kind: SummarizerKind::Deepset,
                hidden: vec![16, 16],
                activation: ActivationKind::Tanh,
                units: 10,
                filters: 8,
                kernel: 5,
                stride: 2,
                pool: 2,
            },
        },
        train: TrainSection {
            lr: 1e-3,
            decay: 0.9,
            eps: 1e-8,
            minibatch: 10,
            iterations: 1000,
            approx_rounds: 1,
            decoder_weight: 1.0,
            bandwidth: BandwidthSetting::Named("median".into()),
        },
        posterior: PosteriorSection { window: 100, bins: 50 },
        metrics: MetricsSection {
            kl: false,
            kl_bins: 100,
            kl_range: [-10.0, 10.0],
            symmetrize: false,
            l1: false,
            abs_band: [0.0, 0.0],
        },
        rejection: RejectionSection {
            proposals: 10_000,
            rule: RuleKind::Quantile,
            quantile: 0.01,
            epsilon: 0.0,
            standardize: true,
            summary: RejectionSummary::ColumnMeans,
        },
    }
}

pub fn default_config(name: &str) -> Option<ExperimentConfig> {
    let cfg = match name {
        "univariate_normal" => {
            let mut c = base(name, vec![[0.0, 5.0], [1.0, 5.0]], vec![3.0, 1.0]);
            // 1000 observations as 10 datasets of 100.
            c.data.units = 10;
            c.data.sim_size = 100;
            c.network.init = InitKind::FanIn;
            c.train.minibatch = 50;
            c.train.iterations = 4000;
            c.posterior.window = 500;
            c.rejection.summary = RejectionSummary::MeanVariance;
            c
        }
        "mixture_normal" => {
            let mut c = base(name, vec![[-10.0, 10.0]], vec![0.0]);
            c.data.units = 1;
            c.data.sim_size = 1;
            c.data.zero_observation = true;
            c.network.init = InitKind::FanIn;
            c.simulator.mixture = Some(MixtureSection { narrow_std: 0.1 });
            c.network.summarizer.kind = SummarizerKind::Mlp;
            c.network.summarizer.hidden = vec![16];
            c.train.iterations = 5000;
            c.posterior.window = 500;
            c.metrics.kl = true;
            c.metrics.abs_band = [0.2, 1.0];
            c.rejection.proposals = 500_000;
            c
        }
        "mvn16" => {
            let mut c = base(name, vec![[0.0, 10.0]; 16], vec![1.0; 16]);
            c.network.summary_dim = 16;
            c.train.iterations = 3000;
            c.network.init = InitKind::FanIn;
            c.posterior.window = 500;
            c.metrics.l1 = true;
            c
        }
        "glm16" => {
            let mut c = base(name, vec![[-100.0, 100.0]; 16], vec![0.0; 16]);
            c.simulator.glm = Some(GlmSection { noise_std: 1.0 });
            c.network.init = InitKind::FanIn;
            c.network.summary_dim = 16;
            c.train.lr = 1e-2;
            c.train.iterations = 4000;
            c.posterior.window = 500;
            c.metrics.l1 = true;
            c
        }
        "ricker" => {
            let mut c = base(name, vec![[0.0, 5.0], [0.0, 1.0], [0.0, 15.0]], vec![3.8, 0.3, 10.0]);
            // A series of 50 counts split into 5 windows of 10.
            c.data.units = 5;
            c.data.sim_size = 10;
            c.data.transform = TransformKind::Log1p;
            c.simulator.ricker = Some(RickerSection { n0: 1.0 });
            c.network.summary_dim = 10;
            c.network.generator_hidden = vec![20];
            c.network.generator_activation = ActivationKind::Relu;
            c.network.approximator_hidden = vec![];
            c.network.summarizer.kind = SummarizerKind::Lstm;
            c.network.summarizer.units = 10;
            c.train.iterations = 10_000;
            c.train.decoder_weight = 0.0;
            c.train.approx_rounds = 5;
            c.posterior.window = 1000;
            c
        }
        "dcc" | "dcc_conv" => {
            let mut c = base(name, vec![[0.0, 12.0], [0.0, 2.0], [0.0, 1.0]], vec![3.6, 0.6, 0.1]);
            c.data.units = 1;
            c.data.sim_size = 1;
            c.simulator.dcc = Some(DccSection {
                centers: 29,
                attendees: 53,
                strains: 33,
                horizon: 10.0,
                sampled_fraction: 1.0,
                outside: vec![],
            });
            c.network.generator_hidden = vec![];
            c.network.approximator_hidden = vec![];
            c.train.minibatch = 2;
            c.train.approx_rounds = 5;
            c.train.iterations = 1000;
            c.posterior.window = 200;
            c.rejection.proposals = 2000;
            c.rejection.quantile = 0.05;
            if name == "dcc" {
                c.data.transform = TransformKind::GutmannMean;
                c.network.summary_dim = 5;
                c.network.summarizer.kind = SummarizerKind::Mlp;
                c.network.summarizer.hidden = vec![16];
            } else {
                c.network.summary_dim = 160;
                c.network.summarizer.kind = SummarizerKind::Conv;
            }
            c
        }
        _ => return None,
    };
    Some(cfg)
}

pub(crate) fn dcc_config(s: &DccSection) -> Result<Dcc, SimError> {
    Dcc::new(DccConfig {
        centers: s.centers,
        attendees: s.attendees,
        strains: s.strains,
        horizon: s.horizon,
        outside: if s.outside.is_empty() { None } else { Some(s.outside.clone()) },
        sampled_fraction: s.sampled_fraction,
    })
}

/// The simulator an experiment config describes.
pub fn build_simulator(cfg: &ExperimentConfig) -> Result<Box<dyn Simulator>, HarnessError> {
    let sim_err = |e: SimError| HarnessError::Config(e.to_string());
    let d = cfg.prior.len();
    let sim: Box<dyn Simulator> = match cfg.experiment.as_str() {
        "univariate_normal" => Box::new(UnivariateNormal),
        "mixture_normal" => Box::new(MixtureNormal {
            narrow_std: section(&cfg.simulator.mixture)?.narrow_std,
        }),
        "mvn16" => Box::new(Mvn { dim: d }),
        "glm16" => Box::new(
            Glm::new(d)
                .map_err(sim_err)?
                .with_noise_std(section(&cfg.simulator.glm)?.noise_std),
        ),
        "ricker" => Box::new(Ricker {
            n0: section(&cfg.simulator.ricker)?.n0,
        }),
        "dcc" | "dcc_conv" => Box::new(dcc_config(section(&cfg.simulator.dcc)?).map_err(sim_err)?),
        other => return Err(HarnessError::Config(format!("unknown experiment {other:?}"))),
    };
    Ok(sim)
}

fn section<T>(s: &Option<T>) -> Result<&T, HarnessError> {
    s.as_ref()
        .ok_or_else(|| HarnessError::Config("missing simulator section".into()))
}

/// Density the posterior is compared against by the KL metric.
pub fn known_density(cfg: &ExperimentConfig) -> Option<impl Fn(f64) -> f64> {
    let mix = cfg.simulator.mixture.as_ref()?;
    let m = MixtureNormal {
        narrow_std: mix.narrow_std,
    };
    Some(move |x| m.target_pdf(x))
}
