//! Experiment configuration. A user file is deep-merged over the registry
//! defaults of the chosen experiment, so every run sees a fully resolved
//! config. The file format is TOML; see `docs/config.md` for the schema.

use std::path::Path;

use abcgan_core::baseline::{AcceptanceRule, RejectionConfig};
use abcgan_core::layers::{Activation, ConvSpec, Init, PriorSpec};
use abcgan_core::mmd::KernelSpec;
use abcgan_core::model::{InputTransform, ModelSpec, SummarizerSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Abcgan,
    Rejection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub method: Method,
    /// `[lo, hi]` per parameter.
    pub prior: Vec<[f64; 2]>,
    /// Parameter used to generate the observed data.
    pub true_theta: Vec<f64>,
    pub data: DataConfig,
    pub simulator: SimulatorConfig,
    pub network: NetworkConfig,
    pub train: TrainSection,
    pub posterior: PosteriorSection,
    pub metrics: MetricsSection,
    pub rejection: RejectionSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Identity,
    Log1p,
    GutmannMean,
    NumminenMean,
}

impl From<TransformKind> for InputTransform {
    fn from(t: TransformKind) -> Self {
        match t {
            TransformKind::Identity => InputTransform::Identity,
            TransformKind::Log1p => InputTransform::Log1p,
            TransformKind::GutmannMean => InputTransform::GutmannMean,
            TransformKind::NumminenMean => InputTransform::NumminenMean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Number of observed units (datasets comparable to one simulator call).
    pub units: usize,
    /// `size` argument of every simulator call; also the length of each
    /// observed unit.
    pub sim_size: usize,
    pub transform: TransformKind,
    /// Use an all-zero observation instead of simulating at `true_theta`.
    pub zero_observation: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glm: Option<GlmSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ricker: Option<RickerSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dcc: Option<DccSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSection {
    pub narrow_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlmSection {
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RickerSection {
    pub n0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DccSection {
    pub centers: usize,
    pub attendees: usize,
    pub strains: usize,
    pub horizon: f64,
    pub sampled_fraction: f64,
    /// Outside-population strain distribution; empty means uniform.
    pub outside: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Identity,
    Sigmoid,
    Relu,
    Tanh,
}

impl From<ActivationKind> for Activation {
    fn from(a: ActivationKind) -> Self {
        match a {
            ActivationKind::Identity => Activation::Identity,
            ActivationKind::Sigmoid => Activation::Sigmoid,
            ActivationKind::Relu => Activation::Relu,
            ActivationKind::Tanh => Activation::Tanh,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummarizerKind {
    Mlp,
    Deepset,
    Lstm,
    Conv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarizerSection {
    pub kind: SummarizerKind,
    /// Hidden widths (mlp, deepset).
    pub hidden: Vec<usize>,
    pub activation: ActivationKind,
    /// LSTM units (lstm).
    pub units: usize,
    /// Convolution settings (conv); the dense head emits `summary_dim`.
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Normal,
    FanIn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub summary_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub generator_activation: ActivationKind,
    pub generator_noise: usize,
    pub approximator_hidden: Vec<usize>,
    pub approximator_activation: ActivationKind,
    pub approximator_noise: usize,
    pub decoder_hidden: Vec<usize>,
    pub decoder_activation: ActivationKind,
    pub init: InitKind,
    /// Standard deviation for `init = "normal"`.
    pub init_std: f64,
    pub summarizer: SummarizerSection,
}

/// Kernel bandwidth: a positive number, or `"median"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthSetting {
    Fixed(f64),
    Named(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    pub minibatch: usize,
    pub iterations: usize,
    pub approx_rounds: usize,
    pub decoder_weight: f64,
    pub bandwidth: BandwidthSetting,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorSection {
    /// Trailing iterations pooled into the posterior.
    pub window: usize,
    /// Histogram bins per dimension over the prior box.
    pub bins: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    /// Histogram KL divergence against the experiment's known density.
    pub kl: bool,
    pub kl_bins: usize,
    pub kl_range: [f64; 2],
    /// Mirror samples (`x` and `−x`) before computing the KL divergence.
    pub symmetrize: bool,
    /// L1 error of the posterior mean against `true_theta`, plus its
    /// per-iteration trajectory.
    pub l1: bool,
    /// Report the fraction of samples with `lo < |θ| < hi`; `[0, 0]` disables.
    pub abs_band: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionSummary {
    MeanVariance,
    ColumnMeans,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Quantile,
    Epsilon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RejectionSection {
    pub proposals: usize,
    pub rule: RuleKind,
    pub quantile: f64,
    pub epsilon: f64,
    pub standardize: bool,
    /// Summary of the transformed dataset.
    pub summary: RejectionSummary,
}

/// Recursively overlays `overlay` onto `base`. Tables merge key by key;
/// every other value replaces the base value.
pub fn deep_merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(existing) => deep_merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl ExperimentConfig {
    /// Registry defaults for `experiment`, overlaid with `overrides` (TOML
    /// text), then validated.
    pub fn resolve(experiment: &str, overrides: Option<&str>) -> Result<Self, HarnessError> {
        let defaults = crate::registry::default_config(experiment)
            .ok_or_else(|| HarnessError::Config(format!("unknown experiment {experiment:?}")))?;
        let mut value = toml::Value::try_from(&defaults).map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(text) = overrides {
            let overlay: toml::Table = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
            if let Some(name) = overlay.get("experiment") {
                if name.as_str() != Some(experiment) {
                    return Err(HarnessError::Config(format!(
                        "config file names experiment {name}, command line says {experiment:?}"
                    )));
                }
            }
            deep_merge(&mut value, toml::Value::Table(overlay));
        }
        let cfg: ExperimentConfig = value.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_file(experiment: &str, path: Option<&Path>) -> Result<Self, HarnessError> {
        let text = match path {
            Some(p) => Some(
                std::fs::read_to_string(p).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?,
            ),
            None => None,
        };
        Self::resolve(experiment, text.as_deref())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn prior_spec(&self) -> Result<PriorSpec, HarnessError> {
        let bounds: Vec<(f64, f64)> = self.prior.iter().map(|b| (b[0], b[1])).collect();
        PriorSpec::new(&bounds).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn kernel(&self) -> Result<KernelSpec, HarnessError> {
        match &self.train.bandwidth {
            BandwidthSetting::Fixed(bw) => KernelSpec::fixed(*bw).map_err(|e| HarnessError::Config(e.to_string())),
            BandwidthSetting::Named(s) if s == "median" => Ok(KernelSpec::median()),
            BandwidthSetting::Named(s) => Err(HarnessError::Config(format!(
                "train.bandwidth must be a positive number or \"median\", got {s:?}"
            ))),
        }
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig, HarnessError> {
        let t = &self.train;
        Ok(TrainConfig {
            lr: t.lr,
            decay: t.decay,
            eps: t.eps,
            minibatch: t.minibatch,
            iterations: t.iterations,
            approx_rounds: t.approx_rounds,
            decoder_weight: t.decoder_weight,
            seed,
            kernel: self.kernel()?,
            sim_size: self.data.sim_size,
            frozen: Vec::new(),
        })
    }

    pub fn rejection_config(&self) -> RejectionConfig {
        let r = &self.rejection;
        RejectionConfig {
            proposals: r.proposals,
            rule: match r.rule {
                RuleKind::Quantile => AcceptanceRule::Quantile(r.quantile),
                RuleKind::Epsilon => AcceptanceRule::Epsilon(r.epsilon),
            },
            sim_size: self.data.units * self.data.sim_size,
            standardize: r.standardize,
        }
    }

    /// Network description for a summarizer input of `input_shape`.
    pub fn model_spec(&self, input_shape: Vec<usize>) -> Result<ModelSpec, HarnessError> {
        let n = &self.network;
        let s = &n.summarizer;
        let summarizer = match s.kind {
            SummarizerKind::Mlp => SummarizerSpec::Mlp {
                hidden: s.hidden.clone(),
                activation: s.activation.into(),
            },
            SummarizerKind::Deepset => SummarizerSpec::DeepSet {
                hidden: s.hidden.clone(),
                activation: s.activation.into(),
            },
            SummarizerKind::Lstm => SummarizerSpec::Lstm { units: s.units },
            SummarizerKind::Conv => SummarizerSpec::Conv(ConvSpec {
                filters: s.filters,
                kernel: s.kernel,
                stride: s.stride,
                pool: s.pool,
                outputs: n.summary_dim,
            }),
        };
        Ok(ModelSpec {
            prior: self.prior_spec()?,
            input_shape,
            summary_dim: n.summary_dim,
            generator_hidden: n.generator_hidden.clone(),
            generator_activation: n.generator_activation.into(),
            generator_noise: n.generator_noise,
            approximator_hidden: n.approximator_hidden.clone(),
            approximator_activation: n.approximator_activation.into(),
            approximator_noise: n.approximator_noise,
            summarizer,
            decoder_hidden: n.decoder_hidden.clone(),
            decoder_activation: n.decoder_activation.into(),
            init: match n.init {
                InitKind::Normal => Init::Normal { std: n.init_std },
                InitKind::FanIn => Init::FanIn,
            },
        })
    }

    /// Checks every field against the experiment's schema. Runs before any
    /// simulation or training.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        let info = crate::registry::lookup(&self.experiment)
            .ok_or_else(|| HarnessError::Config(format!("unknown experiment {:?}", self.experiment)))?;
        let prior = self.prior_spec()?;
        if prior.dim() != info.param_names.len() {
            return bad(format!(
                "{} has {} parameters, prior lists {}",
                self.experiment,
                info.param_names.len(),
                prior.dim()
            ));
        }
        if self.true_theta.len() != prior.dim() {
            return bad(format!("true_theta has {} entries, expected {}", self.true_theta.len(), prior.dim()));
        }
        let inside = self.true_theta.iter().zip(&self.prior).all(|(t, b)| b[0] <= *t && *t <= b[1]);
        if !self.data.zero_observation && !inside {
            return bad(format!("true_theta {:?} lies outside the prior box", self.true_theta));
        }
        if self.data.units == 0 || self.data.sim_size == 0 {
            return bad("data.units and data.sim_size must be positive".into());
        }
        let d = &self.data;
        if d.zero_observation && self.experiment != "mixture_normal" {
            return bad("data.zero_observation applies to mixture_normal only".into());
        }
        let sections = [
            ("mixture", self.simulator.mixture.is_some()),
            ("glm", self.simulator.glm.is_some()),
            ("ricker", self.simulator.ricker.is_some()),
            ("dcc", self.simulator.dcc.is_some()),
        ];
        for (name, present) in sections {
            if present && info.simulator_section != Some(name) {
                return bad(format!("simulator.{name} does not apply to {}", self.experiment));
            }
            if !present && info.simulator_section == Some(name) {
                return bad(format!("{} needs a simulator.{name} section", self.experiment));
            }
        }
        let is_matrix = matches!(self.experiment.as_str(), "dcc" | "dcc_conv");
        if matches!(d.transform, TransformKind::GutmannMean | TransformKind::NumminenMean) && !is_matrix {
            return bad(format!("transform {:?} needs matrix data", d.transform));
        }
        self.kernel()?;
        self.train_config(0)?
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.posterior.window == 0 || self.posterior.bins == 0 {
            return bad("posterior.window and posterior.bins must be positive".into());
        }
        if self.method == Method::Abcgan && self.posterior.window > self.train.iterations {
            return bad(format!(
                "posterior.window {} exceeds train.iterations {}",
                self.posterior.window, self.train.iterations
            ));
        }
        let m = &self.metrics;
        if m.kl && (m.kl_bins == 0 || !(m.kl_range[0] < m.kl_range[1])) {
            return bad("metrics.kl needs kl_bins > 0 and kl_range[0] < kl_range[1]".into());
        }
        if m.kl && self.experiment != "mixture_normal" {
            return bad("metrics.kl needs a known density; only mixture_normal has one".into());
        }
        if !(m.abs_band[0] <= m.abs_band[1]) {
            return bad(format!("metrics.abs_band {:?} is not ordered", m.abs_band));
        }
        let n = &self.network;
        if n.summary_dim == 0 {
            return bad("network.summary_dim must be positive".into());
        }
        if n.init == InitKind::Normal && !(n.init_std > 0.0 && n.init_std.is_finite()) {
            return bad(format!("network.init_std must be positive, got {}", n.init_std));
        }
        let s = &n.summarizer;
        match s.kind {
            SummarizerKind::Lstm if s.units == 0 => return bad("lstm summarizer needs units > 0".into()),
            SummarizerKind::Deepset if s.hidden.is_empty() => {
                return bad("deepset summarizer needs at least one hidden layer".into())
            }
            SummarizerKind::Conv if !is_matrix || d.transform != TransformKind::Identity => {
                return bad("conv summarizer needs raw DCC matrices (transform = \"identity\")".into())
            }
            _ => {}
        }
        if n.generator_hidden.contains(&0) || n.approximator_hidden.contains(&0) || n.decoder_hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        self.rejection_config()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(dcc) = &self.simulator.dcc {
            crate::registry::dcc_config(dcc).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if let Some(glm) = &self.simulator.glm {
            if !(glm.noise_std >= 0.0 && glm.noise_std.is_finite()) {
                return bad(format!("simulator.glm.noise_std must be non-negative, got {}", glm.noise_std));
            }
        }
        if let Some(mix) = &self.simulator.mixture {
            if !(mix.narrow_std > 0.0 && mix.narrow_std.is_finite()) {
                return bad(format!("simulator.mixture.narrow_std must be positive, got {}", mix.narrow_std));
            }
        }
        if let Some(r) = &self.simulator.ricker {
            if !(r.n0 > 0.0 && r.n0.is_finite()) {
                return bad(format!("simulator.ricker.n0 must be positive, got {}", r.n0));
            }
        }
        Ok(())
    }
}
