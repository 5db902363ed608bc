//! Rejection ABC: draw θ from the prior, simulate, and keep the proposals
//! whose summaries lie closest to the observed summary.

use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::layers::PriorSpec;
use crate::rng::{derive_seed, rng_from};
use crate::simulators::{SimError, Simulator};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("invalid rejection config: {0}")]
    Config(String),
    #[error("proposal {index}: {source}")]
    Simulator {
        index: usize,
        #[source]
        source: SimError,
    },
    #[error("summary of proposal {index} has length {got}, observed summary has {expected}")]
    SummaryLength { index: usize, got: usize, expected: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AcceptanceRule {
    /// Accept every proposal with distance ≤ ε.
    Epsilon(f64),
    /// Accept the ⌈q·n⌉ closest proposals.
    Quantile(f64),
}

impl Default for AcceptanceRule {
    fn default() -> Self {
        AcceptanceRule::Quantile(0.01)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RejectionConfig {
    pub proposals: usize,
    pub rule: AcceptanceRule,
    /// `size` argument of every simulator call.
    pub sim_size: usize,
    /// Divide each summary coordinate by its median absolute deviation
    /// across proposals before taking Euclidean distances.
    pub standardize: bool,
}

impl Default for RejectionConfig {
    fn default() -> Self {
        Self {
            proposals: 10_000,
            rule: AcceptanceRule::default(),
            sim_size: 1,
            standardize: true,
        }
    }
}

impl RejectionConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.proposals == 0 {
            return Err(BaselineError::Config("need at least one proposal".into()));
        }
        if self.sim_size == 0 {
            return Err(BaselineError::Config("sim_size must be positive".into()));
        }
        match self.rule {
            AcceptanceRule::Quantile(q) if !(q > 0.0 && q <= 1.0) => {
                Err(BaselineError::Config(format!("quantile must lie in (0, 1], got {q}")))
            }
            AcceptanceRule::Epsilon(e) if e.is_nan() || e < 0.0 => {
                Err(BaselineError::Config(format!("epsilon must be non-negative, got {e}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RejectionResult {
    /// Accepted θ in proposal order, accepted×d.
    pub samples: Tensor,
    /// Indices of the accepted proposals, ascending.
    pub accepted: Vec<usize>,
    /// Distance of every proposal to the observed summary.
    pub distances: Vec<f64>,
    pub proposals: usize,
    pub acceptance_rate: f64,
    /// Largest accepted distance (the effective ε), or the configured ε
    /// when nothing was accepted.
    pub threshold: f64,
}

/// `(sample mean, sample variance)` over the rows of a size×1 dataset.
pub fn mean_variance(data: &Tensor) -> Vec<f64> {
    let x = data.data();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    vec![mean, var]
}

/// Per-column means of a samples×features dataset.
pub fn column_means(data: &Tensor) -> Vec<f64> {
    let (n, k) = (data.rows(), data.row_len());
    let mut out = vec![0.0; k];
    for i in 0..n {
        for (o, v) in out.iter_mut().zip(data.row(i)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= n as f64);
    out
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median absolute deviation of each coordinate; zero deviations become 1.
fn mad_scales(summaries: &[Vec<f64>]) -> Vec<f64> {
    let k = summaries[0].len();
    (0..k)
        .map(|j| {
            let mut col: Vec<f64> = summaries.iter().map(|s| s[j]).collect();
            let med = median(&mut col);
            let mut dev: Vec<f64> = col.iter().map(|v| (v - med).abs()).collect();
            let mad = median(&mut dev);
            if mad > 0.0 && mad.is_finite() {
                mad
            } else {
                1.0
            }
        })
        .collect()
}

/// Rejection sampler. Prior draws come from one stream seeded by `seed`;
/// proposal `i` is simulated with `derive_seed(seed, i, 0)`.
pub fn rejection_abc(
    prior: &PriorSpec,
    simulator: &dyn Simulator,
    summary: &(dyn Fn(&Tensor) -> Vec<f64> + Sync),
    observed: &Tensor,
    cfg: &RejectionConfig,
    seed: u64,
) -> Result<RejectionResult, BaselineError> {
    cfg.validate()?;
    if prior.dim() != simulator.param_dim() {
        return Err(BaselineError::Config(format!(
            "prior has {} dimensions, simulator takes {}",
            prior.dim(),
            simulator.param_dim()
        )));
    }
    let n = cfg.proposals;
    let thetas = prior.sample(&mut rng_from(seed), n);
    let target = summary(observed);
    let summaries = (0..n)
        .into_par_iter()
        .map(|i| {
            let data = simulator
                .simulate(thetas.row(i), derive_seed(seed, i as u64, 0), cfg.sim_size)
                .map_err(|source| BaselineError::Simulator { index: i, source })?;
            let s = summary(&data);
            if s.len() != target.len() {
                return Err(BaselineError::SummaryLength {
                    index: i,
                    got: s.len(),
                    expected: target.len(),
                });
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let scales = if cfg.standardize {
        mad_scales(&summaries)
    } else {
        vec![1.0; target.len()]
    };
    let distances: Vec<f64> = summaries
        .iter()
        .map(|s| {
            s.iter()
                .zip(&target)
                .zip(&scales)
                .map(|((a, b), w)| ((a - b) / w).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();

    let mut accepted: Vec<usize> = match cfg.rule {
        AcceptanceRule::Epsilon(eps) => (0..n).filter(|&i| distances[i] <= eps).collect(),
        AcceptanceRule::Quantile(q) => {
            let k = ((q * n as f64).ceil() as usize).clamp(1, n);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
            order.truncate(k);
            order
        }
    };
    accepted.sort_unstable();
    if accepted.is_empty() {
        log::warn!("rejection ABC accepted none of {n} proposals");
    }
    let threshold = match (cfg.rule, accepted.is_empty()) {
        (AcceptanceRule::Epsilon(eps), true) => eps,
        _ => accepted.iter().map(|&i| distances[i]).fold(0.0, f64::max),
    };
    let samples = if accepted.is_empty() {
        Tensor::zeros(&[0, prior.dim()])
    } else {
        thetas.select_rows(&accepted)
    };
    Ok(RejectionResult {
        samples,
        acceptance_rate: accepted.len() as f64 / n as f64,
        accepted,
        distances,
        proposals: n,
        threshold,
    })
}
