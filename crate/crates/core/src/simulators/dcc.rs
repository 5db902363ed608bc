use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::{SimError, Simulator};
use crate::autodiff::Tensor;
use crate::layers::PriorSpec;
use crate::rng::{derive_seed, rng_from};

pub const NUMMINEN_DIM: usize = 4;
pub const GUTMANN_DIM: usize = 5;

/// Settings of the day care center transmission model.
#[derive(Clone, Debug, PartialEq)]
pub struct DccConfig {
    pub centers: usize,
    pub attendees: usize,
    pub strains: usize,
    /// Observation time, in units of the mean carriage duration.
    pub horizon: f64,
    /// Strain frequencies in the outside population; `None` means uniform.
    pub outside: Option<Vec<f64>>,
    /// Fraction of attendees whose swabs are reported.
    pub sampled_fraction: f64,
}

impl Default for DccConfig {
    fn default() -> Self {
        Self {
            centers: 29,
            attendees: 53,
            strains: 33,
            horizon: 10.0,
            outside: None,
            sampled_fraction: 1.0,
        }
    }
}

/// Multi-strain carriage dynamics in independent day care centers, with
/// θ = (Λ, β, θ_co).
///
/// An attendee not carrying strain `s` acquires it at rate
/// `(Λ·P_s + β·c_s/(N−1))·(θ_co if already carrying any strain else 1)`,
/// where `c_s` counts the other attendees carrying `s`. Each carried strain
/// clears at rate 1. All attendees start clear, and the carriage matrix is
/// read off at the horizon.
#[derive(Clone, Debug)]
pub struct Dcc {
    config: DccConfig,
    outside: Vec<f64>,
}

impl Dcc {
    pub fn new(config: DccConfig) -> Result<Self, SimError> {
        if config.centers == 0 || config.attendees == 0 || config.strains == 0 {
            return Err(SimError::Config("centers, attendees and strains must be positive".into()));
        }
        if !(config.horizon > 0.0 && config.horizon.is_finite()) {
            return Err(SimError::Config(format!("horizon must be positive, got {}", config.horizon)));
        }
        if !(config.sampled_fraction > 0.0 && config.sampled_fraction <= 1.0) {
            return Err(SimError::Config(format!(
                "sampled fraction must lie in (0, 1], got {}",
                config.sampled_fraction
            )));
        }
        let outside = match &config.outside {
            None => vec![1.0 / config.strains as f64; config.strains],
            Some(p) => {
                let total: f64 = p.iter().sum();
                if p.len() != config.strains || p.iter().any(|&v| v < 0.0 || !v.is_finite()) || total <= 0.0 {
                    return Err(SimError::Config("outside strain frequencies must be non-negative, one per strain".into()));
                }
                p.iter().map(|v| v / total).collect()
            }
        };
        Ok(Self { config, outside })
    }

    pub fn config(&self) -> &DccConfig {
        &self.config
    }

    /// Attendee rows reported per center.
    pub fn reported_attendees(&self) -> usize {
        ((self.config.attendees as f64 * self.config.sampled_fraction).round() as usize).clamp(1, self.config.attendees)
    }

    /// One center's carriage matrix at the horizon, row-major attendees×strains.
    pub fn simulate_center(&self, theta: &[f64], seed: u64) -> Vec<bool> {
        let (lambda, beta, co) = (theta[0], theta[1], theta[2]);
        let (n, s_count) = (self.config.attendees, self.config.strains);
        let within = if n > 1 { beta / (n - 1) as f64 } else { 0.0 };
        let mut rng = rng_from(seed);

        let mut carry = vec![false; n * s_count];
        let mut carried: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut count = vec![0usize; s_count];
        // (attendee, strain) pairs currently carried, for uniform clearance picks.
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        let mut rate = vec![0.0; s_count];
        let mut weight = vec![0.0; n];

        let mut t = 0.0;
        loop {
            for (s, r) in rate.iter_mut().enumerate() {
                *r = lambda * self.outside[s] + within * count[s] as f64;
            }
            let total_rate: f64 = rate.iter().sum();
            let mut acquisition = 0.0;
            for (i, w) in weight.iter_mut().enumerate() {
                let own: f64 = carried[i].iter().map(|&s| rate[s]).sum();
                let mult = if carried[i].is_empty() { 1.0 } else { co };
                *w = (mult * (total_rate - own)).max(0.0);
                acquisition += *w;
            }
            let clearance = pairs.len() as f64;
            let total = acquisition + clearance;
            if total <= 0.0 {
                break;
            }
            let wait: f64 = Exp1.sample(&mut rng);
            t += wait / total;
            if t > self.config.horizon {
                break;
            }
            let mut u = rng.random::<f64>() * total;
            if u < clearance {
                let k = (u as usize).min(pairs.len() - 1);
                let (i, s) = pairs.swap_remove(k);
                carry[i * s_count + s] = false;
                carried[i].retain(|&x| x != s);
                count[s] -= 1;
            } else {
                u -= clearance;
                let i = pick(&weight, u);
                let mult = if carried[i].is_empty() { 1.0 } else { co };
                let mut v = rng.random::<f64>() * weight[i] / mult;
                let mut chosen = None;
                for s in 0..s_count {
                    if carry[i * s_count + s] || rate[s] <= 0.0 {
                        continue;
                    }
                    chosen = Some(s);
                    if v < rate[s] {
                        break;
                    }
                    v -= rate[s];
                }
                let Some(s) = chosen else { continue };
                carry[i * s_count + s] = true;
                carried[i].push(s);
                count[s] += 1;
                pairs.push((i, s));
            }
        }
        carry
    }
}

/// Index drawn with probability proportional to `weights`, given
/// `u ∈ [0, Σ weights)`. Rounding at the top end falls back to the last
/// positive weight.
fn pick(weights: &[f64], mut u: f64) -> usize {
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        if u < w {
            return i;
        }
        u -= w;
        last = i;
    }
    last
}

impl Simulator for Dcc {
    fn name(&self) -> &'static str {
        "dcc"
    }

    fn param_dim(&self) -> usize {
        3
    }

    fn prior(&self) -> PriorSpec {
        PriorSpec::new(&[(0.0, 12.0), (0.0, 2.0), (0.0, 1.0)]).expect("valid box")
    }

    /// `size` is ignored; a dataset is always one matrix per center.
    fn output_shape(&self, _size: usize) -> Vec<usize> {
        vec![self.config.centers, self.reported_attendees(), self.config.strains]
    }

    fn simulate(&self, theta: &[f64], seed: u64, _size: usize) -> Result<Tensor, SimError> {
        if theta.iter().any(|v| !v.is_finite()) || theta.iter().any(|&v| v < 0.0) {
            return Err(SimError::invalid(self.name(), theta, "rates must be finite and non-negative"));
        }
        let rows = self.reported_attendees();
        let s = self.config.strains;
        let mut data = Vec::with_capacity(self.config.centers * rows * s);
        for c in 0..self.config.centers {
            let m = self.simulate_center(theta, derive_seed(seed, c as u64, 0));
            data.extend(m[..rows * s].iter().map(|&b| f64::from(u8::from(b))));
        }
        Ok(Tensor::new(self.output_shape(0), data).expect("centers×rows×strains"))
    }
}

fn matrix_dims(m: &Tensor) -> (usize, usize, usize) {
    match m.shape() {
        [r, c] => (1, *r, *c),
        [n, r, c] => (*n, *r, *c),
        other => panic!("expected one or more matrices, got shape {other:?}"),
    }
}

/// Per matrix: strain diversity `1 − Σ p_s²` over carriage events (0 when
/// empty), number of strains present, fraction of attendees carrying any
/// strain, fraction carrying two or more. Returns centers×4.
pub fn numminen_features(matrices: &Tensor) -> Tensor {
    let (n, rows, cols) = matrix_dims(matrices);
    let mut out = Vec::with_capacity(n * NUMMINEN_DIM);
    for k in 0..n {
        let m = &matrices.data()[k * rows * cols..(k + 1) * rows * cols];
        out.extend(numminen_matrix(m, rows, cols));
    }
    Tensor::new(vec![n, NUMMINEN_DIM], out).expect("n×4")
}

fn numminen_matrix(m: &[f64], rows: usize, cols: usize) -> [f64; NUMMINEN_DIM] {
    let col_counts: Vec<f64> = (0..cols).map(|s| (0..rows).map(|i| m[i * cols + s]).sum()).collect();
    let row_counts: Vec<f64> = m.chunks(cols).map(|r| r.iter().sum()).collect();
    let total: f64 = col_counts.iter().sum();
    let diversity = if total > 0.0 {
        1.0 - col_counts.iter().map(|c| (c / total).powi(2)).sum::<f64>()
    } else {
        0.0
    };
    let strains = col_counts.iter().filter(|&&c| c > 0.0).count() as f64;
    let infected = row_counts.iter().filter(|&&c| c >= 1.0).count() as f64 / rows as f64;
    let multi = row_counts.iter().filter(|&&c| c >= 2.0).count() as f64 / rows as f64;
    [diversity, strains, infected, multi]
}

/// Per matrix: L2 norm of the singular values, numerical rank, mean fraction
/// of ones (identical over rows and columns), population standard deviation
/// of the row fractions, and of the column fractions. Returns centers×5.
pub fn gutmann_features(matrices: &Tensor) -> Tensor {
    let (n, rows, cols) = matrix_dims(matrices);
    let mut out = Vec::with_capacity(n * GUTMANN_DIM);
    for k in 0..n {
        let m = &matrices.data()[k * rows * cols..(k + 1) * rows * cols];
        let [norm, rank] = spectral(m, rows, cols);
        let [mean, row_var, col_var] = fractions(m, rows, cols);
        out.extend([norm, rank, mean, row_var, col_var]);
    }
    Tensor::new(vec![n, GUTMANN_DIM], out).expect("n×5")
}

fn spectral(m: &[f64], rows: usize, cols: usize) -> [f64; 2] {
    let sv = DMatrix::from_row_slice(rows, cols, m).singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let tol = rows.max(cols) as f64 * max * f64::EPSILON;
    let rank = sv.iter().filter(|&&v| v > tol).count();
    [sv.norm(), rank as f64]
}

fn fractions(m: &[f64], rows: usize, cols: usize) -> [f64; 3] {
    let row_frac: Vec<f64> = m.chunks(cols).map(|r| r.iter().sum::<f64>() / cols as f64).collect();
    let col_frac: Vec<f64> = (0..cols)
        .map(|s| (0..rows).map(|i| m[i * cols + s]).sum::<f64>() / rows as f64)
        .collect();
    let mean = row_frac.iter().sum::<f64>() / rows as f64;
    [mean, pop_std(&row_frac), pop_std(&col_frac)]
}

fn pop_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Randomized variant: for each of `subsets` draws, a random center and a
/// random submatrix holding about 10% of its entries (√0.1 of the rows and
/// of the columns). Each row holds the center's five features followed by
/// the row and column variability of the submatrix. Returns subsets×7.
pub fn gutmann_randomized(matrices: &Tensor, subsets: usize, seed: u64) -> Tensor {
    let (n, rows, cols) = matrix_dims(matrices);
    let base = gutmann_features(matrices);
    let sub_rows = ((rows as f64 * 0.1f64.sqrt()).round() as usize).clamp(1, rows);
    let sub_cols = ((cols as f64 * 0.1f64.sqrt()).round() as usize).clamp(1, cols);
    let mut rng = rng_from(seed);
    let mut out = Vec::with_capacity(subsets * (GUTMANN_DIM + 2));
    for _ in 0..subsets {
        let k = rng.random_range(0..n);
        let m = &matrices.data()[k * rows * cols..(k + 1) * rows * cols];
        let ri = sample(&mut rng, rows, sub_rows).into_vec();
        let ci = sample(&mut rng, cols, sub_cols).into_vec();
        let sub: Vec<f64> = ri.iter().flat_map(|&i| ci.iter().map(move |&j| m[i * cols + j])).collect();
        let [_, row_var, col_var] = fractions(&sub, sub_rows, sub_cols);
        out.extend_from_slice(base.row(k));
        out.extend([row_var, col_var]);
    }
    Tensor::new(vec![subsets, GUTMANN_DIM + 2], out).expect("subsets×7")
}
