//! Posterior evaluation: histogram KL divergence against a known density,
//! L1 error of the posterior mean, and per-dimension summaries.

use std::path::Path;

use thiserror::Error;

use crate::autodiff::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no samples inside [{lo}, {hi}]")]
    NoSamplesInRange { lo: f64, hi: f64 },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid histogram: {0}")]
    Histogram(String),
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
}

/// Smoothing mass added to every bin of the sample histogram.
pub const KL_SMOOTHING: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct KlReport {
    pub kl: f64,
    pub in_range: usize,
    /// Samples outside the range, excluded from the histogram.
    pub dropped: usize,
}

/// `D_KL(p‖q)` between bin masses of a density and of samples over
/// `[lo, hi]`.
///
/// `p` integrates `pdf` over each bin by the midpoint rule and is
/// renormalized to sum to 1. `q` is the sample histogram with
/// [`KL_SMOOTHING`] added per bin, renormalized.
pub fn kl_histogram(
    pdf: impl Fn(f64) -> f64,
    samples: &[f64],
    range: (f64, f64),
    bins: usize,
) -> Result<KlReport, MetricsError> {
    let (lo, hi) = range;
    let counts = histogram(samples, lo, hi, bins, false)?;
    let in_range: usize = counts.iter().sum();
    if in_range == 0 {
        return Err(MetricsError::NoSamplesInRange { lo, hi });
    }
    let width = (hi - lo) / bins as f64;
    let p_raw: Vec<f64> = (0..bins).map(|b| pdf(lo + (b as f64 + 0.5) * width) * width).collect();
    let p_total: f64 = p_raw.iter().sum();
    if !(p_total > 0.0 && p_total.is_finite()) {
        return Err(MetricsError::Histogram(format!("density integrates to {p_total} over the range")));
    }
    let q_total = 1.0 + bins as f64 * KL_SMOOTHING;
    let kl = p_raw
        .iter()
        .zip(&counts)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, &c)| {
            let p = p / p_total;
            let q = (c as f64 / in_range as f64 + KL_SMOOTHING) / q_total;
            p * (p / q).ln()
        })
        .sum();
    Ok(KlReport {
        kl,
        in_range,
        dropped: samples.len() - in_range,
    })
}

/// Bin counts over `[lo, hi]`. With `clamp`, values outside the range land
/// in the edge bins; otherwise they are skipped. The right edge belongs to
/// the last bin.
pub fn histogram(samples: &[f64], lo: f64, hi: f64, bins: usize, clamp: bool) -> Result<Vec<usize>, MetricsError> {
    if bins == 0 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(MetricsError::Histogram(format!("{bins} bins over [{lo}, {hi}]")));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0; bins];
    for &x in samples {
        if x.is_nan() || (!clamp && (x < lo || x > hi)) {
            continue;
        }
        let b = ((x - lo) / width).floor();
        let b = if b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
        counts[b] += 1;
    }
    Ok(counts)
}

/// Adds `−x` for every sample `x`.
pub fn symmetrize(samples: &[f64]) -> Vec<f64> {
    samples.iter().copied().chain(samples.iter().map(|x| -x)).collect()
}

/// `Σ_i |θ̂_i − θ_i|`.
pub fn l1_mean_error(estimate: &[f64], truth: &[f64]) -> Result<f64, MetricsError> {
    if estimate.len() != truth.len() {
        return Err(MetricsError::DimensionMismatch(estimate.len(), truth.len()));
    }
    Ok(estimate.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn edges(&self) -> Vec<f64> {
        let n = self.counts.len();
        (0..=n).map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorReport {
    pub mean: Vec<f64>,
    /// Population standard deviation (divides by n).
    pub std: Vec<f64>,
    pub histograms: Vec<Histogram>,
}

pub const DEFAULT_REPORT_BINS: usize = 50;

/// Per-dimension mean, standard deviation and histogram over `bounds`.
/// Samples outside the bounds are counted in the edge bins.
pub fn posterior_report(samples: &Tensor, bounds: &[(f64, f64)], bins: usize) -> Result<PosteriorReport, MetricsError> {
    let n = samples.rows();
    if n < 2 {
        return Err(MetricsError::TooFewSamples { needed: 2, got: n });
    }
    let d = samples.row_len();
    if bounds.len() != d {
        return Err(MetricsError::DimensionMismatch(bounds.len(), d));
    }
    let mut mean = Vec::with_capacity(d);
    let mut std = Vec::with_capacity(d);
    let mut histograms = Vec::with_capacity(d);
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        let col: Vec<f64> = (0..n).map(|i| samples.row(i)[j]).collect();
        let m = col.iter().sum::<f64>() / n as f64;
        let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
        mean.push(m);
        std.push(v.sqrt());
        histograms.push(Histogram {
            lo,
            hi,
            counts: histogram(&col, lo, hi, bins, true)?,
        });
    }
    Ok(PosteriorReport { mean, std, histograms })
}

/// Writes samples with a header row.
pub fn write_samples_csv(path: &Path, header: &[String], samples: &Tensor) -> Result<(), MetricsError> {
    let err = |e: &dyn std::fmt::Display| MetricsError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    if header.len() != samples.row_len() {
        return Err(MetricsError::DimensionMismatch(header.len(), samples.row_len()));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| err(&e))?;
    w.write_record(header).map_err(|e| err(&e))?;
    for i in 0..samples.rows() {
        w.write_record(samples.row(i).iter().map(|v| v.to_string())).map_err(|e| err(&e))?;
    }
    w.flush().map_err(|e| err(&e))
}

/// Reads a file written by [`write_samples_csv`].
pub fn read_samples_csv(path: &Path) -> Result<(Vec<String>, Tensor), MetricsError> {
    let err = |e: &dyn std::fmt::Display| MetricsError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| err(&e))?;
    let header: Vec<String> = r.headers().map_err(|e| err(&e))?.iter().map(str::to_owned).collect();
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| err(&e))?;
        for field in rec.iter() {
            data.push(field.trim().parse::<f64>().map_err(|e| err(&e))?);
        }
    }
    let d = header.len().max(1);
    let samples = Tensor::new(vec![data.len() / d, d], data).map_err(|e| err(&e))?;
    Ok((header, samples))
}
