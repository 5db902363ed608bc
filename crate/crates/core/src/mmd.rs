//! Gaussian-kernel maximum mean discrepancy.

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MmdError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("bandwidth must be positive and finite, got {0}")]
    Bandwidth(f64),
    #[error("unbiased MMD needs at least 2 samples per side, got {m} and {n}")]
    TooFewSamples { m: usize, n: usize },
    #[error("sample dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// How the Gaussian bandwidth is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise distance of the pooled (detached) samples.
    #[default]
    Median,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct KernelSpec {
    pub bandwidth: Bandwidth,
}

impl KernelSpec {
    pub fn fixed(bw: f64) -> Result<Self, MmdError> {
        check_bandwidth(bw)?;
        Ok(Self {
            bandwidth: Bandwidth::Fixed(bw),
        })
    }

    pub fn median() -> Self {
        Self {
            bandwidth: Bandwidth::Median,
        }
    }

    /// Concrete bandwidth for a pair of sample sets.
    pub fn resolve(&self, x: &Tensor, y: &Tensor) -> Result<MedianHeuristic, MmdError> {
        match self.bandwidth {
            Bandwidth::Fixed(bw) => {
                check_bandwidth(bw)?;
                Ok(MedianHeuristic {
                    bandwidth: bw,
                    degenerate: false,
                })
            }
            Bandwidth::Median => {
                let (dx, dy) = (x.row_len(), y.row_len());
                if dx != dy {
                    return Err(MmdError::DimensionMismatch(dx, dy));
                }
                let mut pooled = x.data().to_vec();
                pooled.extend_from_slice(y.data());
                let z = Tensor::new(vec![x.rows() + y.rows(), dx], pooled)?;
                Ok(median_heuristic(&z))
            }
        }
    }
}

fn check_bandwidth(bw: f64) -> Result<(), MmdError> {
    if bw > 0.0 && bw.is_finite() {
        Ok(())
    } else {
        Err(MmdError::Bandwidth(bw))
    }
}

/// `exp(-‖x − y‖² / (2·bw²))`.
pub fn gaussian_kernel(x: &[f64], y: &[f64], bw: f64) -> Result<f64, MmdError> {
    check_bandwidth(bw)?;
    if x.len() != y.len() {
        return Err(MmdError::DimensionMismatch(x.len(), y.len()));
    }
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-d2 / (2.0 * bw * bw)).exp())
}

/// Result of the median heuristic. `degenerate` is set when every point
/// coincides and the fallback bandwidth of 1 was used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MedianHeuristic {
    pub bandwidth: f64,
    pub degenerate: bool,
}

/// Median of the pairwise Euclidean distances between rows of `z`.
///
/// With an even number of pairs the two middle distances are averaged. If
/// that median is zero but some pair differs, the median of the positive
/// distances is used instead.
pub fn median_heuristic(z: &Tensor) -> MedianHeuristic {
    let n = z.rows();
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push(d2.sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let mut bw = median_sorted(&dists);
    if bw == 0.0 {
        let first_pos = dists.partition_point(|&d| d <= 0.0);
        bw = median_sorted(&dists[first_pos..]);
    }
    if bw > 0.0 && bw.is_finite() {
        MedianHeuristic {
            bandwidth: bw,
            degenerate: false,
        }
    } else {
        log::warn!("median heuristic: all {n} points coincide, using bandwidth 1.0");
        MedianHeuristic {
            bandwidth: 1.0,
            degenerate: true,
        }
    }
}

fn median_sorted(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

fn check_samples(x: &Tensor, y: &Tensor) -> Result<(), MmdError> {
    if x.ndim() != 2 || y.ndim() != 2 {
        return Err(AutodiffError::ShapeMismatch {
            op: "mmd",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        }
        .into());
    }
    let (m, n) = (x.rows(), y.rows());
    if m < 2 || n < 2 {
        return Err(MmdError::TooFewSamples { m, n });
    }
    if x.shape()[1] != y.shape()[1] {
        return Err(MmdError::DimensionMismatch(x.shape()[1], y.shape()[1]));
    }
    Ok(())
}

/// Unbiased MMD² estimate between the rows of `x` (m×d) and `y` (n×d),
/// recorded on the tape so either side can receive gradients.
pub fn mmd_unbiased(tape: &mut Tape, x: Var, y: Var, bw: f64) -> Result<Var, MmdError> {
    check_bandwidth(bw)?;
    check_samples(tape.value(x)?, tape.value(y)?)?;
    let m = tape.value(x)?.rows() as f64;
    let n = tape.value(y)?.rows() as f64;
    let gamma = -1.0 / (2.0 * bw * bw);
    let kernel_sum = |tape: &mut Tape, a: Var, b: Var| -> Result<Var, AutodiffError> {
        let d = tape.sqdist(a, b)?;
        let d = tape.scale(d, gamma)?;
        let k = tape.exp(d)?;
        tape.sum(k)
    };
    // Self-distances are exactly zero, so each diagonal contributes exactly
    // one per row and can be subtracted as a constant.
    let kxx = kernel_sum(tape, x, x)?;
    let kyy = kernel_sum(tape, y, y)?;
    let kxy = kernel_sum(tape, x, y)?;
    let txx = tape.add_scalar(kxx, -m)?;
    let txx = tape.scale(txx, 1.0 / (m * (m - 1.0)))?;
    let tyy = tape.add_scalar(kyy, -n)?;
    let tyy = tape.scale(tyy, 1.0 / (n * (n - 1.0)))?;
    let txy = tape.scale(kxy, -2.0 / (m * n))?;
    let s = tape.add(txx, tyy)?;
    Ok(tape.add(s, txy)?)
}

/// Off-tape evaluation of [`mmd_unbiased`].
pub fn mmd_value(x: &Tensor, y: &Tensor, bw: f64) -> Result<f64, MmdError> {
    let mut tape = Tape::new();
    let (xv, yv) = (tape.input(x.clone()), tape.input(y.clone()));
    let out = mmd_unbiased(&mut tape, xv, yv, bw)?;
    Ok(tape.value(out)?.data()[0])
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::autodiff::{central_difference, max_relative_error};

    /// Literal triple sum over all kernel terms.
    fn brute_mmd(x: &Tensor, y: &Tensor, bw: f64) -> f64 {
        let (m, n) = (x.rows(), y.rows());
        let k = |a: &[f64], b: &[f64]| gaussian_kernel(a, b, bw).unwrap();
        let mut sxx = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    sxx += k(x.row(i), x.row(j));
                }
            }
        }
        let mut syy = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    syy += k(y.row(i), y.row(j));
                }
            }
        }
        let mut sxy = 0.0;
        for i in 0..m {
            for j in 0..n {
                sxy += k(x.row(i), y.row(j));
            }
        }
        let (m, n) = (m as f64, n as f64);
        sxx / (m * (m - 1.0)) - 2.0 * sxy / (m * n) + syy / (n * (n - 1.0))
    }

    fn col(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Tensor {
        Tensor::new(vec![rows, d], (0..rows * d).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(gaussian_kernel(&[0.3, -1.0], &[0.3, -1.0], 0.7).unwrap(), 1.0);
        assert!((gaussian_kernel(&[0.0], &[1.0], 1.0).unwrap() - 0.6065306597126334).abs() < 1e-15);
        assert_eq!(gaussian_kernel(&[0.0], &[1.0], 0.0), Err(MmdError::Bandwidth(0.0)));
        assert!(gaussian_kernel(&[0.0], &[1.0], -1.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            assert_eq!(gaussian_kernel(&a, &b, 1.3).unwrap(), gaussian_kernel(&b, &a, 1.3).unwrap());
        }
    }

    #[test]
    fn identical_points_give_zero() {
        let z = col(&[0.0, 0.0]);
        assert_eq!(mmd_value(&z, &z, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn two_point_hand_value() {
        let x = col(&[0.0, 1.0]);
        let want = (-0.5f64).exp() - 1.0;
        assert!((mmd_value(&x, &x, 1.0).unwrap() - want).abs() < 1e-15);
        assert!((want + 0.3935).abs() < 1e-4);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let (m, n, d) = (rng.random_range(2..=10), rng.random_range(2..=10), rng.random_range(1..=4));
            let (x, y) = (random(&mut rng, m, d), random(&mut rng, n, d));
            let bw = rng.random_range(0.3..3.0);
            assert!((mmd_value(&x, &y, bw).unwrap() - brute_mmd(&x, &y, bw)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_small_or_mismatched_samples() {
        let one = col(&[1.0]);
        let two = col(&[1.0, 2.0]);
        assert_eq!(mmd_value(&one, &two, 1.0), Err(MmdError::TooFewSamples { m: 1, n: 2 }));
        let wide = Tensor::zeros(&[3, 2]);
        assert_eq!(mmd_value(&two, &wide, 1.0), Err(MmdError::DimensionMismatch(1, 2)));
    }

    #[test]
    fn symmetric_and_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (x, y) = (random(&mut rng, 6, 2), random(&mut rng, 4, 2));
            let a = mmd_value(&x, &y, 1.0).unwrap();
            assert!((a - mmd_value(&y, &x, 1.0).unwrap()).abs() < 1e-14);
            let xp = x.select_rows(&[5, 3, 1, 0, 2, 4]);
            let yp = y.select_rows(&[2, 0, 3, 1]);
            assert!((a - mmd_value(&xp, &yp, 1.0).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn null_mean_within_three_standard_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vals: Vec<f64> = (0..2000)
            .map(|_| mmd_value(&random(&mut rng, 8, 2), &random(&mut rng, 8, 2), 1.0).unwrap())
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 3.0 * (var / n).sqrt(), "mean {mean}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (x, y) = (random(&mut rng, 3, 2), random(&mut rng, 3, 2));
            let mut tape = Tape::new();
            let (xv, yv) = (tape.input(x.clone()), tape.input(y.clone()));
            let out = mmd_unbiased(&mut tape, xv, yv, 1.1).unwrap();
            let grads = tape.backward(out).unwrap();
            let numeric_x = central_difference(&x, 1e-5, |p| mmd_value(p, &y, 1.1).unwrap());
            let numeric_y = central_difference(&y, 1e-5, |p| mmd_value(&x, p, 1.1).unwrap());
            assert!(max_relative_error(grads.wrt(xv).unwrap(), &numeric_x, 1e-2) < 1e-5);
            assert!(max_relative_error(grads.wrt(yv).unwrap(), &numeric_y, 1e-2) < 1e-5);
        }
    }

    #[test]
    fn median_heuristic_examples() {
        assert_eq!(median_heuristic(&col(&[0.0, 2.0])).bandwidth, 2.0);
        assert_eq!(median_heuristic(&col(&[0.0, 1.0, 3.0])).bandwidth, 2.0);
        let all_same = median_heuristic(&col(&[4.0, 4.0, 4.0]));
        assert_eq!(all_same, MedianHeuristic { bandwidth: 1.0, degenerate: true });
        // Mostly-duplicate points fall back to positive distances.
        assert_eq!(median_heuristic(&col(&[0.0, 0.0, 0.0, 0.0, 5.0])).bandwidth, 5.0);
        assert_eq!(median_heuristic(&col(&[0.0, 0.0, 0.0, 5.0])).bandwidth, 2.5);
    }

    #[test]
    fn kernel_spec_resolution() {
        let x = col(&[0.0, 1.0]);
        let y = col(&[3.0, 3.0]);
        assert_eq!(KernelSpec::median().resolve(&x, &y).unwrap().bandwidth, 2.0);
        assert_eq!(KernelSpec::fixed(0.5).unwrap().resolve(&x, &y).unwrap().bandwidth, 0.5);
        assert!(KernelSpec::fixed(-1.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn median_scales_with_data(
            pts in proptest::collection::vec(-10.0f64..10.0, 3..12),
            c in 0.01f64..100.0,
        ) {
            let a = median_heuristic(&col(&pts));
            let scaled: Vec<f64> = pts.iter().map(|p| p * c).collect();
            let b = median_heuristic(&col(&scaled));
            if !a.degenerate {
                proptest::prop_assert!((b.bandwidth - c * a.bandwidth).abs() <= 1e-9 * c * a.bandwidth);
            }
        }

        #[test]
        fn mmd_symmetric(
            xs in proptest::collection::vec(-5.0f64..5.0, 2..8),
            ys in proptest::collection::vec(-5.0f64..5.0, 2..8),
            bw in 0.1f64..5.0,
        ) {
            let (x, y) = (col(&xs), col(&ys));
            let a = mmd_value(&x, &y, bw).unwrap();
            let b = mmd_value(&y, &x, bw).unwrap();
            proptest::prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
