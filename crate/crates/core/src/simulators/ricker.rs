use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use super::{SimError, Simulator};
use crate::autodiff::Tensor;
use crate::layers::PriorSpec;
use crate::rng::rng_from;

/// Stochastic Ricker map observed through Poisson counts, θ = (log r, σ, φ):
/// `N_t = r·N_{t−1}·exp(−N_{t−1} + σ·e_t)`, `y_t ~ Poisson(φ·N_t)`.
#[derive(Clone, Copy, Debug)]
pub struct Ricker {
    pub n0: f64,
}

impl Default for Ricker {
    fn default() -> Self {
        Self { n0: 1.0 }
    }
}

impl Ricker {
    /// Latent trajectory and counts for `steps` steps.
    pub fn trajectory(&self, theta: &[f64], seed: u64, steps: usize) -> Result<(Vec<f64>, Vec<f64>), SimError> {
        let (log_r, sigma, phi) = (theta[0], theta[1], theta[2]);
        if !(sigma >= 0.0 && phi >= 0.0 && log_r.is_finite() && sigma.is_finite() && phi.is_finite()) {
            return Err(SimError::invalid(self.name(), theta, "need finite log r, σ ≥ 0, φ ≥ 0"));
        }
        if steps == 0 {
            return Err(SimError::invalid(self.name(), theta, "series length must be at least 1"));
        }
        let r = log_r.exp();
        let mut rng = rng_from(seed);
        let mut n = self.n0;
        let mut latent = Vec::with_capacity(steps);
        let mut counts = Vec::with_capacity(steps);
        for step in 0..steps {
            let e: f64 = rng.sample(StandardNormal);
            n = r * n * (-n + sigma * e).exp();
            let rate = phi * n;
            if !n.is_finite() || !rate.is_finite() || rate > Poisson::<f64>::MAX_LAMBDA {
                return Err(SimError::Overflow {
                    simulator: self.name(),
                    theta: theta.to_vec(),
                    step,
                });
            }
            let y = if rate > 0.0 {
                Poisson::new(rate).expect("positive finite rate").sample(&mut rng)
            } else {
                0.0
            };
            latent.push(n);
            counts.push(y);
        }
        Ok((latent, counts))
    }
}

impl Simulator for Ricker {
    fn name(&self) -> &'static str {
        "ricker"
    }

    fn param_dim(&self) -> usize {
        3
    }

    fn prior(&self) -> PriorSpec {
        PriorSpec::new(&[(0.0, 5.0), (0.0, 1.0), (0.0, 15.0)]).expect("valid box")
    }

    /// A series of `size` counts, one feature per step.
    fn output_shape(&self, size: usize) -> Vec<usize> {
        vec![size, 1]
    }

    fn simulate(&self, theta: &[f64], seed: u64, size: usize) -> Result<Tensor, SimError> {
        let (_, counts) = self.trajectory(theta, seed, size)?;
        Ok(Tensor::new(vec![size, 1], counts).expect("size×1"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_point_without_noise() {
        let (latent, _) = Ricker::default().trajectory(&[1.0, 0.0, 5.0], 1, 50).unwrap();
        assert!(latent.iter().all(|&n| (n - 1.0).abs() < 1e-12));
    }

    #[test]
    fn zero_phi_gives_zero_counts() {
        let y = Ricker::default().simulate(&[3.8, 0.3, 0.0], 2, 100).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn counts_are_non_negative_integers() {
        let sim = Ricker::default();
        for seed in 0..20 {
            let (latent, counts) = sim.trajectory(&[3.8, 0.3, 10.0], seed, 200).unwrap();
            assert!(latent.iter().all(|&n| n >= 0.0));
            assert!(counts.iter().all(|&c| c >= 0.0 && c.fract() == 0.0));
        }
    }

    #[test]
    fn long_run_means_agree_across_seeds() {
        let sim = Ricker::default();
        let mean = |seed| {
            let (_, y) = sim.trajectory(&[3.8, 0.3, 10.0], seed, 100_000).unwrap();
            y.iter().sum::<f64>() / y.len() as f64
        };
        let (a, b) = (mean(100), mean(200));
        assert!((a - b).abs() / a < 0.02, "{a} vs {b}");
    }

    #[test]
    fn rejects_invalid_parameters() {
        let sim = Ricker::default();
        assert!(sim.simulate(&[3.8, -0.1, 10.0], 0, 5).is_err());
        assert!(sim.simulate(&[3.8, 0.3, -1.0], 0, 5).is_err());
        assert!(sim.simulate(&[3.8, 0.3, 10.0], 0, 0).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let sim = Ricker::default();
        assert_eq!(sim.simulate(&[3.8, 0.3, 10.0], 5, 50), sim.simulate(&[3.8, 0.3, 10.0], 5, 50));
    }
}
