use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{SimError, Simulator};
use crate::autodiff::Tensor;
use crate::layers::PriorSpec;
use crate::rng::rng_from;

/// i.i.d. N(μ, σ²) with θ = (μ, σ²).
#[derive(Clone, Copy, Debug, Default)]
pub struct UnivariateNormal;

impl Simulator for UnivariateNormal {
    fn name(&self) -> &'static str {
        "univariate_normal"
    }

    fn param_dim(&self) -> usize {
        2
    }

    fn prior(&self) -> PriorSpec {
        PriorSpec::new(&[(0.0, 5.0), (1.0, 5.0)]).expect("valid box")
    }

    fn output_shape(&self, size: usize) -> Vec<usize> {
        vec![size, 1]
    }

    fn simulate(&self, theta: &[f64], seed: u64, size: usize) -> Result<Tensor, SimError> {
        let (mu, var) = (theta[0], theta[1]);
        if !(var > 0.0 && var.is_finite() && mu.is_finite()) {
            return Err(SimError::invalid(self.name(), theta, "variance must be positive"));
        }
        let normal = Normal::new(mu, var.sqrt()).map_err(|e| SimError::invalid(self.name(), theta, e.to_string()))?;
        let mut rng = rng_from(seed);
        let data = (0..size).map(|_| normal.sample(&mut rng)).collect();
        Ok(Tensor::new(vec![size, 1], data).expect("size×1"))
    }
}

/// Equal mixture ½N(θ, narrow²) + ½N(θ, 1), narrow = 0.1 by default.
#[derive(Clone, Copy, Debug)]
pub struct MixtureNormal {
    pub narrow_std: f64,
}

impl Default for MixtureNormal {
    fn default() -> Self {
        Self { narrow_std: 0.1 }
    }
}

impl MixtureNormal {
    /// Density of the displayed target ½N(0, narrow²) + ½N(0, 1).
    pub fn target_pdf(&self, x: f64) -> f64 {
        0.5 * normal_pdf(x, self.narrow_std) + 0.5 * normal_pdf(x, 1.0)
    }
}

fn normal_pdf(x: f64, sd: f64) -> f64 {
    (-(x * x) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

impl Simulator for MixtureNormal {
    fn name(&self) -> &'static str {
        "mixture_normal"
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn prior(&self) -> PriorSpec {
        PriorSpec::new(&[(-10.0, 10.0)]).expect("valid box")
    }

    fn output_shape(&self, size: usize) -> Vec<usize> {
        vec![size, 1]
    }

    fn simulate(&self, theta: &[f64], seed: u64, size: usize) -> Result<Tensor, SimError> {
        if !theta[0].is_finite() {
            return Err(SimError::invalid(self.name(), theta, "location must be finite"));
        }
        let mut rng = rng_from(seed);
        let data = (0..size)
            .map(|_| {
                let sd = if rng.random_bool(0.5) { self.narrow_std } else { 1.0 };
                let z: f64 = rng.sample(StandardNormal);
                theta[0] + sd * z
            })
            .collect();
        Ok(Tensor::new(vec![size, 1], data).expect("size×1"))
    }
}

/// i.i.d. N(θ, I) in `dim` dimensions.
#[derive(Clone, Copy, Debug)]
pub struct Mvn {
    pub dim: usize,
}

impl Default for Mvn {
    fn default() -> Self {
        Self { dim: 16 }
    }
}

impl Simulator for Mvn {
    fn name(&self) -> &'static str {
        "mvn"
    }

    fn param_dim(&self) -> usize {
        self.dim
    }

    fn prior(&self) -> PriorSpec {
        PriorSpec::uniform_box(self.dim, 0.0, 10.0).expect("valid box")
    }

    fn output_shape(&self, size: usize) -> Vec<usize> {
        vec![size, self.dim]
    }

    fn simulate(&self, theta: &[f64], seed: u64, size: usize) -> Result<Tensor, SimError> {
        let mut rng = rng_from(seed);
        let mut data = Vec::with_capacity(size * self.dim);
        for _ in 0..size {
            for &t in theta {
                let z: f64 = rng.sample(StandardNormal);
                data.push(t + z);
            }
        }
        Ok(Tensor::new(vec![size, self.dim], data).expect("size×dim"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn univariate_moments_and_errors() {
        let sim = UnivariateNormal;
        let x = sim.simulate(&[3.0, 1.0], 11, 1_000_000).unwrap();
        assert!((mean(x.data()) - 3.0).abs() < 3.0 / 1000.0);
        assert!(sim.simulate(&[3.0, 0.0], 1, 10).is_err());
        assert!(sim.simulate(&[3.0, -1.0], 1, 10).is_err());
        assert_eq!(sim.simulate(&[3.0, 2.0], 5, 10), sim.simulate(&[3.0, 2.0], 5, 10));
        assert_ne!(sim.simulate(&[3.0, 2.0], 5, 10), sim.simulate(&[3.0, 2.0], 6, 10));
    }

    #[test]
    fn mixture_component_split_and_variance() {
        let sim = MixtureNormal::default();
        let x = sim.simulate(&[0.0], 3, 1_000_000).unwrap();
        let v = x.data().iter().map(|a| a * a).sum::<f64>() / x.len() as f64;
        // ½·0.01 + ½·1; the standard error of the estimate is about 1.2e-3.
        assert!((v - 0.505).abs() < 5e-3, "variance {v}");
        // Draws beyond 0.5 almost surely come from the wide component, which
        // puts 61.7% of its mass there.
        let wide_tail = x.data().iter().filter(|a| a.abs() > 0.5).count() as f64 / x.len() as f64;
        let narrow_share = 1.0 - wide_tail / 0.617_075;
        assert!((narrow_share - 0.5).abs() < 4e-3, "narrow share {narrow_share}");
        assert_eq!(sim.simulate(&[0.4], 9, 5), sim.simulate(&[0.4], 9, 5));
    }

    #[test]
    fn mixture_indicator_is_fair() {
        // Replays the draw order of `simulate` to count component choices.
        let mut rng = rng_from(77);
        let n = 1_000_000;
        let narrow = (0..n)
            .filter(|_| {
                let pick = rng.random_bool(0.5);
                let _: f64 = rng.sample(StandardNormal);
                pick
            })
            .count();
        assert!((narrow as f64 / n as f64 - 0.5).abs() < 0.0015);
    }

    #[test]
    fn target_pdf_integrates_to_one() {
        let sim = MixtureNormal::default();
        let h = 1e-3;
        let total: f64 = (0..20_000).map(|i| sim.target_pdf(-10.0 + (i as f64 + 0.5) * h) * h).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mvn_moments() {
        let sim = Mvn::default();
        let x = sim.simulate(&[1.0; 16], 4, 20_000).unwrap();
        assert_eq!(x.shape(), &[20_000, 16]);
        let n = 20_000.0;
        let means: Vec<f64> = (0..16).map(|j| (0..20_000).map(|i| x.at(&[i, j])).sum::<f64>() / n).collect();
        for m in &means {
            assert!((m - 1.0).abs() < 4.0 / n.sqrt());
        }
        for a in 0..16 {
            for b in a + 1..16 {
                let cov = (0..20_000)
                    .map(|i| (x.at(&[i, a]) - means[a]) * (x.at(&[i, b]) - means[b]))
                    .sum::<f64>()
                    / n;
                assert!(cov.abs() < 5.0 / n.sqrt(), "cov({a},{b}) = {cov}");
            }
        }
    }
}
