use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{SimError, Simulator};
use crate::autodiff::Tensor;
use crate::layers::PriorSpec;
use crate::rng::rng_from;

/// Circulant design `B[i][j] = (((j − i) mod n) + 1)/n` rescaled so that
/// `det(CᵀC) = 1`: `C = B · det(BᵀB)^(−1/(2n))`.
pub fn glm_design_matrix(n: usize) -> Result<Tensor, SimError> {
    if n < 2 {
        return Err(SimError::Config(format!("design matrix needs n ≥ 2, got {n}")));
    }
    let b = DMatrix::from_fn(n, n, |i, j| (((j + n - i) % n) + 1) as f64 / n as f64);
    // det(BᵀB) = det(B)², and the square is kept out of the exponent to
    // avoid underflow for larger n.
    let det_b = b.determinant();
    let det_btb = det_b * det_b;
    if !(det_b != 0.0 && det_btb.is_finite()) {
        return Err(SimError::SingularDesign { det: det_btb });
    }
    let scale = det_b.abs().powf(-1.0 / n as f64);
    let data = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| b[(i, j)] * scale).collect();
    Ok(Tensor::new(vec![n, n], data).expect("n×n"))
}

/// `s = Cθ + noise_std·ε`, ε ~ N(0, I).
#[derive(Clone, Debug)]
pub struct Glm {
    design: Tensor,
    noise_std: f64,
}

impl Glm {
    pub fn new(n: usize) -> Result<Self, SimError> {
        Ok(Self {
            design: glm_design_matrix(n)?,
            noise_std: 1.0,
        })
    }

    /// Overrides the noise scale; zero gives the noiseless map `s = Cθ`.
    pub fn with_noise_std(mut self, noise_std: f64) -> Self {
        self.noise_std = noise_std;
        self
    }

    pub fn design(&self) -> &Tensor {
        &self.design
    }

    pub fn dim(&self) -> usize {
        self.design.rows()
    }
}

impl Simulator for Glm {
    fn name(&self) -> &'static str {
        "glm"
    }

    fn param_dim(&self) -> usize {
        self.dim()
    }

    fn prior(&self) -> PriorSpec {
        PriorSpec::uniform_box(self.dim(), -100.0, 100.0).expect("valid box")
    }

    fn output_shape(&self, size: usize) -> Vec<usize> {
        vec![size, self.dim()]
    }

    fn simulate(&self, theta: &[f64], seed: u64, size: usize) -> Result<Tensor, SimError> {
        let n = self.dim();
        let mean: Vec<f64> = (0..n)
            .map(|i| self.design.row(i).iter().zip(theta).map(|(c, t)| c * t).sum())
            .collect();
        let mut rng = rng_from(seed);
        let mut data = Vec::with_capacity(size * n);
        for _ in 0..size {
            for &mu in &mean {
                let z: f64 = rng.sample(StandardNormal);
                data.push(mu + self.noise_std * z);
            }
        }
        Ok(Tensor::new(vec![size, n], data).expect("size×n"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Determinant by Gaussian elimination with partial pivoting, kept
    /// independent of the library routine used above.
    fn det(mut a: Vec<Vec<f64>>) -> f64 {
        let n = a.len();
        let mut d = 1.0;
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            if a[p][c] == 0.0 {
                return 0.0;
            }
            if p != c {
                a.swap(p, c);
                d = -d;
            }
            d *= a[c][c];
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
        d
    }

    fn ctc(c: &Tensor) -> Vec<Vec<f64>> {
        let n = c.rows();
        (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|k| c.at(&[k, i]) * c.at(&[k, j])).sum()).collect())
            .collect()
    }

    #[test]
    fn top_right_entry_of_b_is_one() {
        for n in [2, 5, 16] {
            let c = glm_design_matrix(n).unwrap();
            let scale = c.at(&[0, 0]) * n as f64;
            assert!((c.at(&[0, n - 1]) / scale - 1.0).abs() < 1e-12);
            // Rows are cyclic shifts of the first.
            assert!((c.at(&[1, 0]) / scale - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_two_hand_value() {
        let c = glm_design_matrix(2).unwrap();
        let want = [0.577350269189626, 1.154700538379251, 1.154700538379251, 0.577350269189626];
        for (a, b) in c.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_determinant_is_one() {
        for n in [2, 4, 8, 16] {
            let d = det(ctc(&glm_design_matrix(n).unwrap()));
            assert!((d - 1.0).abs() < 1e-10, "n={n}: {d}");
        }
    }

    #[test]
    fn rejects_tiny_dimension() {
        assert!(glm_design_matrix(1).is_err());
    }

    #[test]
    fn noiseless_and_zero_theta() {
        let glm = Glm::new(16).unwrap();
        let theta: Vec<f64> = (0..16).map(|i| i as f64 - 7.5).collect();
        let s = glm.clone().with_noise_std(0.0).simulate(&theta, 1, 3).unwrap();
        assert_eq!(s.shape(), &[3, 16]);
        for i in 0..16 {
            let want: f64 = (0..16).map(|j| glm.design().at(&[i, j]) * theta[j]).sum();
            assert_eq!(s.at(&[2, i]), want);
        }
        let z = glm.simulate(&[0.0; 16], 2, 10_000).unwrap();
        for j in 0..16 {
            let m = (0..10_000).map(|i| z.at(&[i, j])).sum::<f64>() / 10_000.0;
            assert!(m.abs() < 4.0 / 100.0);
        }
    }
}
