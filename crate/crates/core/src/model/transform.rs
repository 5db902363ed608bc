use crate::autodiff::Tensor;
use crate::simulators::{gutmann_features, numminen_features, GUTMANN_DIM, NUMMINEN_DIM};

/// Fixed, parameter-free map from a raw dataset to the summarizer input.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum InputTransform {
    #[default]
    Identity,
    /// `ln(1 + x)`, for count data.
    Log1p,
    /// Multiplies every entry by a constant.
    Scale(f64),
    /// Five matrix features averaged over centers. The singular-value norm
    /// is divided by √(rows·cols) and the rank by min(rows, cols) so that
    /// all features lie in [0, 1].
    GutmannMean,
    /// Four per-center features averaged over centers; the strain count is
    /// divided by the number of strains.
    NumminenMean,
}

impl InputTransform {
    pub fn output_shape(&self, raw: &[usize]) -> Vec<usize> {
        match self {
            InputTransform::GutmannMean => vec![GUTMANN_DIM],
            InputTransform::NumminenMean => vec![NUMMINEN_DIM],
            _ => raw.to_vec(),
        }
    }

    /// Applies the transform to one dataset.
    pub fn apply(&self, raw: &Tensor) -> Tensor {
        match self {
            InputTransform::Identity => raw.clone(),
            InputTransform::Log1p => raw.map(f64::ln_1p),
            InputTransform::Scale(c) => raw.map(|v| v * c),
            InputTransform::GutmannMean => {
                let (rows, cols) = matrix_dims(raw);
                let f = column_means(&gutmann_features(raw));
                let size = ((rows * cols) as f64).sqrt();
                Tensor::vector(vec![f[0] / size, f[1] / rows.min(cols) as f64, f[2], f[3], f[4]])
            }
            InputTransform::NumminenMean => {
                let (_, cols) = matrix_dims(raw);
                let f = column_means(&numminen_features(raw));
                Tensor::vector(vec![f[0], f[1] / cols as f64, f[2], f[3]])
            }
        }
    }

    /// Applies the transform to every dataset of a batch (leading axis).
    pub fn apply_batch(&self, raw: &Tensor) -> Tensor {
        if *self == InputTransform::Identity {
            return raw.clone();
        }
        let parts: Vec<Tensor> = (0..raw.rows())
            .map(|i| {
                let unit = Tensor::new(raw.shape()[1..].to_vec(), raw.row(i).to_vec()).expect("row shape");
                self.apply(&unit)
            })
            .collect();
        Tensor::stack(&parts).expect("uniform transformed shapes")
    }
}

fn matrix_dims(raw: &Tensor) -> (usize, usize) {
    let s = raw.shape();
    (s[s.len() - 2], s[s.len() - 1])
}

fn column_means(t: &Tensor) -> Vec<f64> {
    let (n, k) = (t.rows(), t.row_len());
    (0..k).map(|j| (0..n).map(|i| t.row(i)[j]).sum::<f64>() / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementwise_transforms() {
        let x = Tensor::new(vec![3, 1], vec![0.0, 1.0, 9.0]).unwrap();
        assert_eq!(InputTransform::Log1p.apply(&x).data(), &[0.0, 2f64.ln(), 10f64.ln()]);
        assert_eq!(InputTransform::Scale(0.5).apply(&x).data(), &[0.0, 0.5, 4.5]);
        assert_eq!(InputTransform::Identity.apply_batch(&x), x);
    }

    #[test]
    fn matrix_features_are_unit_scaled() {
        let ones = Tensor::full(&[2, 6, 4], 1.0);
        let g = InputTransform::GutmannMean.apply(&ones);
        assert_eq!(g.shape(), &[5]);
        assert!((g.data()[0] - 1.0).abs() < 1e-12);
        assert!((g.data()[1] - 0.25).abs() < 1e-12);
        let n = InputTransform::NumminenMean.apply(&ones);
        assert_eq!(&n.data()[1..], &[1.0, 1.0, 1.0]);
        let batch = Tensor::stack(&[ones.clone(), ones]).unwrap();
        assert_eq!(InputTransform::GutmannMean.apply_batch(&batch).shape(), &[2, 5]);
    }
}
