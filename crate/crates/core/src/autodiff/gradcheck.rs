use super::Tensor;

/// Central finite-difference gradient of `f` at `x` with step `h`.
///
/// Evaluates only the forward function, so it is independent of any
/// backward rule it is used to check.
pub fn central_difference(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for k in 0..x.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + h;
        let up = f(&probe);
        probe.data_mut()[k] = orig - h;
        let down = f(&probe);
        probe.data_mut()[k] = orig;
        out.data_mut()[k] = (up - down) / (2.0 * h);
    }
    out
}

/// `|a - b| / max(|a|, |b|, floor)`.
///
/// The floor keeps entries whose true gradient is ~0 from reporting huge
/// relative errors driven by finite-difference noise.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &b)| relative_error(a, b, floor))
        .fold(0.0, f64::max)
}
