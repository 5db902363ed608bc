use super::param::Parameter;
use super::AutodiffError;

/// RMSProp update rule. Steps descend the loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            decay: 0.9,
            eps: 1e-8,
        }
    }
}

impl RmsProp {
    pub fn new(lr: f64, decay: f64, eps: f64) -> Result<Self, AutodiffError> {
        let ok = lr > 0.0 && lr.is_finite() && decay > 0.0 && decay < 1.0 && eps >= 0.0 && eps.is_finite();
        if !ok {
            return Err(AutodiffError::InvalidArgument {
                op: "rmsprop",
                msg: format!("lr={lr}, decay={decay}, eps={eps}"),
            });
        }
        Ok(Self { lr, decay, eps })
    }

    /// Applies one update from the accumulated gradient, then zeroes it.
    ///
    /// `state <- decay * state + (1 - decay) * g^2`,
    /// `value <- value - lr * g / (sqrt(state) + eps)`.
    pub fn step(&self, p: &mut Parameter) -> Result<(), AutodiffError> {
        if !p.grad().is_finite() {
            return Err(AutodiffError::NonFiniteGradient(p.name().to_owned()));
        }
        let (value, grad, state) = p.parts_mut();
        for ((v, g), s) in value.data_mut().iter_mut().zip(grad.data_mut()).zip(state.data_mut()) {
            *s = self.decay * *s + (1.0 - self.decay) * *g * *g;
            let denom = s.sqrt() + self.eps;
            if denom > 0.0 {
                *v -= self.lr * *g / denom;
            }
            *g = 0.0;
        }
        Ok(())
    }
}
