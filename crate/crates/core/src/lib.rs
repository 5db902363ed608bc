//! Likelihood-free inference with an ABC-GAN: a generator proposes
//! parameters, a differentiable approximator stands in for a black-box
//! simulator, a summarizer learns summary statistics, and all of it is
//! trained with maximum mean discrepancy losses.

pub mod autodiff;
pub mod baseline;
pub mod layers;
pub mod metrics;
pub mod mmd;
pub mod model;
pub mod rng;
pub mod simulators;
