//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every forward operation together with the indices of
//! its inputs; [`Tape::backward`] walks the record in reverse and returns the
//! gradient of a scalar root with respect to every contributing node.
//! Trainable tensors live in a [`ParamStore`] and enter a tape through
//! [`Tape::param`]; their gradients are added to per-parameter accumulators
//! and consumed by [`RmsProp::step`].

mod gradcheck;
mod optim;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{central_difference, max_relative_error, relative_error};
pub use optim::RmsProp;
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;


use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("node {0} is not recorded on this tape")]
    UnknownNode(usize),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
}
