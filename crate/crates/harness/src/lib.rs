//! Experiment registry, configuration, runner and artifact tooling for the
//! `abcgan` command-line tool.

pub mod compare;
pub mod config;
pub mod plotdata;
pub mod registry;
pub mod run;

use abcgan_core::baseline::BaselineError;
use abcgan_core::model::ModelError;
use abcgan_core::simulators::SimError;
use thiserror::Error;

pub use compare::compare;
pub use config::{ExperimentConfig, Method};
pub use plotdata::emit_plotdata;
pub use registry::{default_config, registry, EXPERIMENTS};
pub use run::{run, Report};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("simulator failure: {0}")]
    Simulator(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl HarnessError {
    /// Process exit code: 2 config, 3 numeric, 4 simulator, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numeric(_) => 3,
            HarnessError::Simulator(_) => 4,
            HarnessError::Io(_) => 1,
        }
    }
}

impl From<SimError> for HarnessError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) | SimError::SingularDesign { .. } => HarnessError::Config(e.to_string()),
            _ => HarnessError::Simulator(e.to_string()),
        }
    }
}

impl From<ModelError> for HarnessError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Simulator(s) => HarnessError::Simulator(s.to_string()),
            ModelError::NonFiniteLoss { .. } | ModelError::Autodiff(_) | ModelError::Mmd(_) => {
                HarnessError::Numeric(e.to_string())
            }
            ModelError::Config(_) | ModelError::Layer(_) | ModelError::EmptyTrace => HarnessError::Config(e.to_string()),
        }
    }
}

impl From<BaselineError> for HarnessError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::Simulator { .. } => HarnessError::Simulator(e.to_string()),
            _ => HarnessError::Config(e.to_string()),
        }
    }
}
