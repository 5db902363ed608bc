//! Black-box benchmark simulators.
//!
//! Each simulator is a pure function of `(θ, seed, size)`. Nothing here is
//! ever recorded on a tape.

mod dcc;
mod glm;
mod normal;
mod ricker;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::layers::PriorSpec;

pub use dcc::{gutmann_features, gutmann_randomized, numminen_features, Dcc, DccConfig, GUTMANN_DIM, NUMMINEN_DIM};
pub use glm::{glm_design_matrix, Glm};
pub use normal::{MixtureNormal, Mvn, UnivariateNormal};
pub use ricker::Ricker;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("{simulator}: invalid parameter {theta:?}: {reason}")]
    InvalidParameter {
        simulator: &'static str,
        theta: Vec<f64>,
        reason: String,
    },
    #[error("{simulator}: state overflow at step {step} for θ = {theta:?}")]
    Overflow {
        simulator: &'static str,
        theta: Vec<f64>,
        step: usize,
    },
    #[error("design matrix is singular (det(BᵀB) = {det})")]
    SingularDesign { det: f64 },
    #[error("batch row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<SimError>,
    },
    #[error("{0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl SimError {
    pub(crate) fn invalid(simulator: &'static str, theta: &[f64], reason: impl Into<String>) -> Self {
        SimError::InvalidParameter {
            simulator,
            theta: theta.to_vec(),
            reason: reason.into(),
        }
    }
}

pub trait Simulator: Send + Sync {
    fn name(&self) -> &'static str;

    fn param_dim(&self) -> usize;

    /// Default prior box for this model.
    fn prior(&self) -> PriorSpec;

    /// Shape of one dataset of `size` samples.
    fn output_shape(&self, size: usize) -> Vec<usize>;

    fn simulate(&self, theta: &[f64], seed: u64, size: usize) -> Result<Tensor, SimError>;
}

fn check_dim(sim: &dyn Simulator, theta: &[f64]) -> Result<(), SimError> {
    if theta.len() != sim.param_dim() {
        return Err(SimError::invalid(
            sim.name(),
            theta,
            format!("expected {} parameters", sim.param_dim()),
        ));
    }
    Ok(())
}

/// Runs one simulation per row of `thetas` (m×d) in parallel, each with its
/// own seed, and stacks the outputs along a new leading axis.
pub fn simulate_batch(
    sim: &dyn Simulator,
    thetas: &Tensor,
    seeds: &[u64],
    size: usize,
) -> Result<Tensor, SimError> {
    let m = thetas.rows();
    if seeds.len() != m {
        return Err(SimError::Config(format!("{m} parameter rows but {} seeds", seeds.len())));
    }
    let mut slots: Vec<Option<Result<Tensor, SimError>>> = vec![None; m];
    slots.par_iter_mut().enumerate().for_each(|(row, slot)| {
        let theta = thetas.row(row);
        *slot = Some(
            check_dim(sim, theta)
                .and_then(|_| sim.simulate(theta, seeds[row], size))
                .map_err(|e| SimError::Row {
                    row,
                    source: Box::new(e),
                }),
        );
    });
    let outputs = slots
        .into_iter()
        .map(|s| s.expect("every slot filled"))
        .collect::<Result<Vec<_>, _>>()?;
    Tensor::stack(&outputs).map_err(|e| SimError::Config(e.to_string()))
}

/// Writes a dataset as CSV. 2-D outputs become one row per sample; 3-D
/// outputs (one matrix per center) become one file per leading index inside
/// `path`, which is then treated as a directory.
pub fn dump_csv(data: &Tensor, path: &Path) -> Result<Vec<PathBuf>, SimError> {
    let io = |e: &dyn std::fmt::Display| SimError::Io(format!("{}: {e}", path.display()));
    match data.ndim() {
        1 | 2 => {
            let cols = if data.ndim() == 1 { 1 } else { data.shape()[1] };
            write_matrix(data.data(), cols, path).map_err(|e| io(&e))?;
            Ok(vec![path.to_path_buf()])
        }
        3 => {
            fs::create_dir_all(path).map_err(|e| io(&e))?;
            let cols = data.shape()[2];
            (0..data.rows())
                .map(|i| {
                    let file = path.join(format!("center_{i:02}.csv"));
                    write_matrix(data.row(i), cols, &file).map_err(|e| io(&e))?;
                    Ok(file)
                })
                .collect()
        }
        n => Err(SimError::Io(format!("cannot dump a {n}-dimensional dataset"))),
    }
}

fn write_matrix(data: &[f64], cols: usize, path: &Path) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in data.chunks(cols.max(1)) {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
