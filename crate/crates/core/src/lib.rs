//! Discrete stochastic homogenization on the periodic lattice `(Z/LZ)^d`.

pub mod corrector;
pub mod elliptic;
pub mod ensemble;
pub mod fit;
pub mod green;
pub mod lattice;
pub mod rng;
pub mod twoscale;

use thiserror::Error;

/// Failures of the composite pipelines (correctors, Green's functions, two-scale remainder).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Solver(#[from] elliptic::EllipticError),
    #[error(transparent)]
    Ensemble(#[from] ensemble::EnsembleError),
    #[error(transparent)]
    Lattice(#[from] lattice::LatticeError),
}
