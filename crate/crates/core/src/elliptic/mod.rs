//! Solvers for `div* a grad u = f` on the torus with mean-zero data and solution.

mod cg;
mod rhs;
mod spectral;

pub use cg::{solve_variable, Diagnostics, Solution, VariableSolver};
pub use rhs::{discretize_rhs, RhsError, TrigKind, TrigPolynomial, TrigTerm};
pub use spectral::{solve_constant, SpectralSolver};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EllipticError {
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix has {got} entries, expected {expected}")]
    MatrixShape { expected: usize, got: usize },
    #[error("right-hand side has mean {mean:e}, not zero within {tolerance:e}")]
    NotMeanZero { mean: f64, tolerance: f64 },
    #[error("field lives on a different grid than the solver")]
    GridMismatch,
    #[error("solver tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("max iterations must be at least 1")]
    BadIterationLimit,
    #[error("no convergence after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preconditioner {
    None,
    /// Constant-coefficient solve with the per-direction arithmetic mean of `a`.
    #[default]
    Spectral,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Relative residual `|f - Au| / |f|` at which CG stops.
    pub tolerance: f64,
    /// Defaults to `10 N`.
    pub max_iterations: Option<usize>,
    pub preconditioner: Preconditioner,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: None,
            preconditioner: Preconditioner::Spectral,
        }
    }
}

impl SolverConfig {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EllipticError> {
        if !(self.tolerance > 0.0) {
            return Err(EllipticError::BadTolerance(self.tolerance));
        }
        if self.max_iterations == Some(0) {
            return Err(EllipticError::BadIterationLimit);
        }
        Ok(())
    }

    pub fn iteration_limit(&self, sites: usize) -> usize {
        self.max_iterations.unwrap_or(10 * sites)
    }
}

/// A constant symmetric `d x d` matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomogenizedMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl HomogenizedMatrix {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self, EllipticError> {
        if entries.len() != dim * dim {
            return Err(EllipticError::MatrixShape {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        let m = Self { dim, entries };
        let asym = m.asymmetry();
        if !(asym <= 1e-12 * m.max_abs().max(1.0)) {
            return Err(EllipticError::NotSymmetric(asym));
        }
        Ok(m)
    }

    /// `(M + M^T) / 2` together with `max |M_ij - M_ji|`.
    pub fn symmetrized(dim: usize, entries: &[f64]) -> Result<(Self, f64), EllipticError> {
        if entries.len() != dim * dim {
            return Err(EllipticError::MatrixShape {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        let raw = Self {
            dim,
            entries: entries.to_vec(),
        };
        let asym = raw.asymmetry();
        let sym = (0..dim * dim)
            .map(|k| {
                let (i, j) = (k / dim, k % dim);
                0.5 * (entries[i * dim + j] + entries[j * dim + i])
            })
            .collect();
        Ok((Self { dim, entries: sym }, asym))
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut entries = vec![0.0; dim * dim];
        for (i, v) in diag.iter().enumerate() {
            entries[i * dim + i] = *v;
        }
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    fn asymmetry(&self) -> f64 {
        let d = self.dim;
        let mut m: f64 = 0.0;
        for i in 0..d {
            for j in 0..i {
                m = m.max((self.entries[i * d + j] - self.entries[j * d + i]).abs());
            }
        }
        m
    }

    fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Eigenvalues in ascending order (cyclic Jacobi rotations).
    pub fn eigenvalues(&self) -> Vec<f64> {
        let d = self.dim;
        let mut m = self.entries.clone();
        for _sweep in 0..100 {
            let off: f64 = (0..d)
                .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[i * d + j].powi(2))
                .sum();
            if off <= 1e-30 * self.max_abs().max(1e-300).powi(2) {
                break;
            }
            for p in 0..d {
                for q in p + 1..d {
                    let apq = m[p * d + q];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (m[q * d + q] - m[p * d + p]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..d {
                        let (akp, akq) = (m[k * d + p], m[k * d + q]);
                        m[k * d + p] = c * akp - s * akq;
                        m[k * d + q] = s * akp + c * akq;
                    }
                    for k in 0..d {
                        let (apk, aqk) = (m[p * d + k], m[q * d + k]);
                        m[p * d + k] = c * apk - s * aqk;
                        m[q * d + k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..d).map(|i| m[i * d + i]).collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn is_positive_definite(&self) -> bool {
        self.eigenvalues().first().is_some_and(|&e| e > 0.0)
    }

    /// All eigenvalues within `[lambda - slack, 1 + slack]`.
    pub fn within_band(&self, lambda: f64, slack: f64) -> bool {
        self.eigenvalues().iter().all(|&e| e >= lambda - slack && e <= 1.0 + slack)
    }

    /// `max_ij |M_ij - other_ij|`.
    pub fn max_difference(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.entries
            .iter()
            .zip(&other.entries)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Frobenius norm of `self - other`.
    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_checks() {
        assert!(HomogenizedMatrix::new(2, vec![1.0, 0.5, 0.4, 1.0]).is_err());
        assert!(HomogenizedMatrix::new(2, vec![1.0; 3]).is_err());
        let (m, asym) = HomogenizedMatrix::symmetrized(2, &[1.0, 0.5, 0.3, 1.0]).unwrap();
        assert!((asym - 0.2).abs() < 1e-15);
        assert_eq!(m.get(0, 1), 0.4);
        assert_eq!(m.get(1, 0), 0.4);
    }

    #[test]
    fn jacobi_eigenvalues_match_closed_forms() {
        let m = HomogenizedMatrix::new(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let ev = m.eigenvalues();
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);
        // Tridiagonal (2, -1) matrix: 2 - 2 cos(k pi / 4).
        let t = HomogenizedMatrix::new(3, vec![2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]).unwrap();
        let ev = t.eigenvalues();
        for (k, e) in ev.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / 4.0).cos();
            assert!((e - exact).abs() < 1e-13, "{e} vs {exact}");
        }
        assert!(!HomogenizedMatrix::new(2, vec![1.0, 2.0, 2.0, 1.0]).unwrap().is_positive_definite());
        assert!(HomogenizedMatrix::diagonal(&[0.5, 0.25]).within_band(0.25, 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        assert!(SolverConfig::with_tolerance(0.0).validate().is_err());
        let cfg = SolverConfig {
            max_iterations: Some(0),
            ..SolverConfig::default()
        };
        assert_eq!(cfg.validate(), Err(EllipticError::BadIterationLimit));
        assert_eq!(SolverConfig::default().iteration_limit(64), 640);
    }
}
