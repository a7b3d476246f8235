use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{EllipticError, HomogenizedMatrix};
use crate::lattice::{ScalarField, TorusGrid};

/// Exact solver for `div* A grad u = f` with constant `A`, diagonalized by the DFT.
///
/// The symbol of the operator at frequency `xi` is `sum_ij A_ij conj(q_i) q_j` with
/// `q_j = exp(2 pi i xi_j / L) - 1`; the zero mode is dropped.
#[derive(Clone)]
pub struct SpectralSolver {
    grid: TorusGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    inv_symbol: Vec<f64>,
}

impl std::fmt::Debug for SpectralSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralSolver").field("grid", &self.grid).finish_non_exhaustive()
    }
}

impl SpectralSolver {
    pub fn new(grid: TorusGrid, a: &HomogenizedMatrix) -> Result<Self, EllipticError> {
        let d = grid.dim();
        if a.dim() != d {
            return Err(EllipticError::MatrixShape {
                expected: d * d,
                got: a.dim() * a.dim(),
            });
        }
        if !a.is_positive_definite() {
            return Err(EllipticError::NotPositiveDefinite);
        }
        let l = grid.side();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(l);
        let inverse = planner.plan_fft_inverse(l);
        let phases: Vec<Complex64> = (0..l)
            .map(|k| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / l as f64) - 1.0)
            .collect();
        let mut q = vec![Complex64::default(); d];
        let inv_symbol = grid
            .sites()
            .map(|xi| {
                if xi == 0 {
                    return 0.0;
                }
                for (j, c) in grid.coords(xi).into_iter().enumerate() {
                    q[j] = phases[c];
                }
                let mut sigma = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        sigma += a.get(i, j) * (q[i].conj() * q[j]).re;
                    }
                }
                1.0 / sigma
            })
            .collect();
        Ok(Self {
            grid,
            forward,
            inverse,
            inv_symbol,
        })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    /// Writes the mean-zero solution for the mean-zero part of `f` into `out`.
    pub fn solve_into(&self, f: &[f64], out: &mut [f64]) {
        let mut buf: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &*self.forward);
        for (b, s) in buf.iter_mut().zip(&self.inv_symbol) {
            *b *= *s;
        }
        self.transform(&mut buf, &*self.inverse);
        let n = self.grid.len() as f64;
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b.re / n;
        }
    }

    pub fn solve(&self, f: &ScalarField) -> Result<ScalarField, EllipticError> {
        if f.grid() != self.grid {
            return Err(EllipticError::GridMismatch);
        }
        check_mean_zero(f)?;
        let mut out = vec![0.0; self.grid.len()];
        self.solve_into(f.values(), &mut out);
        Ok(ScalarField::from_values(self.grid, out))
    }

    /// Separable multi-dimensional transform, one axis at a time.
    fn transform(&self, data: &mut [Complex64], fft: &dyn Fft<f64>) {
        let l = self.grid.side();
        let n = data.len();
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(data, &mut scratch);
        let mut line = vec![Complex64::default(); l];
        for axis in 1..self.grid.dim() {
            let s = self.grid.stride(axis);
            for outer in (0..n).step_by(s * l) {
                for start in outer..outer + s {
                    for (k, v) in line.iter_mut().enumerate() {
                        *v = data[start + k * s];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for (k, v) in line.iter().enumerate() {
                        data[start + k * s] = *v;
                    }
                }
            }
        }
    }
}

pub(crate) fn check_mean_zero(f: &ScalarField) -> Result<(), EllipticError> {
    let mean = f.spatial_mean();
    let tolerance = 1e-9 * f.max_abs();
    if mean.abs() > tolerance {
        return Err(EllipticError::NotMeanZero { mean, tolerance });
    }
    Ok(())
}

/// `div* A grad u = f`, `sum u = 0`.
pub fn solve_constant(a: &HomogenizedMatrix, f: &ScalarField) -> Result<ScalarField, EllipticError> {
    SpectralSolver::new(f.grid(), a)?.solve(f)
}
