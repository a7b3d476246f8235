//! Periodic correctors, the homogenized proxy `a_hom,L`, the field `b` and corrector moments.

use rayon::prelude::*;
use serde::Serialize;

use crate::elliptic::{Diagnostics, HomogenizedMatrix, SolverConfig, VariableSolver};
use crate::ensemble::{
    compensated_sum, sample_field, CoefficientField, ConfigSpace, EnsembleError, ExpectationMode, SingleSiteMeasure,
};
use crate::fit::{linear_fit, LinearFit};
use crate::lattice::{forward_diff, MatrixField, ScalarField, TorusGrid, VectorField};
use crate::rng::{derive_seed, stream};
use crate::SolveError;

/// `phi_j` with `div* a (grad phi_j + e_j) = 0` and `sum phi_j = 0`, for `j = 1..d`.
#[derive(Clone, Debug)]
pub struct CorrectorSet {
    grid: TorusGrid,
    phi: Vec<ScalarField>,
    grad: Vec<VectorField>,
    diagnostics: Vec<Diagnostics>,
}

impl CorrectorSet {
    /// Correctors that vanish identically (constant coefficients).
    pub fn zero(grid: TorusGrid) -> Self {
        let d = grid.dim();
        Self {
            grid,
            phi: vec![ScalarField::zeros(grid); d],
            grad: vec![VectorField::zeros(grid); d],
            diagnostics: Vec::new(),
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn phi(&self, j: usize) -> &ScalarField {
        &self.phi[j]
    }

    pub fn grad(&self, j: usize) -> &VectorField {
        &self.grad[j]
    }

    pub fn diagnostics(&self) -> &[Diagnostics] {
        &self.diagnostics
    }
}

/// `-div* (a e_j)`, i.e. `a^{jj}(x) - a^{jj}(x - e_j)`.
pub fn corrector_rhs(a: &CoefficientField, j: usize) -> ScalarField {
    let g = a.grid();
    ScalarField::from_fn(g, |x| a.get(x, j) - a.get(g.minus(x, j), j))
}

/// Solves the `d` corrector equations with one shared preconditioner.
pub fn solve_correctors(a: &CoefficientField, config: SolverConfig) -> Result<CorrectorSet, SolveError> {
    let solver = VariableSolver::new(a, config)?;
    solve_correctors_with(&solver)
}

pub fn solve_correctors_with(solver: &VariableSolver<'_>) -> Result<CorrectorSet, SolveError> {
    let a = solver.coefficients();
    let grid = a.grid();
    let mut phi = Vec::with_capacity(grid.dim());
    let mut grad = Vec::with_capacity(grid.dim());
    let mut diagnostics = Vec::with_capacity(grid.dim());
    for j in 0..grid.dim() {
        let sol = solver.solve(&corrector_rhs(a, j))?;
        diagnostics.push(sol.diagnostics);
        let u = sol.converged()?;
        grad.push(forward_diff(&u));
        phi.push(u);
    }
    Ok(CorrectorSet {
        grid,
        phi,
        grad,
        diagnostics,
    })
}

/// The symmetrized spatial proxy and the asymmetry of the raw column assembly.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AhomEstimate {
    pub matrix: HomogenizedMatrix,
    pub asymmetry: f64,
}

/// Raw `L^{-d} sum_x a(x) (grad phi_j(x) + e_j)` as a row-major matrix (column `j`).
pub fn ahom_l_raw(a: &CoefficientField, correctors: &CorrectorSet) -> Vec<f64> {
    let g = a.grid();
    let d = g.dim();
    let mut m = vec![0.0; d * d];
    for j in 0..d {
        let grad = correctors.grad(j);
        for i in 0..d {
            let delta = if i == j { 1.0 } else { 0.0 };
            let s = compensated_sum(g.sites().map(|x| a.get(x, i) * (grad.get(x, i) + delta)));
            m[i * d + j] = s / g.len() as f64;
        }
    }
    m
}

pub fn ahom_l(a: &CoefficientField, correctors: &CorrectorSet) -> AhomEstimate {
    let d = a.grid().dim();
    let (matrix, asymmetry) =
        HomogenizedMatrix::symmetrized(d, &ahom_l_raw(a, correctors)).expect("d x d assembly");
    AhomEstimate { matrix, asymmetry }
}

/// `b^{ij}(x) = a^{ii}(x - e_i) (grad_i phi_j(x - e_i) + delta_ij)`.
pub fn b_field(a: &CoefficientField, correctors: &CorrectorSet) -> MatrixField {
    let g = a.grid();
    let d = g.dim();
    let mut b = MatrixField::zeros(g);
    for x in g.sites() {
        for i in 0..d {
            let xm = g.minus(x, i);
            for j in 0..d {
                let delta = if i == j { 1.0 } else { 0.0 };
                b.set(x, i, j, a.get(xm, i) * (correctors.grad(j).get(xm, i) + delta));
            }
        }
    }
    b
}

/// Ensemble average of the spatial proxy.
#[derive(Clone, Debug, Serialize)]
pub struct EnsembleAhom {
    pub mean: HomogenizedMatrix,
    /// Per entry, row-major; zero in exhaustive mode.
    pub std_error: Vec<f64>,
    pub count: usize,
    /// Raw per-realization matrices (MC) or per-configuration matrices (exhaustive).
    pub samples: Vec<Vec<f64>>,
    pub max_asymmetry: f64,
}

pub fn ahom_l_ensemble(
    measure: &SingleSiteMeasure,
    grid: TorusGrid,
    mode: ExpectationMode,
    config: SolverConfig,
) -> Result<EnsembleAhom, SolveError> {
    let d = grid.dim();
    let raw = |a: &CoefficientField| -> Result<Vec<f64>, SolveError> {
        Ok(ahom_l_raw(a, &solve_correctors(a, config)?))
    };
    let (samples, weights): (Vec<Vec<f64>>, Option<Vec<f64>>) = match mode {
        ExpectationMode::Exhaustive { budget } => {
            let space = ConfigSpace::new(measure, grid, budget)?;
            let samples = space.tabulate(raw).into_iter().collect::<Result<Vec<_>, _>>()?;
            (samples, Some((0..space.len()).map(|c| space.weight(c)).collect()))
        }
        ExpectationMode::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(EnsembleError::TooFewSamples(samples).into());
            }
            measure.validate(d)?;
            let out = (0..samples as u64)
                .into_par_iter()
                .map(|i| raw(&sample_field(measure, grid, &mut stream(seed, i))?))
                .collect::<Result<Vec<_>, _>>()?;
            (out, None)
        }
    };
    let count = samples.len();
    let mut mean = vec![0.0; d * d];
    let mut std_error = vec![0.0; d * d];
    for k in 0..d * d {
        let column: Vec<f64> = samples.iter().map(|m| m[k]).collect();
        match &weights {
            Some(w) => mean[k] = column.iter().zip(w).map(|(v, w)| v * w).sum(),
            None => {
                let e = crate::ensemble::Estimate::from_samples(&column)?;
                mean[k] = e.mean;
                std_error[k] = e.std_error;
            }
        }
    }
    let (mean, max_asymmetry) = HomogenizedMatrix::symmetrized(d, &mean).expect("d x d mean");
    let max_asymmetry = samples
        .iter()
        .map(|m| HomogenizedMatrix::symmetrized(d, m).expect("d x d").1)
        .fold(max_asymmetry, f64::max);
    Ok(EnsembleAhom {
        mean,
        std_error,
        count,
        samples,
        max_asymmetry,
    })
}

/// Spatial and `j` averages of `phi_j^2` and `|grad phi_j|^4` for one realization.
pub fn corrector_moment_sample(correctors: &CorrectorSet) -> (f64, f64) {
    let g = correctors.grid();
    let d = g.dim();
    let norm = (g.len() * d) as f64;
    let mut phi_sq = 0.0;
    let mut grad4 = 0.0;
    for j in 0..d {
        phi_sq += correctors.phi(j).norm_sq();
        let grad = correctors.grad(j);
        grad4 += g
            .sites()
            .map(|x| grad.at(x).iter().map(|v| v * v).sum::<f64>().powi(2))
            .sum::<f64>();
    }
    (phi_sq / norm, grad4 / norm)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentRow {
    pub dim: usize,
    pub side: usize,
    pub count: usize,
    pub phi_sq: f64,
    pub phi_sq_se: f64,
    pub grad4: f64,
    pub grad4_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentReport {
    pub rows: Vec<MomentRow>,
    /// `E[phi^2]` against `ln L`; `None` with fewer than two sides.
    pub log_fit: Option<LinearFit>,
}

/// Monte-Carlo corrector moments across side lengths. Side `L` uses the stream family
/// `derive_seed(seed, "moments-d{d}-L{L}")`.
pub fn corrector_moments(
    measure: &SingleSiteMeasure,
    dim: usize,
    sides: &[usize],
    samples: usize,
    seed: u64,
    config: SolverConfig,
) -> Result<MomentReport, SolveError> {
    if samples < 2 {
        return Err(EnsembleError::TooFewSamples(samples).into());
    }
    let mut rows = Vec::with_capacity(sides.len());
    for &side in sides {
        let grid = TorusGrid::new(dim, side)?;
        let family = derive_seed(seed, &format!("moments-d{dim}-L{side}"));
        let values = (0..samples as u64)
            .into_par_iter()
            .map(|i| -> Result<(f64, f64), SolveError> {
                let a = sample_field(measure, grid, &mut stream(family, i))?;
                Ok(corrector_moment_sample(&solve_correctors(&a, config)?))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let phi = crate::ensemble::Estimate::from_samples(&values.iter().map(|v| v.0).collect::<Vec<_>>())?;
        let grad = crate::ensemble::Estimate::from_samples(&values.iter().map(|v| v.1).collect::<Vec<_>>())?;
        rows.push(MomentRow {
            dim,
            side,
            count: samples,
            phi_sq: phi.mean,
            phi_sq_se: phi.std_error,
            grad4: grad.mean,
            grad4_se: grad.std_error,
        });
    }
    let log_fit = if rows.len() >= 2 {
        let xs: Vec<f64> = rows.iter().map(|r| (r.side as f64).ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.phi_sq).collect();
        linear_fit(&xs, &ys).ok()
    } else {
        None
    };
    Ok(MomentReport { rows, log_fit })
}
