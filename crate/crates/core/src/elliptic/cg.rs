use std::time::Instant;

use serde::Serialize;

use super::spectral::check_mean_zero;
use super::{EllipticError, HomogenizedMatrix, Preconditioner, SolverConfig, SpectralSolver};
use crate::ensemble::CoefficientField;
use crate::lattice::{apply_operator_into, ScalarField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub iterations: usize,
    /// True relative residual `|f - Au| / |f|` of the returned iterate.
    pub relative_residual: f64,
    pub converged: bool,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub u: ScalarField,
    pub diagnostics: Diagnostics,
}

impl Solution {
    /// The solution, or an error carrying the diagnostics of a non-converged solve.
    pub fn converged(self) -> Result<ScalarField, EllipticError> {
        if self.diagnostics.converged {
            Ok(self.u)
        } else {
            Err(EllipticError::NotConverged {
                iterations: self.diagnostics.iterations,
                residual: self.diagnostics.relative_residual,
            })
        }
    }
}

/// Preconditioned conjugate gradient for one coefficient field, reusable across right-hand sides.
#[derive(Clone, Debug)]
pub struct VariableSolver<'a> {
    a: &'a CoefficientField,
    config: SolverConfig,
    preconditioner: Option<SpectralSolver>,
}

impl<'a> VariableSolver<'a> {
    pub fn new(a: &'a CoefficientField, config: SolverConfig) -> Result<Self, EllipticError> {
        config.validate()?;
        let preconditioner = match config.preconditioner {
            Preconditioner::None => None,
            Preconditioner::Spectral => Some(SpectralSolver::new(
                a.grid(),
                &HomogenizedMatrix::diagonal(&a.mean_per_direction()),
            )?),
        };
        Ok(Self {
            a,
            config,
            preconditioner,
        })
    }

    pub fn coefficients(&self) -> &CoefficientField {
        self.a
    }

    pub fn config(&self) -> SolverConfig {
        self.config
    }

    /// Solves `div* a grad u = f` on the mean-zero subspace.
    ///
    /// A solve that hits the iteration limit returns its last iterate (the best one in
    /// the energy norm) with `converged == false`.
    pub fn solve(&self, f: &ScalarField) -> Result<Solution, EllipticError> {
        let start = Instant::now();
        let grid = self.a.grid();
        if f.grid() != grid {
            return Err(EllipticError::GridMismatch);
        }
        check_mean_zero(f)?;
        let n = grid.len();
        let mut rhs = f.values().to_vec();
        project(&mut rhs);
        let f_norm = norm(&rhs);
        let mut u = vec![0.0; n];
        if f_norm == 0.0 {
            return Ok(self.finish(u, 0, 0.0, true, start));
        }
        let target = self.config.tolerance * f_norm;
        let limit = self.config.iteration_limit(n);

        let mut r = rhs.clone();
        let mut z = vec![0.0; n];
        let mut ap = vec![0.0; n];
        self.precondition(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut iterations = 0;
        let mut restarts = 0;
        while iterations < limit {
            ap.iter_mut().for_each(|v| *v = 0.0);
            apply_operator_into(self.a, &p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for k in 0..n {
                u[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            project(&mut u);
            project(&mut r);
            iterations += 1;
            if norm(&r) <= target {
                // The recursive residual drifts from the true one; confirm before stopping.
                self.residual(&rhs, &u, &mut r);
                if norm(&r) <= target || restarts >= 5 {
                    break;
                }
                restarts += 1;
                self.precondition(&r, &mut z);
                p.copy_from_slice(&z);
                rz = dot(&r, &z);
                continue;
            }
            self.precondition(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..n {
                p[k] = z[k] + beta * p[k];
            }
            project(&mut p);
        }
        self.residual(&rhs, &u, &mut r);
        let rel = norm(&r) / f_norm;
        let converged = rel <= self.config.tolerance;
        Ok(self.finish(u, iterations, rel, converged, start))
    }

    fn finish(&self, u: Vec<f64>, iterations: usize, rel: f64, converged: bool, start: Instant) -> Solution {
        Solution {
            u: ScalarField::from_values(self.a.grid(), u),
            diagnostics: Diagnostics {
                iterations,
                relative_residual: rel,
                converged,
                wall_seconds: start.elapsed().as_secs_f64(),
            },
        }
    }

    fn residual(&self, rhs: &[f64], u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        apply_operator_into(self.a, u, out);
        for (o, f) in out.iter_mut().zip(rhs) {
            *o = f - *o;
        }
    }

    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        match &self.preconditioner {
            Some(s) => s.solve_into(r, z),
            None => z.copy_from_slice(r),
        }
    }
}

/// One-shot variable-coefficient solve.
pub fn solve_variable(
    a: &CoefficientField,
    f: &ScalarField,
    config: SolverConfig,
) -> Result<Solution, EllipticError> {
    VariableSolver::new(a, config)?.solve(f)
}

fn project(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::super::solve_constant;
    use super::*;
    use crate::ensemble::{sample_field, SingleSiteMeasure};
    use crate::lattice::{apply_operator, forward_diff, TorusGrid};
    use crate::rng::stream;
    use rand::Rng;

    fn random_rhs(g: TorusGrid, seed: u64) -> ScalarField {
        let mut rng = stream(seed, 0);
        ScalarField::from_fn(g, |_| rng.random_range(-1.0..1.0)).mean_zero()
    }

    #[test]
    fn unit_coefficients_match_spectral_solver() {
        let g = TorusGrid::new(2, 8).unwrap();
        let f = random_rhs(g, 1);
        let a = CoefficientField::constant(g, 1.0);
        for pre in [Preconditioner::None, Preconditioner::Spectral] {
            let cfg = SolverConfig {
                preconditioner: pre,
                ..SolverConfig::default()
            };
            let sol = solve_variable(&a, &f, cfg).unwrap();
            let exact = solve_constant(&HomogenizedMatrix::identity(2), &f).unwrap();
            assert!(sol.u.sub(&exact).norm() <= 1e-9 * exact.norm());
        }
    }

    #[test]
    fn zero_rhs_takes_no_iterations() {
        let g = TorusGrid::new(3, 4).unwrap();
        let a = CoefficientField::constant(g, 0.5);
        let sol = solve_variable(&a, &ScalarField::zeros(g), SolverConfig::default()).unwrap();
        assert_eq!(sol.diagnostics.iterations, 0);
        assert!(sol.diagnostics.converged);
        assert_eq!(sol.u.max_abs(), 0.0);
    }

    #[test]
    fn two_site_system_by_hand() {
        // Both bonds join sites 0 and 1: (Au)(0) = (lambda + 1)(u0 - u1) = -(Au)(1).
        // With u = (c, -c) and f = (1, -1): 2c (lambda + 1) = 1.
        let lambda = 0.25;
        let g = TorusGrid::new(1, 2).unwrap();
        let a = CoefficientField::new(g, vec![lambda, 1.0]).unwrap();
        let f = ScalarField::from_values(g, vec![1.0, -1.0]);
        let u = solve_variable(&a, &f, SolverConfig::default()).unwrap().converged().unwrap();
        let c = 0.5 / (lambda + 1.0);
        assert!((u.get(0) - c).abs() < 1e-12 && (u.get(1) + c).abs() < 1e-12);
    }

    #[test]
    fn residual_energy_and_symmetry() {
        let beta = SingleSiteMeasure::default_two_point();
        for (d, l) in [(2, 8), (3, 4), (2, 5)] {
            let g = TorusGrid::new(d, l).unwrap();
            let a = sample_field(&beta, g, &mut stream(9, d as u64)).unwrap();
            let f = random_rhs(g, 2);
            let sol = solve_variable(&a, &f, SolverConfig::default()).unwrap();
            assert!(sol.diagnostics.converged);
            let u = sol.u;
            assert!(apply_operator(&a, &u).sub(&f).norm() <= 1e-10 * f.norm());
            let grad = forward_diff(&u);
            let energy: f64 = g
                .sites()
                .map(|x| (0..d).map(|i| a.get(x, i) * grad.get(x, i).powi(2)).sum::<f64>())
                .sum();
            assert!((energy - u.dot(&f)).abs() <= 1e-8 * energy);

            let solver = VariableSolver::new(&a, SolverConfig::with_tolerance(1e-12)).unwrap();
            let (x, y) = (1, g.len() - 2);
            let ux = solver.solve(&ScalarField::delta(g, x).mean_zero()).unwrap().u;
            let uy = solver.solve(&ScalarField::delta(g, y).mean_zero()).unwrap().u;
            assert!((ux.get(y) - uy.get(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn iteration_limit_flags_non_convergence() {
        let g = TorusGrid::new(2, 16).unwrap();
        let a = sample_field(&SingleSiteMeasure::default_two_point(), g, &mut stream(5, 0)).unwrap();
        let cfg = SolverConfig {
            max_iterations: Some(2),
            ..SolverConfig::default()
        };
        let sol = solve_variable(&a, &random_rhs(g, 3), cfg).unwrap();
        assert!(!sol.diagnostics.converged);
        assert_eq!(sol.diagnostics.iterations, 2);
        assert!(matches!(sol.converged(), Err(EllipticError::NotConverged { .. })));
    }
}
