//! Periodic Green's function, its gradients and decay statistics.

use rayon::prelude::*;
use serde::Serialize;

use crate::elliptic::{Diagnostics, SolverConfig, VariableSolver};
use crate::ensemble::{sample_field, CoefficientField, Estimate, EnsembleError, SingleSiteMeasure};
use crate::fit::{linear_fit, LinearFit};
use crate::lattice::{forward_diff, ScalarField, TorusGrid, VectorField};
use crate::rng::stream;
use crate::SolveError;

/// `G_L(., y)`: the mean-free solution of `div* a grad G = delta_y - L^{-d}`.
#[derive(Clone, Debug)]
pub struct GreenSlice {
    pub source: usize,
    pub values: ScalarField,
    pub diagnostics: Diagnostics,
}

/// `delta_y - L^{-d}`.
pub fn green_rhs(grid: TorusGrid, y: usize) -> ScalarField {
    let background = 1.0 / grid.len() as f64;
    ScalarField::from_fn(grid, |x| if x == y { 1.0 - background } else { -background })
}

pub fn green_slice_with(solver: &VariableSolver<'_>, y: usize) -> Result<GreenSlice, SolveError> {
    let grid = solver.coefficients().grid();
    let sol = solver.solve(&green_rhs(grid, y))?;
    let diagnostics = sol.diagnostics;
    Ok(GreenSlice {
        source: y,
        values: sol.converged()?,
        diagnostics,
    })
}

pub fn green_slice(a: &CoefficientField, y: usize, config: SolverConfig) -> Result<GreenSlice, SolveError> {
    green_slice_with(&VariableSolver::new(a, config)?, y)
}

/// All slices, `table[y](x) = G_L(x, y)`.
pub fn green_table(solver: &VariableSolver<'_>) -> Result<Vec<ScalarField>, SolveError> {
    solver
        .coefficients()
        .grid()
        .sites()
        .map(|y| green_slice_with(solver, y).map(|s| s.values))
        .collect()
}

/// `grad_x grad_{y_k} G_L(x, y)` as a vector field in `x`.
pub fn mixed_second_gradient(solver: &VariableSolver<'_>, y: usize, k: usize) -> Result<VectorField, SolveError> {
    let grid = solver.coefficients().grid();
    let base = green_slice_with(solver, y)?.values;
    let shifted = green_slice_with(solver, grid.plus(y, k))?.values;
    Ok(forward_diff(&shifted.sub(&base)))
}

/// `grad_x G(., y)` and `grad_x grad_{y_k} G(., y)` for every `k`, from `d + 1` solves.
pub fn green_gradients(solver: &VariableSolver<'_>, y: usize) -> Result<(VectorField, Vec<VectorField>), SolveError> {
    let grid = solver.coefficients().grid();
    let base = green_slice_with(solver, y)?.values;
    let mixed = (0..grid.dim())
        .map(|k| {
            let shifted = green_slice_with(solver, grid.plus(y, k))?.values;
            Ok(forward_diff(&shifted.sub(&base)))
        })
        .collect::<Result<Vec<_>, SolveError>>()?;
    Ok((forward_diff(&base), mixed))
}

/// Shell index `round(torus_dist(x, 0))` of every site.
pub fn shell_index(grid: TorusGrid) -> Vec<usize> {
    grid.sites().map(|x| grid.torus_dist(x, 0).round() as usize).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayStatistic {
    /// `max |grad_x G|` over shell sites and realizations.
    QuenchedGradient,
    /// `E[|grad_x G|^4]^{1/4}`
    AnnealedGradient,
    /// `E[|grad_x grad_y G|^4]^{1/4}`
    AnnealedMixed,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShellRow {
    pub statistic: DecayStatistic,
    pub radius: usize,
    pub value: f64,
    /// Delta-method standard error; zero for the quenched maximum.
    pub std_error: f64,
    pub sites: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    pub statistic: DecayStatistic,
    pub window: (usize, usize),
    pub fit: LinearFit,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayReport {
    pub dim: usize,
    pub side: usize,
    pub realizations: usize,
    pub shells: Vec<ShellRow>,
    pub fits: Vec<DecayFit>,
}

impl DecayReport {
    pub fn slope(&self, statistic: DecayStatistic) -> Option<f64> {
        self.fits.iter().find(|f| f.statistic == statistic).map(|f| f.fit.slope)
    }

    pub fn shell_values(&self, statistic: DecayStatistic) -> Vec<(usize, f64)> {
        self.shells
            .iter()
            .filter(|r| r.statistic == statistic)
            .map(|r| (r.radius, r.value))
            .collect()
    }
}

/// Per-realization shell sums of `|grad G|^4`, `|grad grad G|^4` and shell maxima of `|grad G|`.
struct ShellSample {
    grad4: Vec<f64>,
    mixed4: Vec<f64>,
    grad_max: Vec<f64>,
}

/// Decay statistics of the Green's function with source at the origin, binned by
/// minimum-image distance; slopes are fitted in `ln r` over shells `2 <= r <= L/4`.
pub fn decay_stats(
    measure: &SingleSiteMeasure,
    grid: TorusGrid,
    realizations: usize,
    seed: u64,
    config: SolverConfig,
) -> Result<DecayReport, SolveError> {
    if realizations < 2 {
        return Err(EnsembleError::TooFewSamples(realizations).into());
    }
    let shells = shell_index(grid);
    let n_shells = shells.iter().max().copied().unwrap_or(0) + 1;
    let mut counts = vec![0usize; n_shells];
    for &s in &shells {
        counts[s] += 1;
    }
    let d = grid.dim();
    let samples = (0..realizations as u64)
        .into_par_iter()
        .map(|i| -> Result<ShellSample, SolveError> {
            let a = sample_field(measure, grid, &mut stream(seed, i))?;
            let solver = VariableSolver::new(&a, config)?;
            let (grad, mixed) = green_gradients(&solver, 0)?;
            let mut out = ShellSample {
                grad4: vec![0.0; n_shells],
                mixed4: vec![0.0; n_shells],
                grad_max: vec![0.0; n_shells],
            };
            for x in grid.sites() {
                let s = shells[x];
                let g2: f64 = grad.at(x).iter().map(|v| v * v).sum();
                let m2: f64 = (0..d).map(|k| mixed[k].at(x).iter().map(|v| v * v).sum::<f64>()).sum();
                out.grad4[s] += g2 * g2;
                out.mixed4[s] += m2 * m2;
                out.grad_max[s] = out.grad_max[s].max(g2.sqrt());
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    for r in 0..n_shells {
        if counts[r] == 0 {
            continue;
        }
        for (statistic, pick) in [
            (DecayStatistic::AnnealedGradient, 0),
            (DecayStatistic::AnnealedMixed, 1),
        ] {
            let per: Vec<f64> = samples
                .iter()
                .map(|s| if pick == 0 { s.grad4[r] } else { s.mixed4[r] } / counts[r] as f64)
                .collect();
            let e = Estimate::from_samples(&per)?;
            let value = e.mean.powf(0.25);
            let std_error = if e.mean > 0.0 {
                0.25 * e.mean.powf(-0.75) * e.std_error
            } else {
                0.0
            };
            rows.push(ShellRow {
                statistic,
                radius: r,
                value,
                std_error,
                sites: counts[r],
            });
        }
        rows.push(ShellRow {
            statistic: DecayStatistic::QuenchedGradient,
            radius: r,
            value: samples.iter().map(|s| s.grad_max[r]).fold(0.0, f64::max),
            std_error: 0.0,
            sites: counts[r],
        });
    }

    let window = (2, grid.side() / 4);
    let mut fits = Vec::new();
    for statistic in [
        DecayStatistic::QuenchedGradient,
        DecayStatistic::AnnealedGradient,
        DecayStatistic::AnnealedMixed,
    ] {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.statistic == statistic && r.radius >= window.0 && r.radius <= window.1 && r.value > 0.0)
            .map(|r| ((r.radius as f64).ln(), r.value.ln()))
            .collect();
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        if let Ok(fit) = linear_fit(&xs, &ys) {
            fits.push(DecayFit { statistic, window, fit });
        }
    }
    Ok(DecayReport {
        dim: d,
        side: grid.side(),
        realizations,
        shells: rows,
        fits,
    })
}

/// Comparison of a planar Green's function with the `x3`-sum of its extruded 3-d counterpart.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimensionReductionReport {
    pub side: usize,
    pub max_discrepancy: f64,
    pub scale: f64,
    pub tolerance: f64,
    /// Largest `|sum_x|` of either side.
    pub mean_defect: f64,
    pub passed: bool,
}

/// Builds `a3(x, x3) = diag(a2_1(x), a2_2(x), 1)` and compares `G2(x, 0)` with
/// `sum_{x3} G3((x, x3), 0)`. Passes if the discrepancy is at most `10 tol max|G2|`.
pub fn dimension_reduction_check(
    a2: &CoefficientField,
    config: SolverConfig,
) -> Result<DimensionReductionReport, SolveError> {
    let g2 = a2.grid();
    assert_eq!(g2.dim(), 2, "dimension reduction starts from a planar field");
    let l = g2.side();
    let g3 = TorusGrid::new(3, l)?;
    let mut diag = Vec::with_capacity(g3.len() * 3);
    for x in g3.sites() {
        let planar = x % g2.len();
        diag.extend_from_slice(&[a2.get(planar, 0), a2.get(planar, 1), 1.0]);
    }
    let a3 = CoefficientField::new(g3, diag)?;
    let planar = green_slice(a2, 0, config)?.values;
    let extruded = green_slice(&a3, 0, config)?.values;
    let mut summed = vec![0.0; g2.len()];
    for x in g3.sites() {
        summed[x % g2.len()] += extruded.get(x);
    }
    let max_discrepancy = planar
        .values()
        .iter()
        .zip(&summed)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = planar.max_abs();
    let mean_defect = planar.sum().abs().max(summed.iter().sum::<f64>().abs());
    Ok(DimensionReductionReport {
        side: l,
        max_discrepancy,
        scale,
        tolerance: config.tolerance,
        mean_defect,
        passed: max_discrepancy <= 10.0 * config.tolerance * scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::{solve_constant, HomogenizedMatrix};

    fn tight() -> SolverConfig {
        SolverConfig::with_tolerance(1e-12)
    }

    fn random_field(g: TorusGrid, seed: u64) -> CoefficientField {
        sample_field(&SingleSiteMeasure::default_two_point(), g, &mut stream(seed, 0)).unwrap()
    }

    #[test]
    fn unit_coefficients_match_spectral_oracle() {
        let g = TorusGrid::new(2, 8).unwrap();
        let a = CoefficientField::constant(g, 1.0);
        let y = g.index(&[3, 5]);
        let slice = green_slice(&a, y, tight()).unwrap();
        let oracle = solve_constant(&HomogenizedMatrix::identity(2), &green_rhs(g, y)).unwrap();
        assert!(slice.values.sub(&oracle).max_abs() < 1e-9);
        assert!(slice.values.sum().abs() < 1e-12);
    }

    #[test]
    fn symmetry_and_shift_covariance() {
        let g = TorusGrid::new(2, 6).unwrap();
        let a = random_field(g, 8);
        let solver = VariableSolver::new(&a, tight()).unwrap();
        let table = green_table(&solver).unwrap();
        let mut rng = stream(1, 1);
        use rand::Rng;
        for _ in 0..10 {
            let (x, y) = (rng.random_range(0..g.len()), rng.random_range(0..g.len()));
            assert!((table[y].get(x) - table[x].get(y)).abs() < 1e-8);
            let shifted = green_slice(&a.shifted(y), 0, tight()).unwrap().values;
            assert!((table[y].get(x) - shifted.get(g.difference(x, y))).abs() < 1e-8);
        }
    }

    #[test]
    fn mixed_gradient_from_slices_matches_full_table() {
        let g = TorusGrid::new(2, 4).unwrap();
        let a = random_field(g, 4);
        let solver = VariableSolver::new(&a, tight()).unwrap();
        let table = green_table(&solver).unwrap();
        for y in [0, 5, 15] {
            for k in 0..2 {
                let m = mixed_second_gradient(&solver, y, k).unwrap();
                let yk = g.plus(y, k);
                for x in g.sites() {
                    for i in 0..2 {
                        let xi = g.plus(x, i);
                        let direct = table[yk].get(xi) - table[yk].get(x) - table[y].get(xi) + table[y].get(x);
                        assert!((m.get(x, i) - direct).abs() < 1e-10);
                    }
                }
            }
        }
        // Telescoping over the torus: sum_y grad_{y_k} G(x, y) = 0.
        for x in g.sites() {
            let s: f64 = g.sites().map(|y| table[g.plus(y, 0)].get(x) - table[y].get(x)).sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn constant_coefficient_mixed_gradient_is_translation_invariant() {
        // For a = Id, G(x, y) = G0(x - y), so grad_x grad_{y_k} G(x, y) depends on x - y only.
        let g = TorusGrid::new(2, 8).unwrap();
        let a = CoefficientField::constant(g, 1.0);
        let solver = VariableSolver::new(&a, tight()).unwrap();
        let g0 = solve_constant(&HomogenizedMatrix::identity(2), &green_rhs(g, 0)).unwrap();
        let y = g.index(&[2, 3]);
        let m = mixed_second_gradient(&solver, y, 1).unwrap();
        for x in g.sites() {
            let z = g.difference(x, y);
            for i in 0..2 {
                // G0(z + e_i - e_k) - G0(z - e_k) - G0(z + e_i) + G0(z)
                let zk = g.minus(z, 1);
                let oracle = g0.get(g.plus(zk, i)) - g0.get(zk) - g0.get(g.plus(z, i)) + g0.get(z);
                assert!((m.get(x, i) - oracle).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dimension_reduction_identity() {
        let g = TorusGrid::new(2, 8).unwrap();
        let unit = dimension_reduction_check(&CoefficientField::constant(g, 1.0), tight()).unwrap();
        assert!(unit.max_discrepancy < 1e-8 && unit.passed, "{unit:?}");
        let a = random_field(g, 12);
        let loose = dimension_reduction_check(&a, SolverConfig::with_tolerance(1e-8)).unwrap();
        let strict = dimension_reduction_check(&a, SolverConfig::with_tolerance(1e-10)).unwrap();
        assert!(strict.max_discrepancy < 1e-7);
        assert!(loose.passed && strict.passed, "{loose:?} {strict:?}");
        assert!(strict.max_discrepancy < loose.max_discrepancy);
        assert!(strict.mean_defect < 1e-10);
    }

    #[test]
    fn shells_follow_minimum_image_distance() {
        let g = TorusGrid::new(2, 8).unwrap();
        let s = shell_index(g);
        assert_eq!(s[g.index(&[7, 0])], 1);
        assert_eq!(s[g.index(&[4, 4])], 6);
    }
}
