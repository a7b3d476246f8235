//! The two-scale remainder `z = u - u0 - sum_j phi_j grad_j u0`, its flux decomposition,
//! scaled norms and exhaustive checks of the vertical-derivative identities.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corrector::{ahom_l, ahom_l_ensemble, b_field, solve_correctors, solve_correctors_with, CorrectorSet};
use crate::elliptic::{
    discretize_rhs, solve_constant, Diagnostics, EllipticError, HomogenizedMatrix, RhsError, SolverConfig,
    SpectralSolver, TrigPolynomial, VariableSolver,
};
use crate::ensemble::{compensated_sum, CoefficientField, ConfigSpace, ExpectationMode, SingleSiteMeasure};
use crate::green::green_table;
use crate::lattice::{
    apply_operator, backward_diff_div, forward_diff, forward_second_diff, hessian, MatrixField, ScalarField,
    TorusGrid, VectorField,
};
use crate::SolveError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TwoScaleError {
    #[error("u0 does not solve the homogenized equation: relative residual {residual:e}")]
    InconsistentHomogenizedMatrix { residual: f64 },
    #[error("homogenized matrix has dimension {got}, lattice has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Rhs(#[from] RhsError),
}

impl From<EllipticError> for TwoScaleError {
    fn from(e: EllipticError) -> Self {
        Self::Solve(e.into())
    }
}

/// Relative residual above which `u0` is taken to belong to a different homogenized matrix.
pub const CONSISTENCY_TOLERANCE: f64 = 1e-8;

/// Pointwise `u - u0 - sum_j phi_j grad_j u0`.
pub fn assemble_z(u: &ScalarField, u0: &ScalarField, correctors: &CorrectorSet) -> ScalarField {
    let g = u.grid();
    assert_eq!(g, u0.grid());
    assert_eq!(g, correctors.grid());
    let grad_u0 = forward_diff(u0);
    ScalarField::from_fn(g, |x| {
        let first_order: f64 = (0..g.dim()).map(|j| correctors.phi(j).get(x) * grad_u0.get(x, j)).sum();
        u.get(x) - u0.get(x) - first_order
    })
}

/// The pieces of `div* a grad z = div* g + r1 + r2`.
#[derive(Clone, Debug)]
pub struct Decomposition {
    /// `g_i = -sum_j a^{ii} phi_j(. + e_i) grad_i grad_j u0`.
    pub g: VectorField,
    /// `(a_hom,L - a_hom) : H` with `H_ij = -grad*_i grad_j u0`.
    pub r1: ScalarField,
    /// `(b - a_hom,L) : H`.
    pub r2: ScalarField,
    pub b: MatrixField,
}

pub fn decomposition(
    a: &CoefficientField,
    correctors: &CorrectorSet,
    u0: &ScalarField,
    a_hom: &HomogenizedMatrix,
    a_hom_l: &HomogenizedMatrix,
) -> Result<Decomposition, TwoScaleError> {
    let g = a.grid();
    let d = g.dim();
    for m in [a_hom, a_hom_l] {
        if m.dim() != d {
            return Err(TwoScaleError::Dimension {
                expected: d,
                got: m.dim(),
            });
        }
    }
    let second = forward_second_diff(u0);
    let mut flux = VectorField::zeros(g);
    for x in g.sites() {
        for i in 0..d {
            let xp = g.plus(x, i);
            let s: f64 = (0..d).map(|j| correctors.phi(j).get(xp) * second.get(x, i, j)).sum();
            flux.set(x, i, -a.get(x, i) * s);
        }
    }
    let h = hessian(u0);
    let shift: Vec<f64> = a_hom_l.entries().iter().zip(a_hom.entries()).map(|(l, h)| l - h).collect();
    let r1 = h.contract_constant(&shift);
    let b = b_field(a, correctors);
    let mut r2 = b.contract(&h);
    let proxy = h.contract_constant(a_hom_l.entries());
    r2 = r2.sub(&proxy);
    Ok(Decomposition { g: flux, r1, r2, b })
}

/// Relative residuals of the decomposition against `|f|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IdentityResidual {
    /// `|div* a grad z - div* g - r1 - r2| / |f|`.
    pub raw: f64,
    /// Same, after removing the equation residuals of `u`, `u0` and the correctors.
    pub corrected: f64,
}

/// Everything assembled from one realization.
#[derive(Clone, Debug)]
pub struct TwoScaleBundle {
    pub grid: TorusGrid,
    pub u: ScalarField,
    pub u0: ScalarField,
    pub z: ScalarField,
    pub decomposition: Decomposition,
    pub a_hom: HomogenizedMatrix,
    pub a_hom_l: HomogenizedMatrix,
    pub residual: IdentityResidual,
}

impl TwoScaleBundle {
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        a: &CoefficientField,
        correctors: &CorrectorSet,
        u: ScalarField,
        u0: ScalarField,
        f: &ScalarField,
        a_hom: HomogenizedMatrix,
        a_hom_l: HomogenizedMatrix,
    ) -> Result<Self, TwoScaleError> {
        let grid = a.grid();
        let d = grid.dim();
        let decomposition = decomposition(a, correctors, &u0, &a_hom, &a_hom_l)?;
        let f_norm = f.norm();
        let scale = if f_norm > 0.0 { f_norm } else { 1.0 };
        let homogenized = hessian(&u0).contract_constant(a_hom.entries()).scale(-1.0);
        let u0_defect = homogenized.sub(f);
        if u0_defect.norm() > CONSISTENCY_TOLERANCE * scale {
            return Err(TwoScaleError::InconsistentHomogenizedMatrix {
                residual: u0_defect.norm() / scale,
            });
        }
        let z = assemble_z(&u, &u0, correctors);
        let lhs = apply_operator(a, &z);
        let rhs = backward_diff_div(&decomposition.g)
            .add(&decomposition.r1)
            .add(&decomposition.r2);
        let raw = lhs.sub(&rhs);

        let u_defect = apply_operator(a, &u).sub(f);
        let grad_u0 = forward_diff(&u0);
        let mut corrector_defect = ScalarField::zeros(grid);
        for j in 0..d {
            let mut q = VectorField::zeros(grid);
            for x in grid.sites() {
                for i in 0..d {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    q.set(x, i, a.get(x, i) * (correctors.grad(j).get(x, i) + delta));
                }
            }
            let rho = backward_diff_div(&q);
            corrector_defect = corrector_defect.add(&rho.zip_with(&grad_u0.component(j), |r, s| r * s));
        }
        let corrected = raw.sub(&u_defect).add(&u0_defect).add(&corrector_defect);
        Ok(Self {
            grid,
            u,
            u0,
            z,
            decomposition,
            a_hom,
            a_hom_l,
            residual: IdentityResidual {
                raw: raw.norm() / scale,
                corrected: corrected.norm() / scale,
            },
        })
    }
}

/// Lattice sums and their `eps = 1/L` scaled counterparts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Norms {
    /// `sum z^2`.
    pub sum_sq: f64,
    /// `sum |grad z|^2`.
    pub sum_grad_sq: f64,
    /// `sum (z^2 + L^2 |grad z|^2)`.
    pub lattice_h1: f64,
    /// `(eps^d sum z^2)^{1/2}`.
    pub l2: f64,
    /// `(eps^d sum (z^2 + |grad_eps z|^2))^{1/2}` with `grad_eps = L grad`.
    pub h1: f64,
}

pub fn norms(z: &ScalarField) -> Norms {
    let g = z.grid();
    let l = g.side() as f64;
    let sum_sq = compensated_sum(z.values().iter().map(|v| v * v));
    let sum_grad_sq = compensated_sum(forward_diff(z).values().iter().map(|v| v * v));
    let lattice_h1 = sum_sq + l * l * sum_grad_sq;
    let vol = g.epsilon().powi(g.dim() as i32);
    Norms {
        sum_sq,
        sum_grad_sq,
        lattice_h1,
        l2: (vol * sum_sq).sqrt(),
        h1: (vol * lattice_h1).sqrt(),
    }
}

/// `eps`-scaled L2 norm of `u - u0`.
pub fn homogenization_error(u: &ScalarField, u0: &ScalarField) -> f64 {
    norms(&u.sub(u0)).l2
}

/// A fixed right-hand side and homogenized solution shared by every realization at one `L`.
#[derive(Clone, Debug)]
pub struct TwoScaleProblem {
    grid: TorusGrid,
    /// Lattice data `eps^2 f(eps x)`.
    f: ScalarField,
    u0: ScalarField,
    a_hom: HomogenizedMatrix,
    /// `|f_eps|_{L2(T_eps)}`.
    f_norm_eps: f64,
    /// `sum_x |H(x)|^2` of the lattice `u0`.
    hessian_sq: f64,
}

impl TwoScaleProblem {
    pub fn new(grid: TorusGrid, f: &TrigPolynomial, a_hom: HomogenizedMatrix) -> Result<Self, TwoScaleError> {
        if a_hom.dim() != grid.dim() {
            return Err(TwoScaleError::Dimension {
                expected: grid.dim(),
                got: a_hom.dim(),
            });
        }
        let continuum = discretize_rhs(f, grid)?;
        let eps = grid.epsilon();
        let vol = eps.powi(grid.dim() as i32);
        let f_norm_eps = (vol * continuum.norm_sq()).sqrt();
        let lattice = continuum.scale(eps * eps);
        let u0 = SpectralSolver::new(grid, &a_hom)?.solve(&lattice)?;
        let hessian_sq = hessian(&u0).frobenius_sq();
        Ok(Self {
            grid,
            f: lattice,
            u0,
            a_hom,
            f_norm_eps,
            hessian_sq,
        })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn rhs(&self) -> &ScalarField {
        &self.f
    }

    pub fn u0(&self) -> &ScalarField {
        &self.u0
    }

    pub fn a_hom(&self) -> &HomogenizedMatrix {
        &self.a_hom
    }

    pub fn f_norm_eps(&self) -> f64 {
        self.f_norm_eps
    }

    pub fn hessian_sq(&self) -> f64 {
        self.hessian_sq
    }

    /// Solves for `u` and the correctors on `a` and measures `z` and `u - u0`.
    pub fn sample(&self, a: &CoefficientField, config: SolverConfig) -> Result<TwoScaleSample, TwoScaleError> {
        let solver = VariableSolver::new(a, config)?;
        let correctors = solve_correctors_with(&solver)?;
        let sol = solver.solve(&self.f)?;
        let u_diagnostics = sol.diagnostics;
        let u = sol.converged()?;
        let z = assemble_z(&u, &self.u0, &correctors);
        let mut diagnostics = correctors.diagnostics().to_vec();
        diagnostics.push(u_diagnostics);
        Ok(TwoScaleSample {
            remainder: norms(&z),
            homogenization: norms(&u.sub(&self.u0)),
            a_hom_l: ahom_l(a, &correctors).matrix,
            diagnostics,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TwoScaleSample {
    /// Norms of `z`.
    pub remainder: Norms,
    /// Norms of `u - u0`.
    pub homogenization: Norms,
    pub a_hom_l: HomogenizedMatrix,
    /// Corrector solves followed by the solve for `u`.
    pub diagnostics: Vec<Diagnostics>,
}

/// Exhaustive expectation of `r2(x)` with `a_hom,L` taken from the same enumeration.
#[derive(Clone, Debug, Serialize)]
pub struct R2Expectation {
    pub per_site: Vec<f64>,
    pub max_abs: f64,
    /// Scale of `r2` for relative comparisons: `max_x |H(x)|`.
    pub scale: f64,
    pub a_hom_l: HomogenizedMatrix,
}

pub fn expected_r2(
    measure: &SingleSiteMeasure,
    grid: TorusGrid,
    f: &ScalarField,
    budget: usize,
    config: SolverConfig,
) -> Result<R2Expectation, TwoScaleError> {
    let a_hom_l = ahom_l_ensemble(measure, grid, ExpectationMode::Exhaustive { budget }, config)?.mean;
    let u0 = solve_constant(&a_hom_l, f)?;
    let space = ConfigSpace::new(measure, grid, budget).map_err(SolveError::from)?;
    let tables = space
        .tabulate(|a| -> Result<Vec<f64>, TwoScaleError> {
            let c = solve_correctors(a, config)?;
            let dec = decomposition(a, &c, &u0, &a_hom_l, &a_hom_l)?;
            Ok(dec.r2.into_values())
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let per_site: Vec<f64> = grid
        .sites()
        .map(|x| compensated_sum((0..space.len()).map(|c| space.weight(c) * tables[c][x])))
        .collect();
    let h = hessian(&u0);
    let d = grid.dim();
    let scale = grid
        .sites()
        .map(|x| (0..d * d).map(|k| h.get(x, k / d, k % d).abs()).fold(0.0f64, f64::max))
        .fold(0.0f64, f64::max);
    let max_abs = per_site.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
    Ok(R2Expectation {
        per_site,
        max_abs,
        scale,
        a_hom_l,
    })
}

/// The vertical-derivative identities, each comparing `d zeta / d y` with its Green representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerticalIdentity {
    /// `phi_j(x)`.
    Corrector,
    /// `grad_i phi_j(x)`.
    CorrectorGradient,
    /// The solution `u(x)` with fixed data.
    Solution,
    /// `a^{ii}(x) (grad_i phi_j(x) + delta_ij)`.
    Flux,
    /// `z(x)`.
    Remainder,
}

impl VerticalIdentity {
    pub const ALL: [Self; 5] = [
        Self::Corrector,
        Self::CorrectorGradient,
        Self::Solution,
        Self::Flux,
        Self::Remainder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Corrector => "corrector",
            Self::CorrectorGradient => "corrector-gradient",
            Self::Solution => "solution",
            Self::Flux => "flux",
            Self::Remainder => "remainder",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityRow {
    pub identity: VerticalIdentity,
    pub dim: usize,
    pub side: usize,
    pub measure: SingleSiteMeasure,
    pub max_discrepancy: f64,
    /// Largest `|d zeta / d y|` seen; zero only without randomness.
    pub max_derivative: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub configurations: usize,
    pub threshold: f64,
    pub rows: Vec<IdentityRow>,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn max_discrepancy(&self) -> f64 {
        self.rows.iter().map(|r| r.max_discrepancy).fold(0.0, f64::max)
    }

    pub fn row(&self, identity: VerticalIdentity) -> Option<&IdentityRow> {
        self.rows.iter().find(|r| r.identity == identity)
    }
}

pub const IDENTITY_THRESHOLD: f64 = 1e-8;

/// Quenched quantities of one configuration.
struct ConfigTables {
    diag: Vec<f64>,
    phi: Vec<ScalarField>,
    grad_phi: Vec<VectorField>,
    /// `green[y](x) = G(x, y)`.
    green: Vec<ScalarField>,
    u: ScalarField,
    grad_u: VectorField,
    z: ScalarField,
    grad_z: VectorField,
}

impl ConfigTables {
    fn flux(&self, x: usize, i: usize, j: usize) -> f64 {
        let d = self.grad_phi.len();
        let delta = if i == j { 1.0 } else { 0.0 };
        self.diag[x * d + i] * (self.grad_phi[j].get(x, i) + delta)
    }
}

/// Checks every identity for every configuration of a finite-support measure.
///
/// `f` is fixed lattice data for `u`; `u0` is the constant-coefficient solution with the
/// exhaustive `a_hom,L`.
pub fn verify_vertical_identities(
    measure: &SingleSiteMeasure,
    grid: TorusGrid,
    f: &ScalarField,
    budget: usize,
    config: SolverConfig,
) -> Result<IdentityReport, TwoScaleError> {
    let space = ConfigSpace::new(measure, grid, budget).map_err(SolveError::from)?;
    let d = grid.dim();
    let n = grid.len();
    let a_hom_l = ahom_l_ensemble(measure, grid, ExpectationMode::Exhaustive { budget }, config)?.mean;
    let u0 = solve_constant(&a_hom_l, f)?;
    let grad_u0 = forward_diff(&u0);
    let second_u0 = forward_second_diff(&u0);

    let tables = space
        .tabulate(|a| -> Result<ConfigTables, TwoScaleError> {
            let solver = VariableSolver::new(a, config)?;
            let c = solve_correctors_with(&solver)?;
            let green = green_table(&solver)?;
            let u = solver.solve(f)?.converged()?;
            let z = assemble_z(&u, &u0, &c);
            Ok(ConfigTables {
                diag: a.diag().to_vec(),
                phi: (0..d).map(|j| c.phi(j).clone()).collect(),
                grad_phi: (0..d).map(|j| c.grad(j).clone()).collect(),
                green,
                grad_u: forward_diff(&u),
                u,
                grad_z: forward_diff(&z),
                z,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let atoms = space.atoms();
    // zeta(c) - <zeta>_y
    let vertical = |c: usize, y: usize, q: &dyn Fn(&ConfigTables) -> f64| -> f64 {
        let mean = compensated_sum(
            atoms
                .iter()
                .enumerate()
                .map(|(k, atom)| atom.weight * q(&tables[space.with_atom(c, y, k)])),
        );
        q(&tables[c]) - mean
    };
    // [F]_y = a(y) <F>_y - <a(y) F>_y, F given componentwise
    let commutator = |c: usize, y: usize, comp: &dyn Fn(&ConfigTables, usize) -> f64| -> Vec<f64> {
        let own = &atoms[space.atom_index(c, y)].diag;
        (0..d)
            .map(|m| {
                let mut mean = Vec::with_capacity(atoms.len());
                let mut weighted = Vec::with_capacity(atoms.len());
                for (k, atom) in atoms.iter().enumerate() {
                    let v = comp(&tables[space.with_atom(c, y, k)], m);
                    mean.push(atom.weight * v);
                    weighted.push(atom.weight * atom.diag[m] * v);
                }
                own[m] * compensated_sum(mean) - compensated_sum(weighted)
            })
            .collect()
    };

    let worst = (0..space.len())
        .into_par_iter()
        .map(|c| {
            let t = &tables[c];
            let mut worst = [[0.0f64; 2]; 5];
            let mut record = |id: usize, lhs: f64, rhs: f64| {
                worst[id][0] = worst[id][0].max((lhs - rhs).abs());
                worst[id][1] = worst[id][1].max(lhs.abs());
            };
            for y in 0..n {
                let corr: Vec<Vec<f64>> = (0..d)
                    .map(|j| {
                        commutator(c, y, &move |s: &ConfigTables, m| {
                            s.grad_phi[j].get(y, m) + if m == j { 1.0 } else { 0.0 }
                        })
                    })
                    .collect();
                let sol = commutator(c, y, &|s: &ConfigTables, m| s.grad_u.get(y, m));
                let f1 = commutator(c, y, &|s: &ConfigTables, m| s.grad_z.get(y, m));
                let f3: Vec<f64> = {
                    let mut acc = vec![0.0; d];
                    for i in 0..d {
                        for j in 0..d {
                            let yi = grid.plus(y, i);
                            let v = commutator(c, y, &|s: &ConfigTables, m| if m == i { s.phi[j].get(yi) } else { 0.0 });
                            for m in 0..d {
                                acc[m] += second_u0.get(y, i, j) * v[m];
                            }
                        }
                    }
                    acc
                };
                // grad_{y_m} G(x, y) and grad_{x_i} grad_{y_m} G(x, y)
                let dy: Vec<ScalarField> = (0..d).map(|m| t.green[grid.plus(y, m)].sub(&t.green[y])).collect();
                let dxy: Vec<VectorField> = dy.iter().map(forward_diff).collect();
                let pair = |x: usize, v: &[f64]| -> f64 { (0..d).map(|m| dy[m].get(x) * v[m]).sum() };
                let mixed = |x: usize, i: usize, v: &[f64]| -> f64 { (0..d).map(|m| dxy[m].get(x, i) * v[m]).sum() };

                for x in 0..n {
                    for j in 0..d {
                        let lhs = vertical(c, y, &|s: &ConfigTables| s.phi[j].get(x));
                        record(0, lhs, -pair(x, &corr[j]));
                        for i in 0..d {
                            let lhs = vertical(c, y, &|s: &ConfigTables| s.grad_phi[j].get(x, i));
                            let rhs = -mixed(x, i, &corr[j]);
                            record(1, lhs, rhs);
                            let lhs = vertical(c, y, &|s: &ConfigTables| s.flux(x, i, j));
                            let local = if x == y { corr[j][i] } else { 0.0 };
                            record(3, lhs, local + t.diag[x * d + i] * rhs);
                        }
                    }
                    let lhs = vertical(c, y, &|s: &ConfigTables| s.u.get(x));
                    record(2, lhs, -pair(x, &sol));

                    let mut total: Vec<f64> = (0..d).map(|m| f1[m] + f3[m]).collect();
                    for (j, cj) in corr.iter().enumerate() {
                        let w = grad_u0.get(y, j) - grad_u0.get(x, j);
                        for m in 0..d {
                            total[m] += w * cj[m];
                        }
                    }
                    let lhs = vertical(c, y, &|s: &ConfigTables| s.z.get(x));
                    record(4, lhs, -pair(x, &total));
                }
            }
            worst
        })
        .reduce(
            || [[0.0; 2]; 5],
            |a, b| std::array::from_fn(|k| [a[k][0].max(b[k][0]), a[k][1].max(b[k][1])]),
        );

    let rows = VerticalIdentity::ALL
        .iter()
        .enumerate()
        .map(|(k, &identity)| IdentityRow {
            identity,
            dim: d,
            side: grid.side(),
            measure: measure.clone(),
            max_discrepancy: worst[k][0],
            max_derivative: worst[k][1],
            passed: worst[k][0] <= IDENTITY_THRESHOLD,
        })
        .collect();
    Ok(IdentityReport {
        configurations: space.len(),
        threshold: IDENTITY_THRESHOLD,
        rows,
    })
}
