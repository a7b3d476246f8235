//! Random variables, expectations, vertical derivatives and the commutator.

use serde::Serialize;

use super::exhaustive::{compensated_sum, ConfigSpace};
use super::{sample_field, CoefficientField, EnsembleError, SingleSiteMeasure};
use crate::lattice::TorusGrid;
use crate::rng::stream;

/// A real function of the coefficient field.
pub trait RandomVariable: Sync {
    fn eval(&self, a: &CoefficientField) -> f64;
}

impl<F: Fn(&CoefficientField) -> f64 + Sync> RandomVariable for F {
    fn eval(&self, a: &CoefficientField) -> f64 {
        self(a)
    }
}

/// A `d`-vector valued function of the coefficient field.
pub trait RandomVector: Sync {
    fn eval(&self, a: &CoefficientField) -> Vec<f64>;
}

impl<F: Fn(&CoefficientField) -> Vec<f64> + Sync> RandomVector for F {
    fn eval(&self, a: &CoefficientField) -> Vec<f64> {
        self(a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExpectationMode {
    Exhaustive { budget: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    /// Zero for exhaustive evaluation.
    pub std_error: f64,
    pub count: usize,
}

impl Estimate {
    /// Mean and `sd / sqrt(n)` of i.i.d. samples. Needs at least two samples.
    pub fn from_samples(samples: &[f64]) -> Result<Self, EnsembleError> {
        let n = samples.len();
        if n < 2 {
            return Err(EnsembleError::TooFewSamples(n));
        }
        let mean = compensated_sum(samples.iter().copied()) / n as f64;
        let var = compensated_sum(samples.iter().map(|v| (v - mean).powi(2))) / (n - 1) as f64;
        Ok(Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            count: n,
        })
    }
}

pub fn expectation(
    zeta: &dyn RandomVariable,
    measure: &SingleSiteMeasure,
    grid: TorusGrid,
    mode: ExpectationMode,
) -> Result<Estimate, EnsembleError> {
    match mode {
        ExpectationMode::Exhaustive { budget } => {
            let space = ConfigSpace::new(measure, grid, budget)?;
            let values = space.tabulate(|a| zeta.eval(a));
            Ok(Estimate {
                mean: space.expectation(&values),
                std_error: 0.0,
                count: space.len(),
            })
        }
        ExpectationMode::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(EnsembleError::TooFewSamples(samples));
            }
            measure.validate(grid.dim())?;
            let values = (0..samples as u64)
                .map(|i| sample_field(measure, grid, &mut stream(seed, i)).map(|a| zeta.eval(&a)))
                .collect::<Result<Vec<_>, _>>()?;
            Estimate::from_samples(&values)
        }
    }
}

/// `zeta(a) - int zeta beta(da(y))`, exact for finite-support `beta`.
pub fn vertical_derivative(
    zeta: &dyn RandomVariable,
    y: usize,
    a: &CoefficientField,
    measure: &SingleSiteMeasure,
) -> Result<f64, EnsembleError> {
    let atoms = measure.atoms(a.grid().dim()).ok_or(EnsembleError::UnsupportedMeasure)?;
    let mean = compensated_sum(atoms.iter().map(|atom| atom.weight * zeta.eval(&a.with_site(y, &atom.diag))));
    Ok(zeta.eval(a) - mean)
}

/// Vertical derivative with the single-site integral replaced by `samples` draws of `a(y)`.
pub fn vertical_derivative_mc(
    zeta: &dyn RandomVariable,
    y: usize,
    a: &CoefficientField,
    measure: &SingleSiteMeasure,
    samples: usize,
    seed: u64,
) -> Result<Estimate, EnsembleError> {
    if samples < 2 {
        return Err(EnsembleError::TooFewSamples(samples));
    }
    let d = a.grid().dim();
    let own = zeta.eval(a);
    let mut rng = stream(seed, y as u64);
    let mut site = vec![0.0; d];
    let draws: Vec<f64> = (0..samples)
        .map(|_| {
            measure.sample_site(&mut rng, &mut site);
            own - zeta.eval(&a.with_site(y, &site))
        })
        .collect();
    Estimate::from_samples(&draws)
}

/// `[F]_y = a(y) <F>_y - <a(y) F>_y`, with `<.>_y` the integral over `a(y)`.
pub fn commutator(
    f: &dyn RandomVector,
    y: usize,
    a: &CoefficientField,
    measure: &SingleSiteMeasure,
) -> Result<Vec<f64>, EnsembleError> {
    let d = a.grid().dim();
    let atoms = measure.atoms(d).ok_or(EnsembleError::UnsupportedMeasure)?;
    let values: Vec<Vec<f64>> = atoms.iter().map(|atom| f.eval(&a.with_site(y, &atom.diag))).collect();
    let own = a.site(y);
    Ok((0..d)
        .map(|m| {
            let mean = compensated_sum(atoms.iter().zip(&values).map(|(at, v)| at.weight * v[m]));
            let weighted =
                compensated_sum(atoms.iter().zip(&values).map(|(at, v)| at.weight * at.diag[m] * v[m]));
            own[m] * mean - weighted
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CommutatorMoment {
    pub q: u32,
    /// `E |[F]_y|^q`
    pub lhs: f64,
    /// `2^q E |F|^q`
    pub rhs: f64,
    pub holds: bool,
}

/// Exhaustive check of `E|[F]_y|^q <= 2^q E|F|^q` for each requested `q`.
pub fn commutator_moment_check(
    f: &dyn RandomVector,
    y: usize,
    measure: &SingleSiteMeasure,
    grid: TorusGrid,
    budget: usize,
    qs: &[u32],
) -> Result<Vec<CommutatorMoment>, EnsembleError> {
    let space = ConfigSpace::new(measure, grid, budget)?;
    let table = space.tabulate(|a| f.eval(a));
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let comm: Vec<f64> = (0..space.len()).map(|c| norm(&space.commutator_at(&table, c, y))).collect();
    let plain: Vec<f64> = table.iter().map(|v| norm(v)).collect();
    Ok(qs
        .iter()
        .map(|&q| {
            let lhs = space.expectation(&comm.iter().map(|v| v.powi(q as i32)).collect::<Vec<_>>());
            let rhs = 2f64.powi(q as i32)
                * space.expectation(&plain.iter().map(|v| v.powi(q as i32)).collect::<Vec<_>>());
            CommutatorMoment {
                q,
                lhs,
                rhs,
                holds: lhs <= rhs + 1e-12,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovarianceReport {
    pub covariance: f64,
    /// `sum_y E[(d zeta/dy)^2]^{1/2} E[(d zeta~/dy)^2]^{1/2}`
    pub covariance_bound: f64,
    /// Sum of the martingale increments over sites in linear order.
    pub martingale_sum: f64,
    pub variance: f64,
    /// `E sum_y (d zeta/dy)^2`
    pub spectral_gap_bound: f64,
    pub martingale_ok: bool,
    pub covariance_ok: bool,
    pub spectral_gap_ok: bool,
}

impl CovarianceReport {
    pub fn passed(&self) -> bool {
        self.martingale_ok && self.covariance_ok && self.spectral_gap_ok
    }
}

pub fn covariance_check(
    zeta: &dyn RandomVariable,
    zeta_tilde: &dyn RandomVariable,
    measure: &SingleSiteMeasure,
    grid: TorusGrid,
    budget: usize,
) -> Result<CovarianceReport, EnsembleError> {
    let space = ConfigSpace::new(measure, grid, budget)?;
    let z = space.tabulate(|a| zeta.eval(a));
    let zt = space.tabulate(|a| zeta_tilde.eval(a));
    Ok(covariance_report_from_tables(&space, &z, &zt))
}

/// Covariance, martingale decomposition and spectral-gap numbers from tabulated variables.
pub fn covariance_report_from_tables(space: &ConfigSpace, zeta: &[f64], zeta_tilde: &[f64]) -> CovarianceReport {
    let center = |v: &[f64]| {
        let m = space.expectation(v);
        v.iter().map(|x| x - m).collect::<Vec<_>>()
    };
    let (z, zt) = (center(zeta), center(zeta_tilde));
    let product = |a: &[f64], b: &[f64]| space.expectation(&a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>());
    let covariance = product(&z, &zt);
    let variance = product(&z, &z);

    let grid = space.grid();
    let mut covariance_bound = 0.0;
    let mut spectral_gap_bound = 0.0;
    for y in grid.sites() {
        let dz = space.vertical_derivative(&z, y);
        let dzt = space.vertical_derivative(&zt, y);
        let sq = product(&dz, &dz);
        covariance_bound += sq.sqrt() * product(&dzt, &dzt).sqrt();
        spectral_gap_bound += sq;
    }

    let mut martingale_sum = 0.0;
    let (mut prev, mut prev_t) = (z.clone(), zt.clone());
    for y in grid.sites() {
        let next = space.integrate_sites(&prev, [y]);
        let next_t = space.integrate_sites(&prev_t, [y]);
        let inc: Vec<f64> = next.iter().zip(&prev).map(|(a, b)| a - b).collect();
        let inc_t: Vec<f64> = next_t.iter().zip(&prev_t).map(|(a, b)| a - b).collect();
        martingale_sum += product(&inc, &inc_t);
        prev = next;
        prev_t = next_t;
    }

    let scale = 1.0 + (product(&z, &z) * product(&zt, &zt)).sqrt();
    CovarianceReport {
        covariance,
        covariance_bound,
        martingale_sum,
        variance,
        spectral_gap_bound,
        martingale_ok: (martingale_sum - covariance).abs() <= 1e-12 * scale,
        covariance_ok: covariance <= covariance_bound + 1e-12,
        spectral_gap_ok: variance <= spectral_gap_bound + 1e-12,
    }
}

#[cfg(test)]
mod tests {
    use super::super::DEFAULT_ENUMERATION_BUDGET;
    use super::*;

    fn beta() -> SingleSiteMeasure {
        SingleSiteMeasure::two_point(0.5, 0.25).unwrap()
    }

    fn tiny() -> TorusGrid {
        TorusGrid::new(2, 2).unwrap()
    }

    const EXACT: ExpectationMode = ExpectationMode::Exhaustive {
        budget: DEFAULT_ENUMERATION_BUDGET,
    };

    #[test]
    fn expectation_of_constants_and_bernoulli_entries() {
        let c = expectation(&|_: &CoefficientField| 3.25, &beta(), tiny(), EXACT).unwrap();
        assert!((c.mean - 3.25).abs() < 1e-14);
        let p = 0.3;
        let b = SingleSiteMeasure::two_point(p, 0.25).unwrap();
        let e = expectation(&|a: &CoefficientField| a.get(0, 0), &b, tiny(), EXACT).unwrap();
        assert!((e.mean - (p + (1.0 - p) * 0.25)).abs() < 1e-14);
        let mc = expectation(
            &|a: &CoefficientField| a.get(0, 0),
            &b,
            tiny(),
            ExpectationMode::MonteCarlo { samples: 4000, seed: 5 },
        )
        .unwrap();
        assert!((mc.mean - e.mean).abs() < 4.0 * mc.std_error);
        assert!(matches!(
            expectation(&|_: &CoefficientField| 0.0, &b, tiny(), ExpectationMode::MonteCarlo { samples: 1, seed: 0 }),
            Err(EnsembleError::TooFewSamples(1))
        ));
    }

    #[test]
    fn vertical_derivative_examples() {
        let g = tiny();
        let a = CoefficientField::uniform(g, &[1.0, 0.25]).unwrap();
        let independent = |a: &CoefficientField| a.get(3, 0) * 2.0;
        assert_eq!(vertical_derivative(&independent, 0, &a, &beta()).unwrap(), 0.0);
        // Two-term average oracle: a11(y) - (lambda + 1) / 2.
        let entry = |a: &CoefficientField| a.get(1, 0);
        let up = vertical_derivative(&entry, 1, &a, &beta()).unwrap();
        assert!((up - 0.375).abs() < 1e-15);
        let low = vertical_derivative(&entry, 1, &a.with_site(1, &[0.25, 0.25]), &beta()).unwrap();
        assert!((low + 0.375).abs() < 1e-15);
        let uniform = SingleSiteMeasure::Uniform { lambda: 0.25 };
        assert_eq!(
            vertical_derivative(&entry, 1, &a, &uniform),
            Err(EnsembleError::UnsupportedMeasure)
        );
        let mc = vertical_derivative_mc(&entry, 1, &a, &uniform, 20000, 3).unwrap();
        assert!((mc.mean - 0.375).abs() < 4.0 * mc.std_error);
    }

    #[test]
    fn vertical_derivative_has_zero_mean() {
        let g = tiny();
        let space = ConfigSpace::new(&beta(), g, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let zeta = space.tabulate(|a| (a.get(0, 0) * a.get(1, 1) + a.get(2, 0)).ln() / a.get(3, 1));
        for y in g.sites() {
            let dz = space.vertical_derivative(&zeta, y);
            assert!(space.expectation(&dz).abs() < 1e-14);
        }
    }

    #[test]
    fn commutator_examples() {
        let g = tiny();
        let a = CoefficientField::uniform(g, &[1.0, 0.25]).unwrap();
        let constant = |_: &CoefficientField| vec![0.7, -1.3];
        let c = commutator(&constant, 2, &a, &beta()).unwrap();
        // (a(y) - <a(y)>) F
        assert!((c[0] - 0.375 * 0.7).abs() < 1e-15);
        assert!((c[1] + 0.375 * -1.3).abs() < 1e-15);
        let unit = |_: &CoefficientField| vec![1.0, 0.0];
        let c = commutator(&unit, 0, &a, &beta()).unwrap();
        assert!((c[0] - 0.375).abs() < 1e-15 && c[1] == 0.0);
        let point = SingleSiteMeasure::point_mass(vec![1.0, 0.25]).unwrap();
        assert_eq!(commutator(&constant, 2, &a, &point).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn commutator_table_agrees_with_direct_evaluation() {
        let g = tiny();
        let space = ConfigSpace::new(&beta(), g, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let f = |a: &CoefficientField| vec![a.get(1, 0) * a.get(1, 1) + a.get(0, 0), a.get(1, 1) / a.get(2, 0)];
        let table = space.tabulate(f);
        for c in [0, 77, 255] {
            let direct = commutator(&f, 1, &space.field(c), &beta()).unwrap();
            let tabled = space.commutator_at(&table, c, 1);
            for (x, y) in direct.iter().zip(&tabled) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        let moments = commutator_moment_check(&f, 1, &beta(), g, DEFAULT_ENUMERATION_BUDGET, &[2, 4]).unwrap();
        assert!(moments.iter().all(|m| m.holds));
    }

    #[test]
    fn covariance_report_examples() {
        let g = tiny();
        let c = |_: &CoefficientField| 1.5;
        let r = covariance_check(&c, &c, &beta(), g, DEFAULT_ENUMERATION_BUDGET).unwrap();
        assert!(r.covariance.abs() < 1e-15 && r.covariance_bound.abs() < 1e-15 && r.passed());

        let z0 = |a: &CoefficientField| a.get(0, 0);
        let z1 = |a: &CoefficientField| a.get(1, 0);
        let r = covariance_check(&z0, &z1, &beta(), g, DEFAULT_ENUMERATION_BUDGET).unwrap();
        assert!(r.covariance.abs() < 1e-15 && r.covariance_bound >= 0.0 && r.passed());

        let nonlinear = |a: &CoefficientField| a.get(0, 0) * a.get(1, 1) + a.get(2, 0) * a.get(3, 0) * a.get(0, 1);
        let r = covariance_check(&nonlinear, &z0, &beta(), g, DEFAULT_ENUMERATION_BUDGET).unwrap();
        assert!(r.passed(), "{r:?}");
        // Oracle: Var of a Bernoulli entry with values {1/4, 1} is (3/8)^2.
        let r = covariance_check(&z0, &z0, &beta(), g, DEFAULT_ENUMERATION_BUDGET).unwrap();
        assert!((r.variance - 0.140625).abs() < 1e-15);
        assert!((r.spectral_gap_bound - 0.140625).abs() < 1e-15);
    }

    #[test]
    fn stationarity_of_shift_covariant_variables() {
        let g = tiny();
        let space = ConfigSpace::new(&beta(), g, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let zeta = |a: &CoefficientField| a.get(0, 0) * 3.0 + a.get(1, 1) * a.get(2, 0);
        let y = g.index(&[1, 1]);
        let mut plain = space.tabulate(zeta);
        let mut shifted = space.tabulate(|a| zeta(&a.shifted(y)));
        plain.sort_by(f64::total_cmp);
        shifted.sort_by(f64::total_cmp);
        assert_eq!(plain, shifted);
    }
}
