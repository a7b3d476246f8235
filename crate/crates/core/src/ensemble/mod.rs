//! Single-site measures, the periodic i.i.d. ensemble and its vertical calculus.

mod exhaustive;
mod vertical;

pub(crate) use exhaustive::compensated_sum;
pub use exhaustive::{enumerate_ensemble, ConfigSpace, DEFAULT_ENUMERATION_BUDGET};
pub use vertical::{
    commutator, commutator_moment_check, covariance_check, covariance_report_from_tables,
    expectation, vertical_derivative, vertical_derivative_mc, CommutatorMoment, CovarianceReport,
    Estimate, ExpectationMode, RandomVariable, RandomVector,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::TorusGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("ellipticity constant must lie in (0, 1], got {0}")]
    BadEllipticity(f64),
    #[error("probability must lie in [0, 1], got {0}")]
    BadProbability(f64),
    #[error("conductivity {value} outside [{lambda}, 1]")]
    OutOfRange { value: f64, lambda: f64 },
    #[error("atom has {got} diagonal entries, expected {expected}")]
    AtomDimension { expected: usize, got: usize },
    #[error("atom weights must be nonnegative and sum to 1 (sum = {0})")]
    BadWeights(f64),
    #[error("finite-support measure needs at least one atom")]
    EmptySupport,
    #[error("coefficient field needs {expected} entries, got {got}")]
    FieldLength { expected: usize, got: usize },
    #[error("conductivity {0} is not in (0, 1]")]
    NotElliptic(f64),
    #[error("enumeration of {configurations} configurations exceeds the budget {budget}")]
    BudgetExceeded { configurations: f64, budget: usize },
    #[error("exact vertical calculus needs a finite-support measure")]
    UnsupportedMeasure,
    #[error("Monte-Carlo estimates need at least 2 samples, got {0}")]
    TooFewSamples(usize),
}

/// Diagonal conductivities on the torus: `diag[x * d + i] = a^{ii}(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    grid: TorusGrid,
    diag: Vec<f64>,
}

impl CoefficientField {
    pub fn new(grid: TorusGrid, diag: Vec<f64>) -> Result<Self, EnsembleError> {
        let expected = grid.len() * grid.dim();
        if diag.len() != expected {
            return Err(EnsembleError::FieldLength {
                expected,
                got: diag.len(),
            });
        }
        if let Some(&bad) = diag.iter().find(|&&v| !(v > 0.0 && v <= 1.0)) {
            return Err(EnsembleError::NotElliptic(bad));
        }
        Ok(Self { grid, diag })
    }

    /// `a = c Id` everywhere. Panics unless `0 < c <= 1`.
    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self::new(grid, vec![c; grid.len() * grid.dim()]).expect("constant conductivity in (0, 1]")
    }

    /// The same diagonal matrix at every site.
    pub fn uniform(grid: TorusGrid, diag: &[f64]) -> Result<Self, EnsembleError> {
        if diag.len() != grid.dim() {
            return Err(EnsembleError::AtomDimension {
                expected: grid.dim(),
                got: diag.len(),
            });
        }
        Self::new(grid, diag.iter().copied().cycle().take(grid.len() * grid.dim()).collect())
    }

    #[inline]
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    #[inline]
    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    #[inline]
    pub fn get(&self, site: usize, i: usize) -> f64 {
        self.diag[site * self.grid.dim() + i]
    }

    pub fn site(&self, site: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.diag[site * d..(site + 1) * d]
    }

    /// Replaces `a(site)`. Panics on a wrong length.
    pub fn set_site(&mut self, site: usize, value: &[f64]) {
        let d = self.grid.dim();
        self.diag[site * d..(site + 1) * d].copy_from_slice(value);
    }

    pub fn with_site(&self, site: usize, value: &[f64]) -> Self {
        let mut out = self.clone();
        out.set_site(site, value);
        out
    }

    /// Arithmetic spatial mean of each diagonal entry.
    pub fn mean_per_direction(&self) -> Vec<f64> {
        let d = self.grid.dim();
        let mut m = vec![0.0; d];
        for site in self.diag.chunks_exact(d) {
            m.iter_mut().zip(site).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|v| *v /= self.grid.len() as f64);
        m
    }

    /// Harmonic spatial mean of each diagonal entry.
    pub fn harmonic_mean_per_direction(&self) -> Vec<f64> {
        let d = self.grid.dim();
        let mut m = vec![0.0; d];
        for site in self.diag.chunks_exact(d) {
            m.iter_mut().zip(site).for_each(|(a, b)| *a += 1.0 / b);
        }
        m.iter_mut().for_each(|v| *v = self.grid.len() as f64 / *v);
        m
    }

    pub fn min_value(&self) -> f64 {
        self.diag.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// The field `x -> a(x + y)`.
    pub fn shifted(&self, y: usize) -> Self {
        let g = self.grid;
        let d = g.dim();
        let mut diag = Vec::with_capacity(self.diag.len());
        for x in g.sites() {
            diag.extend_from_slice(self.site(g.translate(x, y)));
        }
        debug_assert_eq!(diag.len(), g.len() * d);
        Self { grid: g, diag }
    }
}

/// One support point of a finite-support single-site measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub diag: Vec<f64>,
    pub weight: f64,
}

/// The law `beta` of `a(x)` on diagonal matrices with entries in `[lambda, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SingleSiteMeasure {
    /// Each diagonal entry independently equals 1 with probability `p`, else `lambda`.
    TwoPoint { p: f64, lambda: f64 },
    /// Each diagonal entry independently uniform on `[lambda, 1]`.
    Uniform { lambda: f64 },
    /// Whole diagonal matrices with explicit weights.
    FiniteSupport { lambda: f64, atoms: Vec<Atom> },
}

impl SingleSiteMeasure {
    pub fn two_point(p: f64, lambda: f64) -> Result<Self, EnsembleError> {
        let m = Self::TwoPoint { p, lambda };
        m.check_parameters()?;
        Ok(m)
    }

    /// Experiment default: `p = 1/2`, `lambda = 1/4`.
    pub fn default_two_point() -> Self {
        Self::TwoPoint { p: 0.5, lambda: 0.25 }
    }

    /// Dirac mass at one diagonal matrix.
    pub fn point_mass(diag: Vec<f64>) -> Result<Self, EnsembleError> {
        let lambda = diag.iter().copied().fold(1.0, f64::min);
        let m = Self::FiniteSupport {
            lambda,
            atoms: vec![Atom { diag, weight: 1.0 }],
        };
        m.check_parameters()?;
        Ok(m)
    }

    pub fn lambda(&self) -> f64 {
        match self {
            Self::TwoPoint { lambda, .. }
            | Self::Uniform { lambda }
            | Self::FiniteSupport { lambda, .. } => *lambda,
        }
    }

    pub fn is_finite_support(&self) -> bool {
        !matches!(self, Self::Uniform { .. })
    }

    fn check_parameters(&self) -> Result<(), EnsembleError> {
        let lambda = self.lambda();
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(EnsembleError::BadEllipticity(lambda));
        }
        match self {
            Self::TwoPoint { p, .. } if !(0.0..=1.0).contains(p) => Err(EnsembleError::BadProbability(*p)),
            Self::FiniteSupport { atoms, .. } => {
                if atoms.is_empty() {
                    return Err(EnsembleError::EmptySupport);
                }
                let sum: f64 = atoms.iter().map(|a| a.weight).sum();
                if atoms.iter().any(|a| !(a.weight >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                    return Err(EnsembleError::BadWeights(sum));
                }
                for atom in atoms {
                    if let Some(&v) = atom.diag.iter().find(|&&v| !(v >= lambda && v <= 1.0)) {
                        return Err(EnsembleError::OutOfRange { value: v, lambda });
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Full validation against a dimension.
    pub fn validate(&self, dim: usize) -> Result<(), EnsembleError> {
        self.check_parameters()?;
        if let Self::FiniteSupport { atoms, .. } = self {
            if let Some(a) = atoms.iter().find(|a| a.diag.len() != dim) {
                return Err(EnsembleError::AtomDimension {
                    expected: dim,
                    got: a.diag.len(),
                });
            }
        }
        Ok(())
    }

    /// Support of `beta` on `d x d` diagonal matrices, or `None` for continuous laws.
    ///
    /// Two-point atoms are listed lexicographically in the directions, with the
    /// lower value `lambda` first in each direction.
    pub fn atoms(&self, dim: usize) -> Option<Vec<Atom>> {
        match self {
            Self::Uniform { .. } => None,
            Self::FiniteSupport { atoms, .. } => Some(atoms.clone()),
            Self::TwoPoint { p, lambda } => {
                let count = 1usize << dim;
                Some(
                    (0..count)
                        .map(|k| {
                            let mut diag = Vec::with_capacity(dim);
                            let mut weight = 1.0;
                            for i in 0..dim {
                                let upper = (k >> (dim - 1 - i)) & 1 == 1;
                                diag.push(if upper { 1.0 } else { *lambda });
                                weight *= if upper { *p } else { 1.0 - *p };
                            }
                            Atom { diag, weight }
                        })
                        .collect(),
                )
            }
        }
    }

    /// Draws one `a(x)` into `out` (length `d`).
    pub fn sample_site(&self, rng: &mut impl Rng, out: &mut [f64]) {
        match self {
            Self::TwoPoint { p, lambda } => {
                for v in out.iter_mut() {
                    *v = if rng.random::<f64>() < *p { 1.0 } else { *lambda };
                }
            }
            Self::Uniform { lambda } => {
                for v in out.iter_mut() {
                    *v = lambda + (1.0 - lambda) * rng.random::<f64>();
                }
            }
            Self::FiniteSupport { atoms, .. } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = atoms.len() - 1;
                for (k, atom) in atoms.iter().enumerate() {
                    acc += atom.weight;
                    if u < acc {
                        chosen = k;
                        break;
                    }
                }
                out.copy_from_slice(&atoms[chosen].diag);
            }
        }
    }
}

/// A realization of the periodic i.i.d. ensemble: sites in index order, directions innermost.
pub fn sample_field(
    measure: &SingleSiteMeasure,
    grid: TorusGrid,
    rng: &mut impl Rng,
) -> Result<CoefficientField, EnsembleError> {
    measure.validate(grid.dim())?;
    let d = grid.dim();
    let mut diag = vec![0.0; grid.len() * d];
    for site in diag.chunks_exact_mut(d) {
        measure.sample_site(rng, site);
    }
    CoefficientField::new(grid, diag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn point_mass_gives_constant_field() {
        let g = TorusGrid::new(2, 5).unwrap();
        let beta = SingleSiteMeasure::point_mass(vec![1.0, 1.0]).unwrap();
        let a = sample_field(&beta, g, &mut stream(1, 0)).unwrap();
        assert!(a.diag().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn two_point_with_p_one_is_upper_value() {
        let g = TorusGrid::new(3, 3).unwrap();
        let beta = SingleSiteMeasure::two_point(1.0, 0.25).unwrap();
        let a = sample_field(&beta, g, &mut stream(2, 0)).unwrap();
        assert!(a.diag().iter().all(|&v| v == 1.0));
        let beta0 = SingleSiteMeasure::two_point(0.0, 0.25).unwrap();
        let a0 = sample_field(&beta0, g, &mut stream(2, 0)).unwrap();
        assert!(a0.diag().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn two_point_empirical_mean_within_binomial_band() {
        // Oracle: binomial statistics of N d independent entries.
        let (lam, p) = (0.25, 0.5);
        let g = TorusGrid::new(2, 64).unwrap();
        let beta = SingleSiteMeasure::two_point(p, lam).unwrap();
        let a = sample_field(&beta, g, &mut stream(3, 0)).unwrap();
        let n = a.diag().len() as f64;
        let mean = a.diag().iter().sum::<f64>() / n;
        let expected = p + (1.0 - p) * lam;
        let sigma = (1.0 - lam) * (p * (1.0 - p) / n).sqrt();
        assert!((mean - expected).abs() <= 3.0 * sigma, "{mean} vs {expected} +- {sigma}");
    }

    #[test]
    fn uniform_samples_stay_in_band() {
        let g = TorusGrid::new(2, 16).unwrap();
        let beta = SingleSiteMeasure::Uniform { lambda: 0.3 };
        let a = sample_field(&beta, g, &mut stream(4, 1)).unwrap();
        assert!(a.diag().iter().all(|&v| (0.3..=1.0).contains(&v)));
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = TorusGrid::new(3, 4).unwrap();
        let beta = SingleSiteMeasure::default_two_point();
        let a = sample_field(&beta, g, &mut stream(99, 5)).unwrap();
        let b = sample_field(&beta, g, &mut stream(99, 5)).unwrap();
        let c = sample_field(&beta, g, &mut stream(99, 6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn measure_validation() {
        assert!(SingleSiteMeasure::two_point(1.5, 0.5).is_err());
        assert!(SingleSiteMeasure::two_point(0.5, 0.0).is_err());
        assert!(SingleSiteMeasure::two_point(0.5, 1.2).is_err());
        let bad_weights = SingleSiteMeasure::FiniteSupport {
            lambda: 0.5,
            atoms: vec![
                Atom { diag: vec![0.5, 1.0], weight: 0.7 },
                Atom { diag: vec![1.0, 1.0], weight: 0.7 },
            ],
        };
        assert!(matches!(bad_weights.validate(2), Err(EnsembleError::BadWeights(_))));
        let out_of_range = SingleSiteMeasure::FiniteSupport {
            lambda: 0.5,
            atoms: vec![Atom { diag: vec![0.4, 1.0], weight: 1.0 }],
        };
        assert!(matches!(out_of_range.validate(2), Err(EnsembleError::OutOfRange { .. })));
        let beta = SingleSiteMeasure::point_mass(vec![1.0, 0.5]).unwrap();
        assert!(matches!(beta.validate(3), Err(EnsembleError::AtomDimension { .. })));
    }

    #[test]
    fn two_point_atoms_are_lexicographic_products() {
        let beta = SingleSiteMeasure::two_point(0.3, 0.25).unwrap();
        let atoms = beta.atoms(2).unwrap();
        let diags: Vec<Vec<f64>> = atoms.iter().map(|a| a.diag.clone()).collect();
        assert_eq!(
            diags,
            vec![vec![0.25, 0.25], vec![0.25, 1.0], vec![1.0, 0.25], vec![1.0, 1.0]]
        );
        let w: Vec<f64> = atoms.iter().map(|a| a.weight).collect();
        let expected = [0.49, 0.21, 0.21, 0.09];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn coefficient_field_checks_range_and_shifts() {
        let g = TorusGrid::new(2, 3).unwrap();
        assert!(CoefficientField::new(g, vec![0.5; 17]).is_err());
        assert!(CoefficientField::new(g, vec![1.5; 18]).is_err());
        let a = CoefficientField::new(g, (0..18).map(|k| 0.05 * (k + 1) as f64).collect()).unwrap();
        let y = g.index(&[2, 1]);
        let s = a.shifted(y);
        for x in g.sites() {
            assert_eq!(s.site(x), a.site(g.translate(x, y)));
        }
        let u = CoefficientField::uniform(g, &[0.25, 1.0]).unwrap();
        assert_eq!(u.mean_per_direction(), vec![0.25, 1.0]);
        assert!((u.harmonic_mean_per_direction()[0] - 0.25).abs() < 1e-15);
    }
}
