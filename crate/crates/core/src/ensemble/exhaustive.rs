//! Exact enumeration of the periodic i.i.d. ensemble on tiny tori.
//!
//! A configuration is a choice of one atom of `beta` per site. Configurations are
//! numbered in base `K = |atoms|` with site 0 as the most significant digit, so
//! iteration order is lexicographic in (site, direction, support value).

use rayon::prelude::*;

use super::{Atom, CoefficientField, EnsembleError, SingleSiteMeasure};
use crate::lattice::TorusGrid;

pub const DEFAULT_ENUMERATION_BUDGET: usize = 1 << 20;

#[derive(Clone, Debug)]
pub struct ConfigSpace {
    grid: TorusGrid,
    atoms: Vec<Atom>,
    count: usize,
    place: Vec<usize>,
}

impl ConfigSpace {
    pub fn new(measure: &SingleSiteMeasure, grid: TorusGrid, budget: usize) -> Result<Self, EnsembleError> {
        measure.validate(grid.dim())?;
        let atoms = measure.atoms(grid.dim()).ok_or(EnsembleError::UnsupportedMeasure)?;
        let k = atoms.len();
        let n = grid.len();
        let configurations = (k as f64).powi(n as i32);
        if configurations > budget as f64 {
            return Err(EnsembleError::BudgetExceeded { configurations, budget });
        }
        let count = k.pow(n as u32);
        let place = (0..n).map(|site| k.pow((n - 1 - site) as u32)).collect();
        Ok(Self {
            grid,
            atoms,
            count,
            place,
        })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    #[inline]
    pub fn atom_index(&self, config: usize, site: usize) -> usize {
        (config / self.place[site]) % self.atoms.len()
    }

    /// The configuration that agrees with `config` except for atom `k` at `site`.
    #[inline]
    pub fn with_atom(&self, config: usize, site: usize, k: usize) -> usize {
        let current = self.atom_index(config, site);
        config - current * self.place[site] + k * self.place[site]
    }

    pub fn weight(&self, config: usize) -> f64 {
        self.grid
            .sites()
            .map(|s| self.atoms[self.atom_index(config, s)].weight)
            .product()
    }

    pub fn field(&self, config: usize) -> CoefficientField {
        let d = self.grid.dim();
        let mut diag = Vec::with_capacity(self.grid.len() * d);
        for s in self.grid.sites() {
            diag.extend_from_slice(&self.atoms[self.atom_index(config, s)].diag);
        }
        CoefficientField::new(self.grid, diag).expect("atoms validated against the measure")
    }

    pub fn iter(&self) -> impl Iterator<Item = (CoefficientField, f64)> + '_ {
        (0..self.count).map(|c| (self.field(c), self.weight(c)))
    }

    /// Evaluates `f` on every configuration, in configuration order.
    pub fn tabulate<T: Send>(&self, f: impl Fn(&CoefficientField) -> T + Sync) -> Vec<T> {
        (0..self.count).into_par_iter().map(|c| f(&self.field(c))).collect()
    }

    /// Exact expectation of a tabulated random variable.
    pub fn expectation(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.count);
        compensated_sum(values.iter().enumerate().map(|(c, v)| self.weight(c) * v))
    }

    /// `int values beta(da(site))`, as a function of the configuration.
    pub fn conditional_mean(&self, values: &[f64], config: usize, site: usize) -> f64 {
        compensated_sum(
            self.atoms
                .iter()
                .enumerate()
                .map(|(k, atom)| atom.weight * values[self.with_atom(config, site, k)]),
        )
    }

    /// Table of `d values / d site`.
    pub fn vertical_derivative(&self, values: &[f64], site: usize) -> Vec<f64> {
        (0..self.count)
            .map(|c| values[c] - self.conditional_mean(values, c, site))
            .collect()
    }

    /// Table of `values` integrated over the atoms of every site in `sites`.
    pub fn integrate_sites(&self, values: &[f64], sites: impl IntoIterator<Item = usize>) -> Vec<f64> {
        let mut out = values.to_vec();
        for s in sites {
            out = (0..self.count).map(|c| self.conditional_mean(&out, c, s)).collect();
        }
        out
    }

    /// `[F]_y` at one configuration; `table[c]` holds the `d` components of `F` there.
    pub fn commutator_at(&self, table: &[Vec<f64>], config: usize, y: usize) -> Vec<f64> {
        let d = self.grid.dim();
        let own = &self.atoms[self.atom_index(config, y)].diag;
        (0..d)
            .map(|m| {
                let mut mean = Vec::with_capacity(self.atoms.len());
                let mut weighted = Vec::with_capacity(self.atoms.len());
                for (k, atom) in self.atoms.iter().enumerate() {
                    let f = table[self.with_atom(config, y, k)][m];
                    mean.push(atom.weight * f);
                    weighted.push(atom.weight * atom.diag[m] * f);
                }
                own[m] * compensated_sum(mean) - compensated_sum(weighted)
            })
            .collect()
    }
}

/// All configurations with their probabilities.
pub fn enumerate_ensemble(
    measure: &SingleSiteMeasure,
    grid: TorusGrid,
    budget: usize,
) -> Result<Vec<(CoefficientField, f64)>, EnsembleError> {
    let space = ConfigSpace::new(measure, grid, budget)?;
    Ok(space.iter().collect())
}

/// Neumaier summation.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
