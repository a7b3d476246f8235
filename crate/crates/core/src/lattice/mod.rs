//! Geometry of the discrete torus `(Z/LZ)^d` and exact periodic difference calculus.
//!
//! Sites are addressed by a linear index in `[0, L^d)`. The layout is row-major
//! with the first coordinate running fastest, so the site `x` has index
//! `x_1 + L x_2 + L^2 x_3 + ...`.

mod calculus;
mod field;
pub mod io;

pub use calculus::{
    apply_operator, apply_operator_into, backward_diff_div, backward_diff_dir, forward_diff,
    forward_diff_dir, forward_second_diff, hessian,
};
pub use field::{MatrixField, ScalarField, VectorField};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("torus dimension must be at least 1")]
    ZeroDimension,
    #[error("torus side length must be at least 2, got {0}")]
    SideTooSmall(usize),
    #[error("torus with side {side} in dimension {dim} has too many sites")]
    TooLarge { dim: usize, side: usize },
    #[error("coordinate vector has {got} entries, expected {expected}")]
    CoordinateLength { expected: usize, got: usize },
}

/// The discrete torus `T_L = (Z/LZ)^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    side: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, side: usize) -> Result<Self, LatticeError> {
        if dim == 0 {
            return Err(LatticeError::ZeroDimension);
        }
        if side < 2 {
            return Err(LatticeError::SideTooSmall(side));
        }
        let fits = (0..dim).try_fold(1usize, |acc, _| acc.checked_mul(side));
        match fits {
            Some(n) if n <= u32::MAX as usize => Ok(Self { dim, side }),
            _ => Err(LatticeError::TooLarge { dim, side }),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    /// Number of sites `N = L^d`.
    #[inline]
    pub fn len(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing of the unit torus, `1/L`.
    pub fn epsilon(&self) -> f64 {
        1.0 / self.side as f64
    }

    /// Index distance between neighbours in direction `i`, i.e. `L^i`.
    #[inline]
    pub fn stride(&self, i: usize) -> usize {
        self.side.pow(i as u32)
    }

    pub fn sites(&self) -> std::ops::Range<usize> {
        0..self.len()
    }

    /// Coordinates in `[0, L)^d` of a linear index.
    pub fn coords(&self, site: usize) -> Vec<usize> {
        let mut rest = site;
        (0..self.dim)
            .map(|_| {
                let c = rest % self.side;
                rest /= self.side;
                c
            })
            .collect()
    }

    /// Linear index of in-range coordinates.
    pub fn index(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.dim);
        coords
            .iter()
            .rev()
            .fold(0, |acc, &c| acc * self.side + (c % self.side))
    }

    /// Componentwise representative of `x mod L` in `[0, L)^d`.
    pub fn mod_rep(&self, x: &[i64]) -> Result<Vec<usize>, LatticeError> {
        if x.len() != self.dim {
            return Err(LatticeError::CoordinateLength {
                expected: self.dim,
                got: x.len(),
            });
        }
        let l = self.side as i64;
        Ok(x.iter().map(|&c| c.rem_euclid(l) as usize).collect())
    }

    /// Linear index of an arbitrary integer point, reduced mod `L`.
    pub fn site(&self, x: &[i64]) -> Result<usize, LatticeError> {
        Ok(self.index(&self.mod_rep(x)?))
    }

    /// `x + e_i`.
    #[inline]
    pub fn plus(&self, site: usize, i: usize) -> usize {
        let s = self.stride(i);
        let c = (site / s) % self.side;
        if c + 1 == self.side {
            site + s - s * self.side
        } else {
            site + s
        }
    }

    /// `x - e_i`.
    #[inline]
    pub fn minus(&self, site: usize, i: usize) -> usize {
        let s = self.stride(i);
        let c = (site / s) % self.side;
        if c == 0 {
            site + s * self.side - s
        } else {
            site - s
        }
    }

    /// `x + y` on the torus.
    pub fn translate(&self, x: usize, y: usize) -> usize {
        let (cx, cy) = (self.coords(x), self.coords(y));
        let sum: Vec<usize> = cx.iter().zip(&cy).map(|(a, b)| (a + b) % self.side).collect();
        self.index(&sum)
    }

    /// `x - y` on the torus.
    pub fn difference(&self, x: usize, y: usize) -> usize {
        let (cx, cy) = (self.coords(x), self.coords(y));
        let diff: Vec<usize> = cx
            .iter()
            .zip(&cy)
            .map(|(a, b)| (a + self.side - b) % self.side)
            .collect();
        self.index(&diff)
    }

    /// Euclidean length of the minimum-image difference between two sites.
    pub fn torus_dist(&self, x: usize, y: usize) -> f64 {
        let (cx, cy) = (self.coords(x), self.coords(y));
        cx.iter()
            .zip(&cy)
            .map(|(&a, &b)| {
                let d = a.abs_diff(b);
                let m = d.min(self.side - d) as f64;
                m * m
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Largest value `torus_dist` can take, `L sqrt(d) / 2`.
    pub fn max_dist(&self) -> f64 {
        self.side as f64 * (self.dim as f64).sqrt() / 2.0
    }
}
