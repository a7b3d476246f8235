//! Continuum right-hand sides on the unit torus, sampled at `x / L`.
//!
//! Compact text form: `cos(1,0) + 0.5*sin(0,2)` is `cos(2 pi x1) + 0.5 sin(4 pi x2)`.
//! Frequencies are integers in units of `2 pi`; missing trailing entries are zero.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{ScalarField, TorusGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RhsError {
    #[error("unknown right-hand side descriptor {0:?}")]
    Unknown(String),
    #[error("frequency vector {got:?} does not fit dimension {dim}")]
    Dimension { dim: usize, got: Vec<i64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrigKind {
    Cos,
    Sin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub kind: TrigKind,
    #[serde(default = "one")]
    pub amplitude: f64,
    pub frequency: Vec<i64>,
}

fn one() -> f64 {
    1.0
}

/// A trigonometric polynomial with integer frequencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigPolynomial {
    pub terms: Vec<TrigTerm>,
}

impl TrigPolynomial {
    /// `cos(2 pi x1)`, plus `sin(4 pi x2)` in two dimensions.
    pub fn default_for(dim: usize) -> Self {
        let mut terms = vec![TrigTerm {
            kind: TrigKind::Cos,
            amplitude: 1.0,
            frequency: vec![1],
        }];
        if dim == 2 {
            terms.push(TrigTerm {
                kind: TrigKind::Sin,
                amplitude: 1.0,
                frequency: vec![0, 2],
            });
        }
        Self { terms }
    }

    pub fn check_dim(&self, dim: usize) -> Result<(), RhsError> {
        for t in &self.terms {
            if t.frequency.iter().skip(dim).any(|&k| k != 0) {
                return Err(RhsError::Dimension {
                    dim,
                    got: t.frequency.clone(),
                });
            }
        }
        Ok(())
    }

    /// Value at a point of the unit torus.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let phase: f64 = t.frequency.iter().zip(x).map(|(&k, &xi)| k as f64 * xi).sum::<f64>() * 2.0 * PI;
                t.amplitude
                    * match t.kind {
                        TrigKind::Cos => phase.cos(),
                        TrigKind::Sin => phase.sin(),
                    }
            })
            .sum()
    }
}

impl FromStr for TrigPolynomial {
    type Err = RhsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || RhsError::Unknown(s.to_string());
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if compact.is_empty() {
            return Err(unknown());
        }
        let mut terms = Vec::new();
        let mut rest = compact.as_str();
        while !rest.is_empty() {
            let (sign, body) = match rest.as_bytes()[0] {
                b'+' => (1.0, &rest[1..]),
                b'-' => (-1.0, &rest[1..]),
                _ if terms.is_empty() => (1.0, rest),
                _ => return Err(unknown()),
            };
            let close = body.find(')').ok_or_else(unknown)?;
            let (term, tail) = body.split_at(close + 1);
            let (amplitude, call) = match term.split_once('*') {
                Some((c, call)) => (c.parse::<f64>().map_err(|_| unknown())?, call),
                None => (1.0, term),
            };
            let (name, args) = call.strip_suffix(')').and_then(|c| c.split_once('(')).ok_or_else(unknown)?;
            let kind = match name {
                "cos" => TrigKind::Cos,
                "sin" => TrigKind::Sin,
                _ => return Err(unknown()),
            };
            let frequency = args
                .split(',')
                .map(|k| k.parse::<i64>().map_err(|_| unknown()))
                .collect::<Result<Vec<_>, _>>()?;
            terms.push(TrigTerm {
                kind,
                amplitude: sign * amplitude,
                frequency,
            });
            rest = tail;
        }
        Ok(Self { terms })
    }
}

impl fmt::Display for TrigPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, t) in self.terms.iter().enumerate() {
            if n > 0 {
                write!(f, " + ")?;
            }
            let name = match t.kind {
                TrigKind::Cos => "cos",
                TrigKind::Sin => "sin",
            };
            let k: Vec<String> = t.frequency.iter().map(|k| k.to_string()).collect();
            write!(f, "{:?}*{name}({})", t.amplitude, k.join(","))?;
        }
        Ok(())
    }
}

/// Samples `f(x / L)` at every site and removes the spatial mean.
pub fn discretize_rhs(f: &TrigPolynomial, grid: TorusGrid) -> Result<ScalarField, RhsError> {
    f.check_dim(grid.dim())?;
    let l = grid.side() as f64;
    let mut point = vec![0.0; grid.dim()];
    let mut out = ScalarField::from_fn(grid, |x| {
        for (p, c) in point.iter_mut().zip(grid.coords(x)) {
            *p = c as f64 / l;
        }
        f.eval(&point)
    });
    out.project_mean_zero();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_compact_form() {
        let p: TrigPolynomial = "cos(1,0) + 0.5*sin(0,2) - cos(3)".parse().unwrap();
        assert_eq!(p.terms.len(), 3);
        assert_eq!(p.terms[1].amplitude, 0.5);
        assert_eq!(p.terms[2].amplitude, -1.0);
        assert_eq!(p.terms[2].frequency, vec![3]);
        let again: TrigPolynomial = p.to_string().parse().unwrap();
        assert_eq!(again, p);
        for bad in ["", "tan(1)", "cos(1", "cos(a)", "cos(1)sin(2)"] {
            assert!(bad.parse::<TrigPolynomial>().is_err(), "{bad}");
        }
    }

    #[test]
    fn harmonic_has_zero_mean() {
        let g = TorusGrid::new(2, 8).unwrap();
        let f = ScalarField::from_fn(g, |x| (2.0 * PI * g.coords(x)[0] as f64 / 8.0).cos());
        assert!(f.spatial_mean().abs() <= 1e-12);
        let constant = TrigPolynomial {
            terms: vec![TrigTerm {
                kind: TrigKind::Cos,
                amplitude: 1.0,
                frequency: vec![0, 0],
            }],
        };
        assert_eq!(discretize_rhs(&constant, g).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn default_matches_direct_evaluation() {
        let g = TorusGrid::new(2, 8).unwrap();
        let f = discretize_rhs(&TrigPolynomial::default_for(2), g).unwrap();
        for x1 in 0..8 {
            for x2 in 0..8 {
                let (s1, s2) = (x1 as f64 / 8.0, x2 as f64 / 8.0);
                let direct = (2.0 * PI * s1).cos() + (4.0 * PI * s2).sin();
                assert!((f.get(g.index(&[x1, x2])) - direct).abs() < 1e-12);
            }
        }
        assert!(discretize_rhs(&"cos(0,0,1)".parse().unwrap(), g).is_err());
    }
}
