//! Run configuration, read from TOML.
//!
//! ```toml
//! experiment = "twoscale-rate"
//! dim = 3
//! sides = [8, 16, 32]
//! realizations = 100          # or one count per side
//! seed = 7
//! rhs = "cos(1)"              # optional, compact trigonometric form
//!
//! [measure]
//! kind = "two-point"
//! p = 0.5
//! lambda = 0.25
//!
//! [solver]
//! tolerance = 1e-10
//!
//! [reference]                 # computed here, or `a_hom = [...]`, or `manifest = "path"`
//! side = 32
//! realizations = 200
//! ```

use std::path::{Path, PathBuf};

use homlab_core::elliptic::{HomogenizedMatrix, SolverConfig, TrigPolynomial};
use homlab_core::ensemble::{SingleSiteMeasure, DEFAULT_ENUMERATION_BUDGET};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("reference manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    TwoscaleRate,
    L2Rate,
    SystematicError,
    CorrectorMoments,
    GreenDecay,
    VerifyIdentities,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::TwoscaleRate => "twoscale-rate",
            Self::L2Rate => "l2-rate",
            Self::SystematicError => "systematic-error",
            Self::CorrectorMoments => "corrector-moments",
            Self::GreenDecay => "green-decay",
            Self::VerifyIdentities => "verify-identities",
        }
    }

    pub fn is_monte_carlo(self) -> bool {
        !matches!(self, Self::VerifyIdentities)
    }

    fn default_realizations(self) -> usize {
        match self {
            Self::SystematicError => 500,
            _ => 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Realizations {
    Uniform(usize),
    PerSide(Vec<usize>),
}

/// Where the fixed homogenized matrix of the rate experiments comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Reference {
    /// Row-major `d x d` entries.
    Explicit { a_hom: Vec<f64> },
    /// Monte-Carlo `a_hom,L` at a large side.
    Computed { side: usize, realizations: usize },
    /// The `reference` field of an earlier manifest.
    Manifest { manifest: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub dim: usize,
    pub sides: Vec<usize>,
    pub measure: SingleSiteMeasure,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rhs: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realizations: Option<Realizations>,
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Reference>,
    /// Enumeration budget of the exhaustive suites.
    #[serde(default = "default_budget")]
    pub budget: usize,
}

fn default_budget() -> usize {
    DEFAULT_ENUMERATION_BUDGET
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if self.sides.is_empty() {
            return bad("sides must not be empty".into());
        }
        if self.sides.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("sides must be strictly increasing, got {:?}", self.sides));
        }
        if self.sides[0] < 2 {
            return bad("every side must be at least 2".into());
        }
        self.measure
            .validate(self.dim)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.solver.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.rhs_polynomial()?;
        if let Some(Realizations::PerSide(v)) = &self.realizations {
            if v.len() != self.sides.len() {
                return bad(format!("{} realization counts for {} sides", v.len(), self.sides.len()));
            }
        }
        if self.experiment.is_monte_carlo() {
            if let Some(n) = (0..self.sides.len()).map(|k| self.realizations_at(k)).find(|&n| n < 2) {
                return bad(format!("Monte-Carlo experiments need at least 2 realizations, got {n}"));
            }
        }
        match &self.reference {
            Some(Reference::Explicit { a_hom }) => {
                HomogenizedMatrix::new(self.dim, a_hom.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
            Some(Reference::Computed { side, realizations }) => {
                if *side < 2 || *realizations < 2 {
                    return bad("reference needs side >= 2 and at least 2 realizations".into());
                }
                if self.experiment == ExperimentKind::SystematicError && *side <= *self.sides.last().unwrap() {
                    return bad(format!("reference side {side} must exceed every listed side"));
                }
            }
            Some(Reference::Manifest { .. }) | None => {}
        }
        if matches!(self.experiment, ExperimentKind::TwoscaleRate | ExperimentKind::L2Rate | ExperimentKind::SystematicError)
            && self.reference.is_none()
        {
            return bad(format!("{} needs a [reference]", self.experiment.name()));
        }
        Ok(())
    }

    pub fn realizations_at(&self, index: usize) -> usize {
        match &self.realizations {
            None => self.experiment.default_realizations(),
            Some(Realizations::Uniform(n)) => *n,
            Some(Realizations::PerSide(v)) => v[index],
        }
    }

    pub fn rhs_polynomial(&self) -> Result<TrigPolynomial, ConfigError> {
        let p = match &self.rhs {
            None => TrigPolynomial::default_for(self.dim),
            Some(s) => s.parse().map_err(|e: homlab_core::elliptic::RhsError| ConfigError::Invalid(e.to_string()))?,
        };
        p.check_dim(self.dim).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(p)
    }

    /// Applies command-line overrides and re-validates.
    pub fn with_overrides(
        mut self,
        seed: Option<u64>,
        sides: Option<Vec<usize>>,
        realizations: Option<usize>,
    ) -> Result<Self, ConfigError> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(l) = sides {
            if matches!(self.realizations, Some(Realizations::PerSide(_))) && realizations.is_none() {
                return Err(ConfigError::Invalid(
                    "overriding sides needs a uniform realization count".into(),
                ));
            }
            self.sides = l;
        }
        if let Some(n) = realizations {
            self.realizations = Some(Realizations::Uniform(n));
        }
        self.validate()?;
        Ok(self)
    }
}

/// Reads the reference matrix stored by an earlier run.
pub fn reference_from_manifest(path: &Path, dim: usize) -> Result<HomogenizedMatrix, ConfigError> {
    let err = |reason: String| ConfigError::Manifest {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    let m: HomogenizedMatrix = serde_json::from_value(json.get("reference").cloned().unwrap_or_default())
        .map_err(|e| err(format!("no usable reference: {e}")))?;
    if m.dim() != dim {
        return Err(err(format!("reference has dimension {}, run has {dim}", m.dim())));
    }
    Ok(m)
}
