//! Normalized search space.
//!
//! Each searched quantity is declared with a native `[min, max]` range and is
//! mapped linearly onto `[0, 1]`. Candidates ([`StrategyVector`]) always live
//! in normalized coordinates; native values are produced only when a trial is
//! handed to an evaluator.

use std::collections::HashSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_from_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("search space must declare at least one parameter")]
    Empty,
    #[error("parameter `{name}`: min ({min}) must be finite and below max ({max})")]
    InvalidRange { name: String, min: f64, max: f64 },
    #[error("augmentation probability `{name}` must have range [0, 1], got [{min}, {max}]")]
    ProbabilityRange { name: String, min: f64, max: f64 },
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("parameter name must not be empty")]
    EmptyName,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("value {value} for `{name}` lies outside [{min}, {max}]")]
    OutOfBounds {
        name: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("normalized component {index} = {value} is not a finite value in [0, 1]")]
    InvalidComponent { index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    #[default]
    Hyperparameter,
    AugmentationProbability,
}

/// One searched dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub name: String,
    pub min: f64,
    pub max: f64,
    #[serde(default)]
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn hyperparameter(name: impl Into<String>, min: f64, max: f64) -> Self {
        Self {
            name: name.into(),
            min,
            max,
            kind: ParamKind::Hyperparameter,
        }
    }

    pub fn probability(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            min: 0.0,
            max: 1.0,
            kind: ParamKind::AugmentationProbability,
        }
    }

    fn validate(&self) -> Result<(), SpaceError> {
        if self.name.is_empty() {
            return Err(SpaceError::EmptyName);
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(SpaceError::InvalidRange {
                name: self.name.clone(),
                min: self.min,
                max: self.max,
            });
        }
        if self.kind == ParamKind::AugmentationProbability && (self.min != 0.0 || self.max != 1.0) {
            return Err(SpaceError::ProbabilityRange {
                name: self.name.clone(),
                min: self.min,
                max: self.max,
            });
        }
        Ok(())
    }

    fn width(&self) -> f64 {
        self.max - self.min
    }
}

/// Ordered, validated list of parameters. The dimension is fixed once built.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SearchSpace {
    params: Vec<ParamSpec>,
}

impl SearchSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self, SpaceError> {
        if params.is_empty() {
            return Err(SpaceError::Empty);
        }
        let mut seen = HashSet::new();
        for p in &params {
            p.validate()?;
            if !seen.insert(p.name.as_str()) {
                return Err(SpaceError::DuplicateName(p.name.clone()));
            }
        }
        Ok(Self { params })
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    fn check_dim(&self, actual: usize) -> Result<(), SpaceError> {
        if actual != self.dim() {
            return Err(SpaceError::DimensionMismatch {
                expected: self.dim(),
                actual,
            });
        }
        Ok(())
    }

    /// Maps native values onto `[0, 1]`.
    pub fn normalize(&self, native: &[f64]) -> Result<StrategyVector, SpaceError> {
        self.check_dim(native.len())?;
        let values = self
            .params
            .iter()
            .zip(native)
            .map(|(p, &v)| {
                if !(v.is_finite() && v >= p.min && v <= p.max) {
                    return Err(SpaceError::OutOfBounds {
                        name: p.name.clone(),
                        value: v,
                        min: p.min,
                        max: p.max,
                    });
                }
                // Rounding can push the endpoint a hair past 1.
                Ok(((v - p.min) / p.width()).clamp(0.0, 1.0))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(StrategyVector { values })
    }

    /// Maps a normalized strategy back to native units.
    pub fn denormalize(&self, strategy: &StrategyVector) -> Result<Vec<f64>, SpaceError> {
        self.check_dim(strategy.len())?;
        Ok(self
            .params
            .iter()
            .zip(strategy.values())
            .map(|(p, &x)| {
                if x == 1.0 {
                    p.max
                } else {
                    p.min + x * p.width()
                }
            })
            .collect())
    }

    /// Draws each coordinate independently and uniformly from `[0, 1)`.
    pub fn random_strategy(&self, seed: u64) -> StrategyVector {
        let mut rng = rng_from_seed(seed);
        let values = (0..self.dim()).map(|_| rng.random::<f64>()).collect();
        StrategyVector { values }
    }

    /// Strategy with every coordinate set to `value`.
    pub fn uniform_strategy(&self, value: f64) -> Result<StrategyVector, SpaceError> {
        StrategyVector::new(vec![value; self.dim()])
    }
}

impl<'de> Deserialize<'de> for SearchSpace {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let params = Vec::<ParamSpec>::deserialize(deserializer)?;
        SearchSpace::new(params).map_err(serde::de::Error::custom)
    }
}

/// A candidate configuration in normalized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct StrategyVector {
    values: Vec<f64>,
}

impl StrategyVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SpaceError> {
        for (index, &value) in values.iter().enumerate() {
            if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
                return Err(SpaceError::InvalidComponent { index, value });
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }

    /// Checks the vector against a space's dimension.
    pub fn check_dim(&self, dim: usize) -> Result<(), SpaceError> {
        if self.len() != dim {
            return Err(SpaceError::DimensionMismatch {
                expected: dim,
                actual: self.len(),
            });
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for StrategyVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        StrategyVector::new(values).map_err(serde::de::Error::custom)
    }
}
