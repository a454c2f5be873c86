//! Synthetic response surfaces.
//!
//! * `sphere`: `1 − mean((x − x*)²)`, maximum 1 at the hidden optimum.
//! * `rosenbrock`: the standard valley on `[-2, 2]^d` (from `y = 4x − 2`),
//!   reported as `1 − f(y)/100`; maximum 1 at `x = 0.75`. A 1-D space uses
//!   the `(1 − y)²` term alone.
//! * `sim_trainer`: a fixed sum of Gaussian bumps, one per coordinate, plus
//!   pairwise bump products and optional Gaussian noise, clamped to `[0, 1]`.
//!   Its constants live in committed JSON fixtures with a known optimum.

use std::path::Path;
use std::time::Instant;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EvalError, EvaluationRequest, EvaluationResult, Evaluator};
use crate::rng::rng_from_seed;

const FIXTURE_D6: &str = include_str!("../../fixtures/sim_trainer_d6.json");
const FIXTURE_D2: &str = include_str!("../../fixtures/sim_trainer_d2.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub weight: f64,
    pub center: f64,
    pub width: f64,
}

impl Bump {
    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.width;
        (-0.5 * z * z).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interaction {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimTrainerFixture {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub base: f64,
    pub noise_stddev: f64,
    pub bumps: Vec<Bump>,
    #[serde(default)]
    pub interactions: Vec<Interaction>,
    /// Location and value of the noise-free maximum.
    pub optimum: Vec<f64>,
    pub optimum_value: f64,
}

impl SimTrainerFixture {
    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "d6" => FIXTURE_D6,
            "d2" => FIXTURE_D2,
            _ => return None,
        };
        Some(serde_json::from_str(text).expect("builtin fixtures parse"))
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EvalError::fixture(format!("{}: {e}", path.display())))?;
        let fixture: Self = serde_json::from_str(&text)
            .map_err(|e| EvalError::fixture(format!("{}: {e}", path.display())))?;
        fixture.validate()?;
        Ok(fixture)
    }

    /// Builtin name or path to a JSON fixture.
    pub fn resolve(name_or_path: &str) -> Result<Self, EvalError> {
        match Self::builtin(name_or_path) {
            Some(f) => Ok(f),
            None => Self::load(Path::new(name_or_path)),
        }
    }

    pub fn dim(&self) -> usize {
        self.bumps.len()
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let d = self.dim();
        if d == 0 {
            return Err(EvalError::fixture("fixture has no bumps"));
        }
        if self.optimum.len() != d {
            return Err(EvalError::fixture("optimum length differs from bump count"));
        }
        if self
            .bumps
            .iter()
            .any(|b| !(b.width > 0.0 && b.weight.is_finite()))
        {
            return Err(EvalError::fixture("bump widths must be positive"));
        }
        if self
            .interactions
            .iter()
            .any(|p| p.i >= d || p.j >= d || p.i == p.j)
        {
            return Err(EvalError::fixture("interaction indices out of range"));
        }
        if !(self.noise_stddev >= 0.0 && self.noise_stddev.is_finite()) {
            return Err(EvalError::fixture("noise_stddev must be non-negative"));
        }
        Ok(())
    }

    /// Surface value before noise and clamping.
    pub fn noiseless(&self, x: &[f64]) -> f64 {
        let b: Vec<f64> = self
            .bumps
            .iter()
            .zip(x)
            .map(|(bump, &v)| bump.eval(v))
            .collect();
        let main: f64 = self
            .bumps
            .iter()
            .zip(&b)
            .map(|(bump, v)| bump.weight * v)
            .sum();
        let pairs: f64 = self
            .interactions
            .iter()
            .map(|p| p.weight * b[p.i] * b[p.j])
            .sum();
        self.base + main + pairs
    }

    pub fn value(&self, x: &[f64], seed: u64) -> f64 {
        let mut v = self.noiseless(x);
        if self.noise_stddev > 0.0 {
            let normal = Normal::new(0.0, self.noise_stddev).expect("validated noise");
            v += normal.sample(&mut rng_from_seed(seed));
        }
        v.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Surface {
    Sphere { optimum: Vec<f64> },
    Rosenbrock,
    SimTrainer(SimTrainerFixture),
}

impl Surface {
    /// Builds a surface by name. `sphere` needs `optimum`; `sim_trainer` needs `fixture`.
    pub fn from_name(
        name: &str,
        optimum: Option<Vec<f64>>,
        fixture: Option<SimTrainerFixture>,
    ) -> Result<Self, EvalError> {
        match name {
            "sphere" => optimum
                .map(|optimum| Surface::Sphere { optimum })
                .ok_or_else(|| EvalError::invalid("sphere surface needs an optimum")),
            "rosenbrock" => Ok(Surface::Rosenbrock),
            "sim_trainer" => fixture
                .map(Surface::SimTrainer)
                .ok_or_else(|| EvalError::invalid("sim_trainer surface needs a fixture")),
            other => Err(EvalError::UnknownSurface {
                name: other.to_string(),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Surface::Sphere { .. } => "sphere",
            Surface::Rosenbrock => "rosenbrock",
            Surface::SimTrainer(_) => "sim_trainer",
        }
    }

    /// Dimension this surface requires, if fixed.
    pub fn required_dim(&self) -> Option<usize> {
        match self {
            Surface::Sphere { optimum } => Some(optimum.len()),
            Surface::Rosenbrock => None,
            Surface::SimTrainer(f) => Some(f.dim()),
        }
    }

    pub fn value(&self, x: &[f64], seed: u64) -> f64 {
        match self {
            Surface::Sphere { optimum } => {
                let sq: f64 = x.iter().zip(optimum).map(|(a, b)| (a - b) * (a - b)).sum();
                1.0 - sq / x.len() as f64
            }
            Surface::Rosenbrock => {
                let y: Vec<f64> = x.iter().map(|v| 4.0 * v - 2.0).collect();
                let f: f64 = if y.len() == 1 {
                    (1.0 - y[0]).powi(2)
                } else {
                    y.windows(2)
                        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
                        .sum()
                };
                1.0 - f / 100.0
            }
            Surface::SimTrainer(fixture) => fixture.value(x, seed),
        }
    }
}

pub struct SyntheticEvaluator {
    surface: Surface,
}

impl SyntheticEvaluator {
    pub fn new(surface: Surface) -> Self {
        Self { surface }
    }

    pub fn surface(&self) -> &Surface {
        &self.surface
    }
}

impl Evaluator for SyntheticEvaluator {
    fn evaluate(&self, request: &EvaluationRequest) -> Result<EvaluationResult, EvalError> {
        let start = Instant::now();
        let x = request.strategy.values();
        if let Some(d) = self.surface.required_dim() {
            if x.len() != d {
                return Err(EvalError::invalid(format!(
                    "{} surface has dimension {d}, strategy has {}",
                    self.surface.name(),
                    x.len()
                )));
            }
        }
        let reward = self.surface.value(x, request.seed);
        if !reward.is_finite() {
            return Err(EvalError::NonFiniteReward { value: reward });
        }
        Ok(EvaluationResult::new(
            request.trial_id,
            reward,
            start.elapsed(),
        ))
    }
}
