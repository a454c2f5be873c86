//! Reward evaluators.
//!
//! An [`Evaluator`] turns one strategy into a validation-accuracy-like reward.
//! The search loop calls evaluators from several worker threads at once, so
//! implementations must be `Send + Sync` and keep per-call state local.

mod dice;
mod external;
mod synthetic;
mod toy_segmentation;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::StrategyVector;

pub use dice::{dice_score, DiceError, LabelVolume};
pub use external::{ExternalEvaluator, REWARD_SENTINEL};
pub use synthetic::{Bump, Interaction, SimTrainerFixture, Surface, SyntheticEvaluator};
pub use toy_segmentation::{ToyCase, ToyFixture, ToySegmentationEvaluator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRequest {
    pub trial_id: u64,
    pub strategy: StrategyVector,
    pub native: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub trial_id: u64,
    pub reward: f64,
    #[serde(with = "duration_secs")]
    pub wall_time: Duration,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub detail: BTreeMap<String, serde_json::Value>,
}

impl EvaluationResult {
    pub fn new(trial_id: u64, reward: f64, wall_time: Duration) -> Self {
        Self {
            trial_id,
            reward,
            wall_time,
            detail: BTreeMap::new(),
        }
    }
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalError {
    #[error("unknown surface `{name}`")]
    UnknownSurface { name: String },
    #[error("invalid request: {message}")]
    InvalidRequest { message: String },
    #[error("fixture error: {message}")]
    Fixture { message: String },
    #[error("evaluator produced non-finite reward {value}")]
    NonFiniteReward { value: f64 },
    #[error("failed to launch trainer: {message}")]
    Spawn { message: String },
    #[error("trainer exited with status {code:?}")]
    NonZeroExit {
        code: Option<i32>,
        stderr_tail: String,
    },
    #[error("trainer timed out after {seconds} s")]
    Timeout { seconds: f64 },
    #[error("trainer output has no `REWARD:` line")]
    MissingReward,
    #[error("unparseable reward line `{line}`")]
    UnparseableReward { line: String },
    #[error("evaluator panicked: {message}")]
    Panicked { message: String },
}

impl EvalError {
    pub fn fixture(message: impl Into<String>) -> Self {
        EvalError::Fixture {
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        EvalError::InvalidRequest {
            message: message.into(),
        }
    }
}

pub trait Evaluator: Send + Sync {
    fn evaluate(&self, request: &EvaluationRequest) -> Result<EvaluationResult, EvalError>;
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn evaluate(&self, request: &EvaluationRequest) -> Result<EvaluationResult, EvalError> {
        (**self).evaluate(request)
    }
}

impl<E: Evaluator + ?Sized> Evaluator for std::sync::Arc<E> {
    fn evaluate(&self, request: &EvaluationRequest) -> Result<EvaluationResult, EvalError> {
        (**self).evaluate(request)
    }
}

/// Adapts a plain function of the normalized strategy.
pub struct FnEvaluator<F>(pub F);

impl<F> Evaluator for FnEvaluator<F>
where
    F: Fn(&EvaluationRequest) -> Result<f64, EvalError> + Send + Sync,
{
    fn evaluate(&self, request: &EvaluationRequest) -> Result<EvaluationResult, EvalError> {
        let start = std::time::Instant::now();
        let reward = (self.0)(request)?;
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
