//! Reinforcement-learning search over training strategies.
//!
//! A training strategy is a point in a normalized box of hyperparameters and
//! augmentation probabilities. A small recurrent policy proposes strategies,
//! a worker pool evaluates them, and each reward updates the policy by policy
//! gradient. Hill-climbing baselines, synthetic and toy objectives, and an
//! external-process evaluator for real trainers are included.

pub mod augmentation;
pub mod baselines;
pub mod config;
pub mod controller;
pub mod objectives;
pub mod orchestrator;
pub mod rng;
pub mod space;

pub use baselines::{hill_climb, ClimbMode, HillClimbConfig, HillClimbOutcome};
pub use config::RunConfig;
pub use controller::{Controller, ControllerConfig, PolicyStep};
pub use objectives::{EvaluationRequest, EvaluationResult, Evaluator};
pub use orchestrator::{report, resume, run_search, SearchRun};
pub use space::{ParamKind, ParamSpec, SearchSpace, StrategyVector};
