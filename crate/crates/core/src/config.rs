//! Run configuration file.
//!
//! A JSON document with four sections:
//!
//! ```json
//! {
//!   "search_space": [{"name": "learning_rate", "min": 0.0001, "max": 0.01, "kind": "hyperparameter"}],
//!   "controller": {"hidden_size": 32, "policy_stddev": 0.1, "learning_rate": 0.1},
//!   "evaluator": {"type": "synthetic", "surface": "sim_trainer", "fixture": "d6"},
//!   "run": {"max_epoch": 200, "initial_jobs": 8, "workers": 4, "master_seed": 1}
//! }
//! ```
//!
//! `controller` and `run` may be omitted entirely; an optional `baseline`
//! section configures the hill-climbing baselines. Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::HillClimbConfig;
use crate::controller::ControllerConfig;
use crate::objectives::{
    EvalError, Evaluator, ExternalEvaluator, SimTrainerFixture, Surface, SyntheticEvaluator,
    ToyFixture, ToySegmentationEvaluator,
};
use crate::rng::rng_from_seed;
use crate::space::SearchSpace;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub search_space: SearchSpace,
    #[serde(default)]
    pub controller: ControllerSection,
    pub evaluator: EvaluatorConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<HillClimbConfig>,
}

/// Controller hyperparameters; the dimension comes from the search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub hidden_size: usize,
    pub policy_stddev: f64,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub use_reward_baseline: bool,
    pub baseline_momentum: f64,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let c = ControllerConfig::new(1);
        Self {
            hidden_size: c.hidden_size,
            policy_stddev: c.policy_stddev,
            learning_rate: c.learning_rate,
            rmsprop_decay: c.rmsprop_decay,
            rmsprop_epsilon: c.rmsprop_epsilon,
            use_reward_baseline: c.use_reward_baseline,
            baseline_momentum: c.baseline_momentum,
        }
    }
}

impl ControllerSection {
    pub fn with_dim(&self, dim: usize) -> ControllerConfig {
        ControllerConfig {
            dim,
            hidden_size: self.hidden_size,
            policy_stddev: self.policy_stddev,
            learning_rate: self.learning_rate,
            rmsprop_decay: self.rmsprop_decay,
            rmsprop_epsilon: self.rmsprop_epsilon,
            use_reward_baseline: self.use_reward_baseline,
            baseline_momentum: self.baseline_momentum,
        }
    }
}

fn default_surface_fixture() -> String {
    "d6".into()
}

fn default_lr_param() -> String {
    "learning_rate".into()
}

fn default_timeout() -> f64 {
    24.0 * 3600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvaluatorConfig {
    Synthetic {
        surface: String,
        /// Sphere optimum; drawn uniformly from `[0.1, 0.9]^d` with `optimum_seed` if absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        optimum: Option<Vec<f64>>,
        #[serde(default)]
        optimum_seed: u64,
        /// Builtin sim_trainer fixture name (`d2`, `d6`) or a path to a fixture file.
        #[serde(default = "default_surface_fixture")]
        fixture: String,
        /// Overrides the fixture's noise level.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise_stddev: Option<f64>,
    },
    ToySegmentation {
        /// Directory with `manifest.json`; the builtin fixture is used if absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fixture_dir: Option<PathBuf>,
        #[serde(default = "default_lr_param")]
        lr_param: String,
    },
    External {
        command: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimestampMode {
    /// RFC 3339 wall-clock timestamps and trial durations in every record.
    #[default]
    Wall,
    /// No wall-clock fields; logs of deterministic runs are byte-reproducible.
    Logical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub max_epoch: usize,
    pub initial_jobs: usize,
    pub workers: usize,
    pub master_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub checkpoint_every: usize,
    pub timestamps: TimestampMode,
    /// Abort after this many failed trials in a row.
    pub max_consecutive_failures: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            max_epoch: 1000,
            initial_jobs: 8,
            workers: 8,
            master_seed: 0,
            output_dir: None,
            checkpoint_every: 10,
            timestamps: TimestampMode::Wall,
            max_consecutive_failures: 20,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg = Self::from_json(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn controller_config(&self) -> ControllerConfig {
        self.controller.with_dim(self.search_space.dim())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.controller_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let r = &self.run;
        if r.workers == 0 {
            return bad("run.workers must be at least 1".into());
        }
        if r.initial_jobs == 0 {
            return bad("run.initial_jobs must be at least 1".into());
        }
        if r.max_epoch < r.initial_jobs {
            return bad(format!(
                "run.max_epoch ({}) must be at least run.initial_jobs ({})",
                r.max_epoch, r.initial_jobs
            ));
        }
        if r.checkpoint_every == 0 {
            return bad("run.checkpoint_every must be at least 1".into());
        }
        if r.max_consecutive_failures == 0 {
            return bad("run.max_consecutive_failures must be at least 1".into());
        }
        if let Some(b) = &self.baseline {
            b.validate().map_err(ConfigError::Invalid)?;
        }
        if let EvaluatorConfig::External { timeout_secs, .. } = &self.evaluator {
            if !(timeout_secs.is_finite() && *timeout_secs > 0.0) {
                return bad("evaluator.timeout_secs must be positive".into());
            }
        }
        // Surfaces and fixtures are resolved here so bad names fail before any run starts.
        self.build_evaluator().map(|_| ())
    }

    pub fn build_evaluator(&self) -> Result<Arc<dyn Evaluator>, ConfigError> {
        let d = self.search_space.dim();
        let eval_err = |e: EvalError| ConfigError::Invalid(format!("evaluator: {e}"));
        Ok(match &self.evaluator {
            EvaluatorConfig::Synthetic {
                surface,
                optimum,
                optimum_seed,
                fixture,
                noise_stddev,
            } => {
                let optimum = match (surface.as_str(), optimum) {
                    ("sphere", Some(o)) => Some(o.clone()),
                    ("sphere", None) => {
                        let mut rng = rng_from_seed(*optimum_seed);
                        Some((0..d).map(|_| rng.random_range(0.1..0.9)).collect())
                    }
                    _ => None,
                };
                let fixture = if surface == "sim_trainer" {
                    let mut f = SimTrainerFixture::resolve(fixture).map_err(eval_err)?;
                    if let Some(n) = noise_stddev {
                        f.noise_stddev = *n;
                    }
                    f.validate().map_err(eval_err)?;
                    Some(f)
                } else {
                    None
                };
                let surface = Surface::from_name(surface, optimum, fixture).map_err(eval_err)?;
                if let Some(req) = surface.required_dim() {
                    if req != d {
                        return Err(ConfigError::Invalid(format!(
                            "{} surface has dimension {req}, search space has {d}",
                            surface.name()
                        )));
                    }
                }
                if let Surface::Sphere { optimum } = &surface {
                    if optimum.iter().any(|v| !(0.0..=1.0).contains(v)) {
                        return Err(ConfigError::Invalid(
                            "sphere optimum must lie in [0, 1]".into(),
                        ));
                    }
                }
                Arc::new(SyntheticEvaluator::new(surface))
            }
            EvaluatorConfig::ToySegmentation {
                fixture_dir,
                lr_param,
            } => {
                let fixture = match fixture_dir {
                    Some(dir) => ToyFixture::load(dir).map_err(eval_err)?,
                    None => ToyFixture::builtin(),
                };
                Arc::new(ToySegmentationEvaluator::new(
                    fixture,
                    &self.search_space,
                    lr_param,
                ))
            }
            EvaluatorConfig::External {
                command,
                timeout_secs,
            } => Arc::new(ExternalEvaluator::new(
                self.search_space.names().map(String::from).collect(),
                command.clone(),
                Duration::from_secs_f64(*timeout_secs),
            )),
        })
    }
}
