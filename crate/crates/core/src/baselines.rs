//! Hill-climbing baselines.
//!
//! Two greedy local searches over the normalized space, both maximizing:
//!
//! * **Discrete**: a grid of `grid_dim + 1` points per coordinate (step
//!   `1 / grid_dim`). Each move evaluates all `2d` axis neighbours and takes
//!   the best strict improvement; ties go to the lowest coordinate, then the
//!   `-` direction. Grid points are held as integer indices so iterates never
//!   drift off the grid.
//! * **Continuous**: one signed step per coordinate. A successful move grows
//!   that step by `growth`, a failed one shrinks it by `growth` and flips its
//!   direction on every other consecutive failure. Iterates stay in `(0, 1]`.
//!
//! Every distinct point is evaluated at most once; repeated visits are served
//! from a cache, so noisy objectives keep their first sample.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::StrategyVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClimbMode {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HillClimbConfig {
    pub mode: ClimbMode,
    pub grid_dim: u32,
    pub step: f64,
    pub growth: f64,
    pub min_step: f64,
    pub max_evals: usize,
}

impl Default for HillClimbConfig {
    fn default() -> Self {
        Self {
            mode: ClimbMode::Discrete,
            grid_dim: 100,
            step: 0.01,
            growth: 1.1,
            min_step: 1e-4,
            max_evals: 10_000,
        }
    }
}

impl HillClimbConfig {
    pub fn discrete() -> Self {
        Self::default()
    }

    pub fn continuous() -> Self {
        Self {
            mode: ClimbMode::Continuous,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_evals == 0 {
            return Err("max_evals must be positive".into());
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err("step must be positive".into());
        }
        match self.mode {
            ClimbMode::Discrete => {
                if self.grid_dim == 0 {
                    return Err("grid_dim must be positive".into());
                }
                if (self.step * self.grid_dim as f64 - 1.0).abs() > 1e-9 {
                    return Err(format!(
                        "discrete step {} must equal 1/grid_dim (grid_dim = {})",
                        self.step, self.grid_dim
                    ));
                }
            }
            ClimbMode::Continuous => {
                if !(self.growth.is_finite() && self.growth > 1.0) {
                    return Err("growth must be greater than 1".into());
                }
                if !(self.min_step.is_finite() && self.min_step > 0.0) {
                    return Err("min_step must be positive".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum HillClimbError<E: std::error::Error + 'static> {
    #[error("invalid hill-climb config: {0}")]
    Config(String),
    #[error("start point {0:?} is not on the discrete grid")]
    StartOffGrid(Vec<f64>),
    #[error("start point {0:?} must be strictly positive for continuous search")]
    StartNotPositive(Vec<f64>),
    #[error("objective failed at {strategy:?}: {source}")]
    Objective {
        strategy: Vec<f64>,
        #[source]
        source: E,
    },
    #[error("objective returned non-finite value {value} at {strategy:?}")]
    NonFinite { strategy: Vec<f64>, value: f64 },
}

/// One objective evaluation, in call order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub index: usize,
    pub strategy: StrategyVector,
    pub value: f64,
}

/// Receives every evaluation as it happens.
pub trait TraceSink {
    fn record(&mut self, evaluation: &Evaluation);
}

impl TraceSink for Vec<Evaluation> {
    fn record(&mut self, evaluation: &Evaluation) {
        self.push(evaluation.clone());
    }
}

impl<F: FnMut(&Evaluation)> TraceSink for F {
    fn record(&mut self, evaluation: &Evaluation) {
        self(evaluation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HillClimbOutcome {
    pub best: StrategyVector,
    pub best_value: f64,
    pub evals: usize,
    /// Values of the accepted iterates, starting with the start point.
    pub accepted: Vec<f64>,
}

struct CachedObjective<'a, F, S: ?Sized> {
    objective: F,
    sink: &'a mut S,
    cache: HashMap<Vec<u64>, f64>,
    evals: usize,
}

impl<'a, F, S, E> CachedObjective<'a, F, S>
where
    F: FnMut(&StrategyVector) -> Result<f64, E>,
    S: TraceSink + ?Sized,
    E: std::error::Error + 'static,
{
    fn eval(&mut self, x: &[f64]) -> Result<f64, HillClimbError<E>> {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if let Some(&v) = self.cache.get(&key) {
            return Ok(v);
        }
        let strategy = StrategyVector::new(x.to_vec()).expect("hill-climb iterates stay in [0, 1]");
        let value = (self.objective)(&strategy).map_err(|source| HillClimbError::Objective {
            strategy: x.to_vec(),
            source,
        })?;
        if !value.is_finite() {
            return Err(HillClimbError::NonFinite {
                strategy: x.to_vec(),
                value,
            });
        }
        self.sink.record(&Evaluation {
            index: self.evals,
            strategy,
            value,
        });
        self.evals += 1;
        self.cache.insert(key, value);
        Ok(value)
    }
}

/// Greedy local search from `start`, maximizing `objective`.
pub fn hill_climb<F, E, S>(
    objective: F,
    start: &StrategyVector,
    config: &HillClimbConfig,
    trace: &mut S,
) -> Result<HillClimbOutcome, HillClimbError<E>>
where
    F: FnMut(&StrategyVector) -> Result<f64, E>,
    E: std::error::Error + 'static,
    S: TraceSink + ?Sized,
{
    config.validate().map_err(HillClimbError::Config)?;
    let mut obj = CachedObjective {
        objective,
        sink: trace,
        cache: HashMap::new(),
        evals: 0,
    };
    match config.mode {
        ClimbMode::Discrete => discrete(&mut obj, start, config),
        ClimbMode::Continuous => continuous(&mut obj, start, config),
    }
}

fn discrete<F, S, E>(
    obj: &mut CachedObjective<'_, F, S>,
    start: &StrategyVector,
    config: &HillClimbConfig,
) -> Result<HillClimbOutcome, HillClimbError<E>>
where
    F: FnMut(&StrategyVector) -> Result<f64, E>,
    E: std::error::Error + 'static,
    S: TraceSink + ?Sized,
{
    let n = config.grid_dim as i64;
    let to_real = |idx: &[i64]| -> Vec<f64> { idx.iter().map(|&i| i as f64 / n as f64).collect() };

    let mut current: Vec<i64> = Vec::with_capacity(start.len());
    for &x in start.values() {
        let i = (x * n as f64).round();
        if (i / n as f64 - x).abs() > 1e-9 {
            return Err(HillClimbError::StartOffGrid(start.values().to_vec()));
        }
        current.push(i as i64);
    }

    let mut current_value = obj.eval(&to_real(&current))?;
    let mut accepted = vec![current_value];
    loop {
        let mut best_move: Option<(Vec<i64>, f64)> = None;
        let mut budget_hit = false;
        'sweep: for k in 0..current.len() {
            for delta in [-1i64, 1] {
                let moved = (current[k] + delta).clamp(0, n);
                if moved == current[k] {
                    continue;
                }
                if obj.evals >= config.max_evals {
                    budget_hit = true;
                    break 'sweep;
                }
                let mut cand = current.clone();
                cand[k] = moved;
                let v = obj.eval(&to_real(&cand))?;
                let threshold = best_move.as_ref().map_or(current_value, |(_, b)| *b);
                if v > threshold {
                    best_move = Some((cand, v));
                }
            }
        }
        match best_move {
            Some((idx, v)) => {
                current = idx;
                current_value = v;
                accepted.push(v);
            }
            None => break,
        }
        if budget_hit || obj.evals >= config.max_evals {
            break;
        }
    }
    Ok(HillClimbOutcome {
        best: StrategyVector::new(to_real(&current)).expect("grid points lie in [0, 1]"),
        best_value: current_value,
        evals: obj.evals,
        accepted,
    })
}

fn continuous<F, S, E>(
    obj: &mut CachedObjective<'_, F, S>,
    start: &StrategyVector,
    config: &HillClimbConfig,
) -> Result<HillClimbOutcome, HillClimbError<E>>
where
    F: FnMut(&StrategyVector) -> Result<f64, E>,
    E: std::error::Error + 'static,
    S: TraceSink + ?Sized,
{
    if start.values().iter().any(|&x| x <= 0.0) {
        return Err(HillClimbError::StartNotPositive(start.values().to_vec()));
    }
    let d = start.len();
    let mut x = start.values().to_vec();
    let mut value = obj.eval(&x)?;
    let mut accepted = vec![value];
    let mut steps = vec![config.step; d];
    let mut failures = vec![0u32; d];

    'outer: while steps.iter().any(|s| s.abs() >= config.min_step) {
        for k in 0..d {
            if steps[k].abs() < config.min_step {
                continue;
            }
            if obj.evals >= config.max_evals {
                break 'outer;
            }
            let target = (x[k] + steps[k]).min(1.0);
            let improved = if target <= 0.0 || target == x[k] {
                false
            } else {
                let mut cand = x.clone();
                cand[k] = target;
                let v = obj.eval(&cand)?;
                if v > value {
                    x = cand;
                    value = v;
                    accepted.push(v);
                    true
                } else {
                    false
                }
            };
            if improved {
                failures[k] = 0;
                steps[k] *= config.growth;
            } else {
                failures[k] += 1;
                steps[k] /= config.growth;
                if failures[k] % 2 == 1 {
                    steps[k] = -steps[k];
                }
            }
        }
    }
    Ok(HillClimbOutcome {
        best: StrategyVector::new(x).expect("continuous iterates stay in (0, 1]"),
        best_value: value,
        evals: obj.evals,
        accepted,
    })
}
