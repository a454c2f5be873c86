//! The search loop as a deterministic state machine.
//!
//! The coordinator owns the controller and all trial bookkeeping. It never
//! touches threads or files: it consumes completion events and returns the
//! log records to append, the checkpoints to write and the trials to start.
//! Given the same sequence of completions it emits the same records, which
//! is what makes replay-based resume exact.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::log::{Event, Origin, Outcome, Record, CHECKPOINT_DIR, SCHEMA_VERSION};
use super::RunError;
use crate::config::RunConfig;
use crate::controller::{checkpoint_checksum, Controller, PolicyStep};
use crate::objectives::{EvalError, EvaluationRequest};
use crate::rng::{derive_seed, SeedStream};
use crate::space::StrategyVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum TrialStatus {
    Pending,
    Running,
    Succeeded { reward: f64 },
    Failed { error: EvalError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: u64,
    pub strategy: StrategyVector,
    pub native: Vec<f64>,
    pub origin: Origin,
    pub parent: Option<u64>,
    pub seed: u64,
    pub status: TrialStatus,
    pub submitted_at: Option<String>,
    pub finished_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSoFar {
    pub trial_id: u64,
    pub strategy: StrategyVector,
    pub native: Vec<f64>,
    pub reward: f64,
}

/// What the driver must do after a coordinator step, in order.
#[derive(Debug, Default)]
pub struct Output {
    pub checkpoints: Vec<(String, Vec<u8>)>,
    pub records: Vec<Record>,
    pub dispatch: Vec<EvaluationRequest>,
    pub abort: Option<RunError>,
}

#[derive(Clone)]
pub struct Coordinator {
    config: Arc<RunConfig>,
    controller: Controller,
    seq: u64,
    next_trial: u64,
    epoch: usize,
    trials: BTreeMap<u64, Trial>,
    steps: HashMap<u64, PolicyStep>,
    queue: VecDeque<u64>,
    running: Vec<u64>,
    succeeded: usize,
    failed: usize,
    consecutive_failures: usize,
    best: Option<(u64, f64)>,
    dirty: bool,
    finished: bool,
    checkpoints: Vec<String>,
}

impl Coordinator {
    pub fn new(config: Arc<RunConfig>) -> Result<Self, RunError> {
        let seed = derive_seed(config.run.master_seed, SeedStream::Controller, 0);
        let controller = Controller::new(config.controller_config(), seed)?;
        Ok(Self {
            config,
            controller,
            seq: 0,
            next_trial: 0,
            epoch: 0,
            trials: BTreeMap::new(),
            steps: HashMap::new(),
            queue: VecDeque::new(),
            running: Vec::new(),
            succeeded: 0,
            failed: 0,
            consecutive_failures: 0,
            best: None,
            dirty: false,
            finished: false,
            checkpoints: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn trials(&self) -> impl Iterator<Item = &Trial> {
        self.trials.values()
    }

    pub fn checkpoints(&self) -> &[String] {
        &self.checkpoints
    }

    pub fn counts(&self) -> (u64, usize, usize) {
        (self.next_trial, self.succeeded, self.failed)
    }

    pub fn best(&self) -> Option<BestSoFar> {
        self.best.map(|(id, reward)| {
            let t = &self.trials[&id];
            BestSoFar {
                trial_id: id,
                strategy: t.strategy.clone(),
                native: t.native.clone(),
                reward,
            }
        })
    }

    /// Requests for trials the coordinator considers running.
    pub fn running_requests(&self) -> Vec<EvaluationRequest> {
        self.running.iter().map(|id| self.request(*id)).collect()
    }

    /// Copies wall-clock timestamps from written records onto the trials.
    pub fn note_written(&mut self, records: &[Record]) {
        for r in records {
            match &r.event {
                Event::TrialLaunched { trial_id, .. } => {
                    if let Some(t) = self.trials.get_mut(trial_id) {
                        t.submitted_at = r.ts.clone();
                    }
                }
                Event::TrialFinished { trial_id, .. } => {
                    if let Some(t) = self.trials.get_mut(trial_id) {
                        t.finished_at = r.ts.clone();
                    }
                }
                _ => {}
            }
        }
    }

    fn push(&mut self, out: &mut Output, event: Event) -> u64 {
        let seq = self.seq;
        self.seq += 1;
        out.records.push(Record {
            seq,
            ts: None,
            event,
        });
        seq
    }

    fn checkpoint(&mut self, out: &mut Output) {
        let blob = self.controller.checkpoint();
        let file = format!("{CHECKPOINT_DIR}/ckpt_{:08}.bin", self.seq);
        let checksum = format!("{:016x}", checkpoint_checksum(&blob));
        out.checkpoints.push((file.clone(), blob));
        self.checkpoints.push(file.clone());
        let epoch = self.epoch;
        self.push(
            out,
            Event::Checkpoint {
                epoch,
                file,
                checksum,
            },
        );
        self.dirty = false;
    }

    fn request(&self, id: u64) -> EvaluationRequest {
        let t = &self.trials[&id];
        EvaluationRequest {
            trial_id: id,
            strategy: t.strategy.clone(),
            native: t.native.clone(),
            seed: t.seed,
        }
    }

    fn launch(
        &mut self,
        out: &mut Output,
        strategy: StrategyVector,
        origin: Origin,
        parent: Option<u64>,
        step: Option<PolicyStep>,
    ) {
        let id = self.next_trial;
        self.next_trial += 1;
        let master = self.config.run.master_seed;
        let seed = derive_seed(master, SeedStream::Trial, id);
        let native = self
            .config
            .search_space
            .denormalize(&strategy)
            .expect("strategies match the search space dimension");
        self.trials.insert(
            id,
            Trial {
                trial_id: id,
                strategy: strategy.clone(),
                native: native.clone(),
                origin,
                parent,
                seed,
                status: TrialStatus::Pending,
                submitted_at: None,
                finished_at: None,
            },
        );
        if let Some(s) = &step {
            self.steps.insert(id, s.clone());
        }
        self.push(
            out,
            Event::TrialLaunched {
                trial_id: id,
                origin,
                parent,
                seed,
                strategy,
                native,
                policy_step: step,
            },
        );
        self.queue.push_back(id);
    }

    fn propose(&mut self, out: &mut Output, parent: u64) -> Result<(), RunError> {
        let id = self.next_trial;
        let seed = derive_seed(self.config.run.master_seed, SeedStream::Proposal, id);
        let prev = self.trials[&parent].strategy.clone();
        let step = self.controller.forward(&prev, seed)?;
        self.dirty = true;
        self.launch(
            out,
            step.sampled_action.clone(),
            Origin::ControllerProposal,
            Some(parent),
            Some(step),
        );
        Ok(())
    }

    fn dispatch(&mut self, out: &mut Output) {
        while self.running.len() < self.config.run.workers {
            let Some(id) = self.queue.pop_front() else {
                break;
            };
            self.running.push(id);
            self.trials.get_mut(&id).unwrap().status = TrialStatus::Running;
            out.dispatch.push(self.request(id));
        }
    }

    fn outstanding(&self) -> usize {
        self.queue.len() + self.running.len()
    }

    fn maybe_finish(&mut self, out: &mut Output) {
        if self.outstanding() > 0 {
            return;
        }
        if self.dirty {
            self.checkpoint(out);
        }
        let epoch = self.epoch;
        let (launched, succeeded, failed) = self.counts();
        self.push(
            out,
            Event::RunFinished {
                epoch,
                launched,
                succeeded,
                failed,
                best_trial: self.best.map(|b| b.0),
                best_reward: self.best.map(|b| b.1),
            },
        );
        self.finished = true;
    }

    /// Header, initial checkpoint and the random initial trials.
    pub fn start(&mut self) -> Output {
        let mut out = Output::default();
        let cfg = Arc::clone(&self.config);
        self.push(
            &mut out,
            Event::Header {
                schema_version: SCHEMA_VERSION,
                kind: "search".into(),
                names: cfg.search_space.names().map(String::from).collect(),
                master_seed: cfg.run.master_seed,
                max_epoch: cfg.run.max_epoch,
            },
        );
        self.checkpoint(&mut out);
        for _ in 0..cfg.run.initial_jobs {
            let seed = derive_seed(
                cfg.run.master_seed,
                SeedStream::InitialStrategy,
                self.next_trial,
            );
            let strategy = cfg.search_space.random_strategy(seed);
            self.launch(&mut out, strategy, Origin::RandomInit, None, None);
        }
        self.dispatch(&mut out);
        out
    }

    /// Consumes one finished trial.
    pub fn on_completion(
        &mut self,
        trial_id: u64,
        outcome: Outcome,
        wall_time: Option<f64>,
    ) -> Result<Output, RunError> {
        let Some(pos) = self.running.iter().position(|&id| id == trial_id) else {
            return Err(RunError::Protocol(format!(
                "completion for trial {trial_id}, which is not running"
            )));
        };
        self.running.remove(pos);
        let mut out = Output::default();
        self.push(
            &mut out,
            Event::TrialFinished {
                trial_id,
                outcome: outcome.clone(),
                wall_time,
            },
        );
        let step = self.steps.remove(&trial_id);
        match outcome {
            Outcome::Succeeded { reward } => {
                self.trials.get_mut(&trial_id).unwrap().status = TrialStatus::Succeeded { reward };
                self.succeeded += 1;
                self.epoch += 1;
                self.consecutive_failures = 0;
                if self.best.is_none_or(|(_, b)| reward > b) {
                    self.best = Some((trial_id, reward));
                }
                if let Some(step) = step {
                    self.controller.update(&step, reward)?;
                    self.dirty = true;
                    let epoch = self.epoch;
                    let reward_baseline = self.controller.state.reward_baseline;
                    self.push(
                        &mut out,
                        Event::ControllerUpdate {
                            trial_id,
                            reward,
                            epoch,
                            reward_baseline,
                        },
                    );
                }
                if self.epoch.is_multiple_of(self.config.run.checkpoint_every) {
                    self.checkpoint(&mut out);
                }
            }
            Outcome::Failed { error } => {
                self.trials.get_mut(&trial_id).unwrap().status = TrialStatus::Failed {
                    error: error.clone(),
                };
                self.failed += 1;
                self.consecutive_failures += 1;
                if self.consecutive_failures >= self.config.run.max_consecutive_failures {
                    out.abort = Some(RunError::TooManyFailures {
                        count: self.consecutive_failures,
                        last: error,
                    });
                    return Ok(out);
                }
            }
        }
        if self.epoch + self.outstanding() < self.config.run.max_epoch {
            self.propose(&mut out, trial_id)?;
        }
        self.dispatch(&mut out);
        self.maybe_finish(&mut out);
        Ok(out)
    }
}
