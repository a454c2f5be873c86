//! Asynchronous search loop, persistence and resume.
//!
//! A run directory holds `config.json` (the effective configuration),
//! `trials.jsonl` (the event log) and `checkpoints/`. A single coordinator
//! thread owns the controller and the log; a pool of worker threads runs
//! evaluations and reports completions over a channel. Completions are
//! consumed one at a time, in arrival order.
//!
//! Resume rebuilds the coordinator by replaying the log: every logged
//! completion is fed back in order and the records it produces must match
//! the log, and every checkpoint it produces must match the file on disk.
//! A group of records cut short by an interruption is dropped and redone.

mod coordinator;
pub mod log;
mod report;

use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use crossbeam_channel::{unbounded, Receiver, Sender};
use thiserror::Error;

use crate::baselines::{hill_climb, ClimbMode, Evaluation, HillClimbConfig, HillClimbError};
use crate::config::{ConfigError, RunConfig};
use crate::controller::{CheckpointError, Controller, ControllerError};
use crate::objectives::{EvalError, EvaluationRequest, Evaluator};
use crate::rng::{derive_seed, SeedStream};
use crate::space::StrategyVector;

pub use coordinator::{BestSoFar, Coordinator, Output, Trial, TrialStatus};
pub use log::{Event, Origin, Outcome, Record};
pub use report::{
    render_text, report, BestEntry, CurvePoint, FailureSummary, ProposalPoint, Report,
    ReportFormat, NO_COMPLETED_TRIALS,
};

use log::{read_log, LogReadError, LogWriter, CHECKPOINT_DIR, CONFIG_FILE, LOG_FILE};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("output directory {path} is not writable: {source}")]
    OutputDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} already contains a run log; use `resume` to continue it")]
    AlreadyExists(PathBuf),
    #[error("no output directory given (set run.output_dir or pass --out)")]
    NoOutputDir,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Log(#[from] LogReadError),
    #[error("checkpoint {path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("missing file {0}")]
    Missing(PathBuf),
    #[error("log replay diverged at record {seq}: {message}")]
    Diverged { seq: u64, message: String },
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("aborted after {count} consecutive failed trials; last error: {last}")]
    TooManyFailures { count: usize, last: EvalError },
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl RunError {
    /// Process exit code: 2 for configuration problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::NoOutputDir => 2,
            _ => 3,
        }
    }
}

/// Knobs that are not part of the run's identity.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop (as if killed) after handling this many completions in this process.
    pub stop_after_completions: Option<usize>,
}

/// Final or interrupted state of a run.
#[derive(Debug, Clone)]
pub struct SearchRun {
    pub config: RunConfig,
    pub output_dir: PathBuf,
    pub trials: Vec<Trial>,
    pub epoch: usize,
    pub best_so_far: Option<BestSoFar>,
    pub checkpoints: Vec<String>,
    pub finished: bool,
    pub controller: Controller,
}

impl SearchRun {
    fn from_coordinator(config: RunConfig, dir: &Path, coord: &Coordinator) -> Self {
        Self {
            config,
            output_dir: dir.to_path_buf(),
            trials: coord.trials().cloned().collect(),
            epoch: coord.epoch(),
            best_so_far: coord.best(),
            checkpoints: coord.checkpoints().to_vec(),
            finished: coord.is_finished(),
            controller: coord.controller().clone(),
        }
    }

    pub fn succeeded(&self) -> usize {
        self.trials
            .iter()
            .filter(|t| matches!(t.status, TrialStatus::Succeeded { .. }))
            .count()
    }

    pub fn failed(&self) -> usize {
        self.trials
            .iter()
            .filter(|t| matches!(t.status, TrialStatus::Failed { .. }))
            .count()
    }
}

/// Runs a full search with the evaluator named in the config.
pub fn run_search(config: &RunConfig) -> Result<SearchRun, RunError> {
    let evaluator = config.build_evaluator()?;
    run_search_with(config, evaluator.as_ref(), &RunOptions::default())
}

/// Runs a search with an explicit evaluator.
pub fn run_search_with(
    config: &RunConfig,
    evaluator: &dyn Evaluator,
    options: &RunOptions,
) -> Result<SearchRun, RunError> {
    config.validate()?;
    let dir = config.run.output_dir.clone().ok_or(RunError::NoOutputDir)?;
    prepare_output_dir(&dir)?;
    let log_path = dir.join(LOG_FILE);
    if log_path.exists() {
        return Err(RunError::AlreadyExists(dir));
    }
    let config_path = dir.join(CONFIG_FILE);
    std::fs::write(&config_path, config.to_json()).map_err(|source| RunError::Io {
        path: config_path,
        source,
    })?;
    let mut writer =
        LogWriter::create(&log_path, config.run.timestamps).map_err(|source| RunError::Io {
            path: log_path.clone(),
            source,
        })?;

    let mut coord = Coordinator::new(Arc::new(config.clone()))?;
    let first = coord.start();
    drive(
        &mut coord,
        &mut writer,
        &dir,
        evaluator,
        first,
        Vec::new(),
        options,
    )?;
    Ok(SearchRun::from_coordinator(config.clone(), &dir, &coord))
}

fn prepare_output_dir(dir: &Path) -> Result<(), RunError> {
    let err = |source| RunError::OutputDir {
        path: dir.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir.join(CHECKPOINT_DIR)).map_err(err)?;
    let probe = dir.join(".write_probe");
    std::fs::write(&probe, b"").map_err(err)?;
    std::fs::remove_file(&probe).map_err(err)?;
    Ok(())
}

type Completion = (u64, Outcome, f64);

fn worker(
    evaluator: &dyn Evaluator,
    jobs: Receiver<EvaluationRequest>,
    done: Sender<Completion>,
    stop: &AtomicBool,
) {
    for request in jobs {
        if stop.load(Ordering::Relaxed) {
            break;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(AssertUnwindSafe(|| evaluator.evaluate(&request)))
            .unwrap_or_else(|panic| {
                let message = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "unknown panic".into());
                Err(EvalError::Panicked { message })
            });
        let outcome = match result {
            Ok(r) if r.reward.is_finite() => Outcome::Succeeded { reward: r.reward },
            Ok(r) => Outcome::Failed {
                error: EvalError::NonFiniteReward { value: r.reward },
            },
            Err(error) => Outcome::Failed { error },
        };
        let wall = start.elapsed().as_secs_f64();
        if done.send((request.trial_id, outcome, wall)).is_err() {
            break;
        }
    }
}

fn persist(
    coord: &mut Coordinator,
    writer: &mut LogWriter,
    dir: &Path,
    out: &mut Output,
) -> Result<(), RunError> {
    for (file, blob) in &out.checkpoints {
        let path = dir.join(file);
        std::fs::write(&path, blob).map_err(|source| RunError::Io { path, source })?;
    }
    writer
        .write_group(&mut out.records)
        .map_err(|source| RunError::Io {
            path: dir.join(LOG_FILE),
            source,
        })?;
    coord.note_written(&out.records);
    Ok(())
}

fn drive(
    coord: &mut Coordinator,
    writer: &mut LogWriter,
    dir: &Path,
    evaluator: &dyn Evaluator,
    first: Output,
    resend: Vec<EvaluationRequest>,
    options: &RunOptions,
) -> Result<(), RunError> {
    let workers = coord.config().run.workers;
    let stop = AtomicBool::new(false);
    let (job_tx, job_rx) = unbounded::<EvaluationRequest>();
    let (done_tx, done_rx) = unbounded::<Completion>();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let jobs = job_rx.clone();
            let done = done_tx.clone();
            let stop = &stop;
            scope.spawn(move || worker(evaluator, jobs, done, stop));
        }
        drop(done_tx);
        for request in resend {
            job_tx.send(request).expect("workers alive");
        }
        let mut out = first;
        let mut handled = 0usize;
        let result = loop {
            if let Err(e) = persist(coord, writer, dir, &mut out) {
                break Err(e);
            }
            for request in out.dispatch.drain(..) {
                job_tx.send(request).expect("workers alive");
            }
            if let Some(err) = out.abort.take() {
                break Err(err);
            }
            if coord.is_finished() {
                break Ok(());
            }
            if options.stop_after_completions == Some(handled) {
                break Ok(());
            }
            let Ok((id, outcome, wall)) = done_rx.recv() else {
                break Err(RunError::Protocol("worker pool exited early".into()));
            };
            handled += 1;
            match coord.on_completion(id, outcome, Some(wall)) {
                Ok(next) => out = next,
                Err(e) => break Err(e),
            }
        };
        stop.store(true, Ordering::Relaxed);
        drop(job_tx);
        result
    })
}

/// Continues an interrupted run. A finished run is returned unchanged.
pub fn resume(dir: &Path) -> Result<SearchRun, RunError> {
    let config = load_run_config(dir)?;
    let evaluator = config.build_evaluator()?;
    resume_with(dir, evaluator.as_ref(), &RunOptions::default())
}

pub fn load_run_config(dir: &Path) -> Result<RunConfig, RunError> {
    let path = dir.join(CONFIG_FILE);
    if !path.exists() {
        return Err(RunError::Missing(path));
    }
    Ok(RunConfig::load(&path)?)
}

pub fn resume_with(
    dir: &Path,
    evaluator: &dyn Evaluator,
    options: &RunOptions,
) -> Result<SearchRun, RunError> {
    let mut config = load_run_config(dir)?;
    config.run.output_dir = Some(dir.to_path_buf());
    let log_path = dir.join(LOG_FILE);
    if !log_path.exists() {
        return Err(RunError::Missing(log_path));
    }
    let replayed = replay(dir, &config)?;
    let mut coord = replayed.coordinator;
    if coord.is_finished() && replayed.first.is_none() {
        return Ok(SearchRun::from_coordinator(config, dir, &coord));
    }

    let file = std::fs::OpenOptions::new()
        .write(true)
        .open(&log_path)
        .map_err(|source| RunError::Io {
            path: log_path.clone(),
            source,
        })?;
    file.set_len(replayed.keep_bytes)
        .map_err(|source| RunError::Io {
            path: log_path.clone(),
            source,
        })?;
    drop(file);
    std::fs::create_dir_all(dir.join(CHECKPOINT_DIR)).map_err(|source| RunError::Io {
        path: dir.join(CHECKPOINT_DIR),
        source,
    })?;

    let mut writer =
        LogWriter::append(&log_path, config.run.timestamps).map_err(|source| RunError::Io {
            path: log_path.clone(),
            source,
        })?;
    let (first, resend) = match replayed.first {
        Some(first) => (first, Vec::new()),
        None => (Output::default(), coord.running_requests()),
    };
    drive(
        &mut coord,
        &mut writer,
        dir,
        evaluator,
        first,
        resend,
        options,
    )?;
    Ok(SearchRun::from_coordinator(config, dir, &coord))
}

struct Replayed {
    coordinator: Coordinator,
    /// Opening output still to be written when the log stopped inside it.
    first: Option<Output>,
    keep_bytes: u64,
}

fn check_records(expected: &[Record], logged: &[Record]) -> Result<(), RunError> {
    for (want, got) in expected.iter().zip(logged) {
        if want.logical() != got.logical() {
            return Err(RunError::Diverged {
                seq: got.seq,
                message: format!(
                    "expected {}, found {}",
                    serde_json::to_string(&want.logical()).unwrap_or_default(),
                    serde_json::to_string(&got.logical()).unwrap_or_default()
                ),
            });
        }
    }
    Ok(())
}

fn check_group(dir: &Path, expected: &Output, logged: &[Record]) -> Result<(), RunError> {
    check_records(&expected.records, logged)?;
    for (file, blob) in &expected.checkpoints {
        let path = dir.join(file);
        let on_disk = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(RunError::Missing(path))
            }
            Err(source) => return Err(RunError::Io { path, source }),
        };
        if let Err(source) = Controller::restore(&on_disk) {
            return Err(RunError::Checkpoint { path, source });
        }
        if &on_disk != blob {
            return Err(RunError::Diverged {
                seq: logged.first().map_or(0, |r| r.seq),
                message: format!("replayed controller differs from {}", path.display()),
            });
        }
    }
    Ok(())
}

fn replay(dir: &Path, config: &RunConfig) -> Result<Replayed, RunError> {
    let log = read_log(&dir.join(LOG_FILE))?;
    let records = &log.records;
    let mut coord = Coordinator::new(Arc::new(config.clone()))?;

    let first = coord.start();
    if records.len() < first.records.len() {
        check_records(&first.records, records)?;
        return Ok(Replayed {
            coordinator: coord,
            first: Some(first),
            keep_bytes: 0,
        });
    }
    check_group(dir, &first, &records[..first.records.len()])?;
    let mut pos = first.records.len();
    let mut keep_bytes = log.offsets.get(pos).copied().unwrap_or(log.valid_len);

    while pos < records.len() {
        let rec = &records[pos];
        let Event::TrialFinished {
            trial_id, outcome, ..
        } = &rec.event
        else {
            return Err(RunError::Diverged {
                seq: rec.seq,
                message: "expected a trial_finished record".into(),
            });
        };
        let snapshot = coord.clone();
        let mut out = coord.on_completion(*trial_id, outcome.clone(), None)?;
        if records.len() - pos < out.records.len() {
            // Interrupted mid-group: drop it and redo that completion live.
            check_records(&out.records, &records[pos..])?;
            coord = snapshot;
            keep_bytes = log.offsets[pos];
            break;
        }
        check_group(dir, &out, &records[pos..pos + out.records.len()])?;
        if let Some(err) = out.abort.take() {
            return Err(err);
        }
        pos += out.records.len();
        keep_bytes = log.offsets.get(pos).copied().unwrap_or(log.valid_len);
    }
    Ok(Replayed {
        coordinator: coord,
        first: None,
        keep_bytes,
    })
}

/// Result of a hill-climbing baseline run.
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub mode: ClimbMode,
    pub best: StrategyVector,
    pub best_native: Vec<f64>,
    pub best_reward: f64,
    pub evals: usize,
}

/// Runs a hill-climbing baseline from the all-0.5 strategy, logging every
/// evaluation to `trials.jsonl` in the output directory.
pub fn run_baseline(
    config: &RunConfig,
    mode: ClimbMode,
    evaluator: &dyn Evaluator,
) -> Result<BaselineRun, RunError> {
    config.validate()?;
    let dir = config.run.output_dir.clone().ok_or(RunError::NoOutputDir)?;
    prepare_output_dir(&dir)?;
    let log_path = dir.join(LOG_FILE);
    if log_path.exists() {
        return Err(RunError::AlreadyExists(dir));
    }
    let climb = HillClimbConfig {
        mode,
        ..config.baseline.clone().unwrap_or_default()
    };
    climb
        .validate()
        .map_err(|m| RunError::Config(ConfigError::Invalid(m)))?;
    let config_path = dir.join(CONFIG_FILE);
    std::fs::write(&config_path, config.to_json()).map_err(|source| RunError::Io {
        path: config_path,
        source,
    })?;
    let io = |source| RunError::Io {
        path: log_path.clone(),
        source,
    };
    let mut writer = LogWriter::create(&log_path, config.run.timestamps).map_err(io)?;
    let space = &config.search_space;
    let master = config.run.master_seed;
    let mut seq = 0u64;
    let mut record = |event: Event| {
        let r = Record {
            seq,
            ts: None,
            event,
        };
        seq += 1;
        r
    };
    let header = record(Event::Header {
        schema_version: log::SCHEMA_VERSION,
        kind: "baseline".into(),
        names: space.names().map(String::from).collect(),
        master_seed: master,
        max_epoch: climb.max_evals,
    });
    writer.write_group(&mut [header]).map_err(io)?;

    let mut next_id = 0u64;
    let mut succeeded = 0usize;
    let mut best: Option<(u64, f64)> = None;
    let mut write_error = None;
    let objective = |strategy: &StrategyVector| -> Result<f64, EvalError> {
        let trial_id = next_id;
        next_id += 1;
        let native = space
            .denormalize(strategy)
            .map_err(|e| EvalError::invalid(e.to_string()))?;
        let request = EvaluationRequest {
            trial_id,
            strategy: strategy.clone(),
            native: native.clone(),
            seed: derive_seed(master, SeedStream::Trial, trial_id),
        };
        let launched = record(Event::TrialLaunched {
            trial_id,
            origin: Origin::Baseline,
            parent: None,
            seed: request.seed,
            strategy: strategy.clone(),
            native,
            policy_step: None,
        });
        let start = Instant::now();
        let result = evaluator.evaluate(&request).and_then(|r| {
            if r.reward.is_finite() {
                Ok(r.reward)
            } else {
                Err(EvalError::NonFiniteReward { value: r.reward })
            }
        });
        let outcome = match &result {
            Ok(reward) => Outcome::Succeeded { reward: *reward },
            Err(error) => Outcome::Failed {
                error: error.clone(),
            },
        };
        let finished = record(Event::TrialFinished {
            trial_id,
            outcome,
            wall_time: Some(start.elapsed().as_secs_f64()),
        });
        if let Err(e) = writer.write_group(&mut [launched, finished]) {
            write_error.get_or_insert(e);
        }
        if let Ok(reward) = result {
            succeeded += 1;
            if best.is_none_or(|(_, b)| reward > b) {
                best = Some((trial_id, reward));
            }
        }
        result
    };
    let start = space
        .uniform_strategy(0.5)
        .map_err(|e| RunError::Protocol(e.to_string()))?;
    let outcome = hill_climb(objective, &start, &climb, &mut |_: &Evaluation| {});
    if let Some(e) = write_error {
        return Err(io(e));
    }
    let outcome = outcome.map_err(|e| match e {
        HillClimbError::Objective { source, .. } => RunError::TooManyFailures {
            count: 1,
            last: source,
        },
        other => RunError::Protocol(other.to_string()),
    })?;
    let done = record(Event::RunFinished {
        epoch: succeeded,
        launched: next_id,
        succeeded,
        failed: 0,
        best_trial: best.map(|b| b.0),
        best_reward: best.map(|b| b.1),
    });
    writer.write_group(&mut [done]).map_err(io)?;
    let best_native = space
        .denormalize(&outcome.best)
        .map_err(|e| RunError::Protocol(e.to_string()))?;
    Ok(BaselineRun {
        mode,
        best: outcome.best,
        best_native,
        best_reward: outcome.best_value,
        evals: outcome.evals,
    })
}
