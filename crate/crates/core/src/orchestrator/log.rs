//! JSONL run log.
//!
//! One JSON object per line, each carrying a monotonically increasing `seq`
//! and (in wall-clock mode) an RFC 3339 `ts`. The first record is a header
//! naming the schema version.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::TimestampMode;
use crate::controller::PolicyStep;
use crate::objectives::EvalError;
use crate::space::StrategyVector;

pub const SCHEMA_VERSION: u32 = 1;
pub const LOG_FILE: &str = "trials.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    RandomInit,
    ControllerProposal,
    /// Point visited by a hill-climbing baseline.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Succeeded { reward: f64 },
    Failed { error: EvalError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Header {
        schema_version: u32,
        kind: String,
        names: Vec<String>,
        master_seed: u64,
        max_epoch: usize,
    },
    TrialLaunched {
        trial_id: u64,
        origin: Origin,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        parent: Option<u64>,
        seed: u64,
        strategy: StrategyVector,
        native: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        policy_step: Option<PolicyStep>,
    },
    TrialFinished {
        trial_id: u64,
        #[serde(flatten)]
        outcome: Outcome,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        wall_time: Option<f64>,
    },
    ControllerUpdate {
        trial_id: u64,
        reward: f64,
        epoch: usize,
        reward_baseline: f64,
    },
    Checkpoint {
        epoch: usize,
        file: String,
        checksum: String,
    },
    RunFinished {
        epoch: usize,
        launched: u64,
        succeeded: usize,
        failed: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        best_trial: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        best_reward: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ts: Option<String>,
    #[serde(flatten)]
    pub event: Event,
}

impl Record {
    /// Copy with wall-clock fields removed, for comparisons across runs.
    pub fn logical(&self) -> Record {
        let mut r = self.clone();
        r.ts = None;
        if let Event::TrialFinished { wall_time, .. } = &mut r.event {
            *wall_time = None;
        }
        r
    }
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true)
}

/// Appends records, one group per write.
pub struct LogWriter {
    file: File,
    mode: TimestampMode,
}

impl LogWriter {
    pub fn create(path: &Path, mode: TimestampMode) -> io::Result<Self> {
        let file = OpenOptions::new().create_new(true).write(true).open(path)?;
        Ok(Self { file, mode })
    }

    pub fn append(path: &Path, mode: TimestampMode) -> io::Result<Self> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self { file, mode })
    }

    pub fn write_group(&mut self, records: &mut [Record]) -> io::Result<()> {
        if records.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for r in records.iter_mut() {
            match self.mode {
                TimestampMode::Wall => {
                    if r.ts.is_none() {
                        r.ts = Some(now_rfc3339());
                    }
                }
                TimestampMode::Logical => *r = r.logical(),
            }
            serde_json::to_writer(&mut buf, r).map_err(io::Error::other)?;
            buf.push(b'\n');
        }
        self.file.write_all(&buf)?;
        self.file.flush()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogReadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: corrupt record: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Parsed log with byte offsets of each record.
#[derive(Debug)]
pub struct LoadedLog {
    pub records: Vec<Record>,
    /// Byte offset where each record's line starts.
    pub offsets: Vec<u64>,
    /// Length of the valid prefix; anything after it is a torn final line.
    pub valid_len: u64,
    pub torn_tail: bool,
}

pub fn read_log(path: &Path) -> Result<LoadedLog, LogReadError> {
    let io_err = |source| LogReadError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut offsets = Vec::new();
    let mut pos = 0u64;
    let mut line = Vec::new();
    let mut lineno = 0;
    let mut torn_tail = false;
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line).map_err(io_err)?;
        if n == 0 {
            break;
        }
        lineno += 1;
        let complete = line.last() == Some(&b'\n');
        let parsed = std::str::from_utf8(&line)
            .map_err(|e| e.to_string())
            .and_then(|s| serde_json::from_str::<Record>(s.trim_end()).map_err(|e| e.to_string()));
        match (parsed, complete) {
            (Ok(r), true) => {
                offsets.push(pos);
                records.push(r);
                pos += n as u64;
            }
            // Only the final line can be torn by an interrupted write.
            (_, false) => {
                torn_tail = true;
                break;
            }
            (Err(message), true) => {
                return Err(LogReadError::Corrupt {
                    path: path.to_path_buf(),
                    line: lineno,
                    message,
                });
            }
        }
    }
    for (i, r) in records.iter().enumerate() {
        if r.seq != i as u64 {
            return Err(LogReadError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("sequence number {} where {} expected", r.seq, i),
            });
        }
    }
    Ok(LoadedLog {
        records,
        offsets,
        valid_len: pos,
        torn_tail,
    })
}
