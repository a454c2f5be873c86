//! Runs a real trainer as a child process.
//!
//! For each trial a request file is written into a fresh temporary directory:
//!
//! ```json
//! {"trial_id": 3, "seed": 42, "params": [{"name": "lr", "normalized": 0.5, "native": 0.00505}]}
//! ```
//!
//! `{request}` in the command template is replaced with the file's path (the
//! path is also exported as `STRATSEARCH_REQUEST`) and the command runs under
//! `sh -c` with the temp directory as working directory. The child reports its
//! result with a line `REWARD: <float>` on stdout; the last such line wins.

use std::io::Read;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::{EvalError, EvaluationRequest, EvaluationResult, Evaluator};

pub const REWARD_SENTINEL: &str = "REWARD:";
const REQUEST_PLACEHOLDER: &str = "{request}";

#[derive(Serialize)]
struct RequestParam<'a> {
    name: &'a str,
    normalized: f64,
    native: f64,
}

#[derive(Serialize)]
struct RequestDoc<'a> {
    trial_id: u64,
    seed: u64,
    params: Vec<RequestParam<'a>>,
}

pub struct ExternalEvaluator {
    names: Vec<String>,
    command_template: String,
    timeout: Duration,
}

impl ExternalEvaluator {
    pub fn new(names: Vec<String>, command_template: impl Into<String>, timeout: Duration) -> Self {
        Self {
            names,
            command_template: command_template.into(),
            timeout,
        }
    }

    /// JSON request document for `request`.
    pub fn request_json(&self, request: &EvaluationRequest) -> Result<String, EvalError> {
        let values = request.strategy.values();
        if values.len() != self.names.len() || request.native.len() != self.names.len() {
            return Err(EvalError::invalid(format!(
                "request has {} values, search space has {} parameters",
                values.len(),
                self.names.len()
            )));
        }
        let doc = RequestDoc {
            trial_id: request.trial_id,
            seed: request.seed,
            params: self
                .names
                .iter()
                .zip(values)
                .zip(&request.native)
                .map(|((name, &normalized), &native)| RequestParam {
                    name,
                    normalized,
                    native,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc).expect("request serializes"))
    }

    fn spawn(&self, request_path: &Path, workdir: &Path) -> Result<Child, EvalError> {
        let path = request_path.to_string_lossy();
        let quoted = format!("'{}'", path.replace('\'', r"'\''"));
        let command = self.command_template.replace(REQUEST_PLACEHOLDER, &quoted);
        let mut cmd = Command::new("sh");
        cmd.arg("-c")
            .arg(command)
            .current_dir(workdir)
            .env("STRATSEARCH_REQUEST", request_path)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }
        cmd.spawn().map_err(|e| EvalError::Spawn {
            message: e.to_string(),
        })
    }
}

fn kill_tree(child: &mut Child) {
    #[cfg(unix)]
    {
        // The child leads its own process group; take the whole group down.
        let pgid = child.id() as libc::pid_t;
        unsafe {
            libc::kill(-pgid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
    let _ = child.wait();
}

fn drain<R: Read + Send + 'static>(stream: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut out = Vec::new();
        if let Some(mut s) = stream {
            let _ = s.read_to_end(&mut out);
        }
        String::from_utf8_lossy(&out).into_owned()
    })
}

/// Reward from the last `REWARD:` line of `stdout`.
pub fn parse_reward(stdout: &str) -> Result<f64, EvalError> {
    let line = stdout
        .lines()
        .map(str::trim)
        .rfind(|l| l.starts_with(REWARD_SENTINEL))
        .ok_or(EvalError::MissingReward)?;
    let value = line[REWARD_SENTINEL.len()..].trim();
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(EvalError::UnparseableReward {
            line: line.to_string(),
        }),
    }
}

fn tail(s: &str, max: usize) -> String {
    let start = s.len().saturating_sub(max);
    let mut idx = start;
    while !s.is_char_boundary(idx) {
        idx += 1;
    }
    s[idx..].to_string()
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, request: &EvaluationRequest) -> Result<EvaluationResult, EvalError> {
        let start = Instant::now();
        let body = self.request_json(request)?;
        let dir = tempfile::Builder::new()
            .prefix(&format!("stratsearch-trial{}-", request.trial_id))
            .tempdir()
            .map_err(|e| EvalError::Spawn {
                message: format!("temp dir: {e}"),
            })?;
        let request_path = dir.path().join("request.json");
        std::fs::write(&request_path, body).map_err(|e| EvalError::Spawn {
            message: format!("writing request: {e}"),
        })?;

        let mut child = self.spawn(&request_path, dir.path())?;
        let stdout = drain(child.stdout.take());
        let stderr = drain(child.stderr.take());

        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if start.elapsed() >= self.timeout => {
                    kill_tree(&mut child);
                    let _ = stdout.join();
                    let _ = stderr.join();
                    return Err(EvalError::Timeout {
                        seconds: self.timeout.as_secs_f64(),
                    });
                }
                Ok(None) => thread::sleep(Duration::from_millis(5)),
                Err(e) => {
                    kill_tree(&mut child);
                    return Err(EvalError::Spawn {
                        message: e.to_string(),
                    });
                }
            }
        };
        // Grandchildren may still hold the pipes open.
        #[cfg(unix)]
        unsafe {
            libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
        }
        let out = stdout.join().unwrap_or_default();
        let err = stderr.join().unwrap_or_default();
        if !status.success() {
            return Err(EvalError::NonZeroExit {
                code: status.code(),
                stderr_tail: tail(&err, 2000),
            });
        }
        let reward = parse_reward(&out)?;
        let mut result = EvaluationResult::new(request.trial_id, reward, start.elapsed());
        if !err.is_empty() {
            result
                .detail
                .insert("stderr_tail".into(), serde_json::json!(tail(&err, 500)));
        }
        Ok(result)
    }
}
