//! Summaries of a run directory, built from the log alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::log::{read_log, Event, Origin, Outcome, LOG_FILE};
use super::RunError;

pub const NO_COMPLETED_TRIALS: &str = "no completed trials";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestEntry {
    pub trial_id: u64,
    pub epoch: usize,
    pub reward: f64,
    pub strategy: Vec<f64>,
    pub native: Vec<f64>,
}

/// One completed trial on the reward curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub trial_id: u64,
    pub reward: f64,
    pub best_so_far: f64,
}

/// A launched strategy, tagged with the number of completed trials at launch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalPoint {
    pub epoch: usize,
    pub trial_id: u64,
    pub origin: Origin,
    pub strategy: Vec<f64>,
    pub native: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureSummary {
    pub total: usize,
    pub by_kind: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub names: Vec<String>,
    pub finished: bool,
    pub launched: usize,
    pub succeeded: usize,
    pub failed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub best: Option<BestEntry>,
    pub reward_curve: Vec<CurvePoint>,
    pub proposals: Vec<ProposalPoint>,
    pub failures: FailureSummary,
}

fn num(x: f64) -> String {
    serde_json::to_string(&x).unwrap_or_else(|_| "null".into())
}

fn nums(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| num(*x)).collect();
    format!("[{}]", parts.join(", "))
}

/// Reads `trials.jsonl` in `dir` and summarizes it.
pub fn report(dir: &Path) -> Result<Report, RunError> {
    let path = dir.join(LOG_FILE);
    if !path.exists() {
        return Err(RunError::Missing(path));
    }
    let log = read_log(&path)?;
    let mut names = Vec::new();
    let mut finished = false;
    let mut launched: BTreeMap<u64, ProposalPoint> = BTreeMap::new();
    let mut curve = Vec::new();
    let mut best: Option<BestEntry> = None;
    let mut failures = FailureSummary::default();
    for record in &log.records {
        match &record.event {
            Event::Header { names: n, .. } => names = n.clone(),
            Event::TrialLaunched {
                trial_id,
                origin,
                strategy,
                native,
                ..
            } => {
                launched.insert(
                    *trial_id,
                    ProposalPoint {
                        epoch: curve.len(),
                        trial_id: *trial_id,
                        origin: *origin,
                        strategy: strategy.values().to_vec(),
                        native: native.clone(),
                    },
                );
            }
            Event::TrialFinished {
                trial_id, outcome, ..
            } => match outcome {
                Outcome::Succeeded { reward } => {
                    let epoch = curve.len() + 1;
                    if best.as_ref().is_none_or(|b| *reward > b.reward) {
                        let p = launched.get(trial_id);
                        best = Some(BestEntry {
                            trial_id: *trial_id,
                            epoch,
                            reward: *reward,
                            strategy: p.map(|p| p.strategy.clone()).unwrap_or_default(),
                            native: p.map(|p| p.native.clone()).unwrap_or_default(),
                        });
                    }
                    curve.push(CurvePoint {
                        epoch,
                        trial_id: *trial_id,
                        reward: *reward,
                        best_so_far: best.as_ref().map_or(*reward, |b| b.reward),
                    });
                }
                Outcome::Failed { error } => {
                    failures.total += 1;
                    let kind = serde_json::to_value(error)
                        .ok()
                        .and_then(|v| v.get("kind").and_then(|k| k.as_str().map(String::from)))
                        .unwrap_or_else(|| "unknown".into());
                    *failures.by_kind.entry(kind).or_default() += 1;
                }
            },
            Event::RunFinished { .. } => finished = true,
            Event::ControllerUpdate { .. } | Event::Checkpoint { .. } => {}
        }
    }
    Ok(Report {
        names,
        finished,
        launched: launched.len(),
        succeeded: curve.len(),
        failed: failures.total,
        message: curve.is_empty().then(|| NO_COMPLETED_TRIALS.to_string()),
        best,
        reward_curve: curve,
        proposals: launched.into_values().collect(),
        failures,
    })
}

impl Report {
    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
            ReportFormat::Text => render_text(self),
        }
    }
}

pub fn render_text(r: &Report) -> String {
    let mut s = String::new();
    let state = if r.finished { "finished" } else { "incomplete" };
    let _ = writeln!(
        s,
        "run {state}: {} launched, {} succeeded, {} failed",
        r.launched, r.succeeded, r.failed
    );
    if let Some(m) = &r.message {
        let _ = writeln!(s, "{m}");
    }
    if let Some(b) = &r.best {
        let _ = writeln!(
            s,
            "\nbest reward {} (trial {}, epoch {})",
            num(b.reward),
            b.trial_id,
            b.epoch
        );
        let width = r.names.iter().map(String::len).max().unwrap_or(0);
        for (i, name) in r.names.iter().enumerate() {
            let _ = writeln!(
                s,
                "  {name:<width$}  normalized {}  native {}",
                b.strategy.get(i).map_or("-".into(), |x| num(*x)),
                b.native.get(i).map_or("-".into(), |x| num(*x)),
            );
        }
    }
    if !r.reward_curve.is_empty() {
        let _ = writeln!(s, "\nreward curve (epoch trial reward best_so_far)");
        for p in &r.reward_curve {
            let _ = writeln!(
                s,
                "  {} {} {} {}",
                p.epoch,
                p.trial_id,
                num(p.reward),
                num(p.best_so_far)
            );
        }
    }
    if !r.proposals.is_empty() {
        let _ = writeln!(s, "\nproposals (epoch trial origin strategy native)");
        for p in &r.proposals {
            let origin = serde_json::to_value(p.origin)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default();
            let _ = writeln!(
                s,
                "  {} {} {origin} {} {}",
                p.epoch,
                p.trial_id,
                nums(&p.strategy),
                nums(&p.native)
            );
        }
    }
    let _ = writeln!(s, "\nfailures: {}", r.failures.total);
    for (kind, n) in &r.failures.by_kind {
        let _ = writeln!(s, "  {kind}: {n}");
    }
    s
}
