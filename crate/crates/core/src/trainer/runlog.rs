//! Append-only run log: one JSON line per training step, plus a summary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DrdgError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepType {
    #[serde(rename = "DIS")]
    Dis,
    #[serde(rename = "SRM_MAIN")]
    SrmMain,
    #[serde(rename = "FRM")]
    Frm,
}

impl std::fmt::Display for StepType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StepType::Dis => "DIS",
            StepType::SrmMain => "SRM_MAIN",
            StepType::Frm => "FRM",
        })
    }
}

/// Periodic held-out evaluation attached to a step record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSnapshot {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_hter: Option<f64>,
    /// Mean discriminator NLL on a probe batch from the source domains.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_dis_nll: Option<f64>,
    /// Relative path of the per-sample score dump, when a run dir is active.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores_file: Option<String>,
}

fn is_false(b: &bool) -> bool {
    !b
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub step_type: StepType,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dis: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub srm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wdep: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wcls: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enc: Option<f64>,
    /// Statistics of the effective sample weights at this step.
    pub w_min: f64,
    pub w_mean: f64,
    pub w_max: f64,
    /// Full weight vector (enabled by `log_weights`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_values: Option<Vec<f64>>,
    /// Max |row sum − 1| over this step's channel-weight rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_row_sum_err: Option<f64>,
    /// This step's update was structurally disabled by the active variant.
    #[serde(default, skip_serializing_if = "is_false")]
    pub skipped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSnapshot>,
    /// Wall-clock time of the step. Excluded from determinism comparisons:
    /// it is a measurement, not a computed quantity.
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct RunSummary {
    pub seed: u64,
    pub steps: u64,
    pub aborted: bool,
    pub log_clamps: u64,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_eval: Option<EvalSnapshot>,
    pub wall_s: f64,
}

/// In-memory run log; optionally mirrored line-by-line to
/// `<dir>/runlog.jsonl` as training progresses.
#[derive(Debug, Default)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
    pub summary: RunSummary,
}

impl RunLog {
    /// Serialized records with the wall-clock field zeroed; two runs of the
    /// same seed must agree on these bytes exactly.
    pub fn deterministic_lines(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.wall_ms = 0.0;
                if let Some(e) = &mut r.eval {
                    e.scores_file = e.scores_file.clone();
                }
                serde_json::to_string(&r).expect("record serializes")
            })
            .collect()
    }

    pub fn step_types(&self) -> Vec<StepType> {
        self.records.iter().map(|r| r.step_type).collect()
    }

    pub fn load_jsonl(path: &Path) -> Result<Vec<StepRecord>> {
        let text = fs::read_to_string(path).map_err(|e| DrdgError::io(path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(DrdgError::from))
            .collect()
    }
}

/// Streaming writer for the run directory.
pub struct RunLogWriter {
    file: fs::File,
    path: PathBuf,
}

impl RunLogWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| DrdgError::io(dir, e))?;
        let path = dir.join("runlog.jsonl");
        let file = fs::File::create(&path).map_err(|e| DrdgError::io(&path, e))?;
        Ok(RunLogWriter { file, path })
    }

    pub fn append(&mut self, record: &StepRecord) -> Result<()> {
        let line = serde_json::to_string(record)?;
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.write_all(b"\n"))
            .map_err(|e| DrdgError::io(&self.path, e))
    }

    pub fn finish(mut self, summary: &RunSummary, dir: &Path) -> Result<()> {
        self.file.flush().map_err(|e| DrdgError::io(&self.path, e))?;
        let path = dir.join("summary.json");
        fs::write(&path, serde_json::to_string_pretty(summary)?)
            .map_err(|e| DrdgError::io(&path, e))
    }
}
