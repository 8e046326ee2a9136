//! On-disk artifact schemas. All writes go through the atomic write-temp-
//! then-rename helper, and every file is a pure function of (config, seed),
//! so re-running a command reproduces identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use agnet::checkpoint::{read_json, write_bytes_atomic, write_json_atomic};
use agnet::graph::Structure;
use agnet::search::{MetaState, StepRecord, META_CHECKPOINT_FORMAT};
use agnet::taskbench::NormalizationStats;

use crate::CliError;

/// Trained-model checkpoint: the full resumable state plus the normalization
/// the library was trained under.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub normalization: NormalizationStats,
    pub state: MetaState,
}

impl Checkpoint {
    pub fn new(state: MetaState, normalization: NormalizationStats) -> Self {
        Checkpoint {
            format: META_CHECKPOINT_FORMAT.into(),
            version: 1,
            normalization,
            state,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_json_atomic(path, self).map_err(CliError::from)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let ck: Checkpoint = read_json(path)?;
        if ck.format != META_CHECKPOINT_FORMAT {
            return Err(CliError::Data(format!(
                "{}: unexpected checkpoint format {:?}",
                path.display(),
                ck.format
            )));
        }
        Ok(ck)
    }
}

pub const SUMMARY_FORMAT: &str = "agnet-summary";

/// Per-task evaluation entry in a summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskReport {
    pub id: String,
    pub normalized_mse: f64,
    pub distance_equivalent_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<Structure>,
}

/// One method's evaluation over a metaset; the input format of `report`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub format: String,
    pub version: u32,
    pub method: String,
    pub mean_normalized_mse: f64,
    pub distance_equivalent_mm: f64,
    pub tasks: Vec<TaskReport>,
}

impl Summary {
    pub fn new(method: &str, tasks: Vec<TaskReport>) -> Result<Self, CliError> {
        if tasks.is_empty() {
            return Err(CliError::Data("summary has no task entries".into()));
        }
        let mean = tasks.iter().map(|t| t.normalized_mse).sum::<f64>() / tasks.len() as f64;
        Ok(Summary {
            format: SUMMARY_FORMAT.into(),
            version: 1,
            method: method.into(),
            mean_normalized_mse: mean,
            distance_equivalent_mm: agnet::taskbench::mse_to_distance(mean)?,
            tasks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_json_atomic(path, self).map_err(CliError::from)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let s: Summary = read_json(path)?;
        if s.format != SUMMARY_FORMAT {
            return Err(CliError::Data(format!(
                "{}: not a summary file (format {:?})",
                path.display(),
                s.format
            )));
        }
        Ok(s)
    }
}

/// Training curve: one CSV row per step.
pub fn write_curve(path: &Path, records: &[StepRecord]) -> Result<(), CliError> {
    let mut body = String::from("step,task,train_loss,accepted,temperature\n");
    for r in records {
        let _ = writeln!(
            body,
            "{},{},{},{},{}",
            r.step, r.task, r.train_loss, r.accepted, r.temperature
        );
    }
    write_bytes_atomic(path, body.as_bytes()).map_err(CliError::from)
}

/// Result of a standalone `adapt` run on one task.
#[derive(Debug, Serialize, Deserialize)]
pub struct AdaptReport {
    pub format: String,
    pub version: u32,
    pub task_id: String,
    pub budget: u64,
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_normalized_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_distance_equivalent_mm: Option<f64>,
    pub structure: Structure,
}

pub const ADAPT_FORMAT: &str = "agnet-adapt";
