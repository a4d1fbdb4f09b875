//! JSON-lines trial traces.
//!
//! One file per trial, one record per line, flushed as the trial advances so
//! aborted runs stay auditable. Every prompt sent appears verbatim next to
//! its raw reply. Oracle reference traces share the schema with
//! `source = "oracle"` and no exchanges.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{BackendConfig, TaskConfig};
use crate::domain::{ProblemInstance, Solution};
use crate::metrics::TrialOutcome;
use crate::oracles::Task;

use super::RunnerError;

pub const SOURCE_LLM: &str = "llm";
pub const SOURCE_ORACLE: &str = "oracle";

/// One request/response round with the backend. `chosen` marks which reply
/// was committed to the transcript when several were sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub prompt: String,
    pub replies: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub chosen: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub source: String,
    pub task: Task,
    pub sample_id: String,
    pub trial_index: usize,
    pub instance: ProblemInstance,
    pub config: TaskConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub backend: Option<BackendConfig>,
    pub experiment_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// define-loss, iteration, grid-create, grid-select, seed, oracle-step.
    pub step: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iteration: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub exchanges: Vec<Exchange>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub parsed: Option<Solution>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub parsed_list: Option<Vec<Solution>>,
    /// Harness-recomputed loss; model-stated numbers stay in the raw replies.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_solution: Option<Solution>,
    pub init_loss: f64,
    pub final_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub excluded: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Header(Box<TraceHeader>),
    Step(StepRecord),
    Outcome(OutcomeRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialTrace {
    pub header: TraceHeader,
    pub steps: Vec<StepRecord>,
    pub outcome: OutcomeRecord,
}

impl TrialTrace {
    pub fn file_name(&self) -> String {
        trace_file_name(&self.header)
    }

    pub fn outcome_for_metrics(&self) -> TrialOutcome {
        TrialOutcome {
            sample_id: self.header.sample_id.clone(),
            trial_index: self.header.trial_index,
            init_loss: self.outcome.init_loss,
            final_loss: self.outcome.final_loss,
            excluded: self.outcome.excluded.clone(),
        }
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), RunnerError> {
        let mut writer = TraceWriter::create(path)?;
        writer.record(&TraceRecord::Header(Box::new(self.header.clone())))?;
        for step in &self.steps {
            writer.record(&TraceRecord::Step(step.clone()))?;
        }
        writer.record(&TraceRecord::Outcome(self.outcome.clone()))?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, RunnerError> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut header = None;
        let mut steps = Vec::new();
        let mut outcome = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: TraceRecord = serde_json::from_str(&line).map_err(|e| {
                RunnerError::Trace(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            match record {
                TraceRecord::Header(h) => header = Some(*h),
                TraceRecord::Step(s) => steps.push(s),
                TraceRecord::Outcome(o) => outcome = Some(o),
            }
        }
        let header = header.ok_or_else(|| {
            RunnerError::Trace(format!("{}: missing header record", path.display()))
        })?;
        let outcome = outcome.ok_or_else(|| {
            RunnerError::Trace(format!("{}: missing outcome record", path.display()))
        })?;
        Ok(Self {
            header,
            steps,
            outcome,
        })
    }
}

pub fn trace_file_name(header: &TraceHeader) -> String {
    trial_file_name(
        header.task,
        &header.sample_id,
        header.trial_index,
        &header.source,
    )
}

pub fn trial_file_name(task: Task, sample_id: &str, trial_index: usize, source: &str) -> String {
    if source == SOURCE_ORACLE {
        format!("{}_{}_oracle.jsonl", task.name(), sample_id)
    } else {
        format!("{}_{}_t{:02}.jsonl", task.name(), sample_id, trial_index)
    }
}

/// Incremental trace sink: every record is written and flushed immediately.
pub struct TraceWriter {
    file: fs::File,
    path: PathBuf,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self, RunnerError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(Self {
            file: fs::File::create(path)?,
            path: path.to_path_buf(),
        })
    }

    pub fn record(&mut self, record: &TraceRecord) -> Result<(), RunnerError> {
        let line = serde_json::to_string(record)
            .map_err(|e| RunnerError::Trace(format!("{}: {e}", self.path.display())))?;
        self.file.write_all(line.as_bytes())?;
        self.file.write_all(b"\n")?;
        self.file.flush()?;
        Ok(())
    }
}
