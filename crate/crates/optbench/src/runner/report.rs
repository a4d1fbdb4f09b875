//! Experiment reports: aggregated metrics plus the manifest needed to
//! re-run the experiment bit-identically under a scripted backend.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{BackendConfig, TaskConfig};
use crate::metrics::{ExclusionRule, MetricReport, SampleMetrics};
use crate::oracles::Task;

use super::RunnerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionNote {
    pub task: Task,
    pub sample_id: String,
    pub trial_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment_seed: u64,
    pub dataset_seed: u64,
    pub parallelism: usize,
    pub token_budget: usize,
    pub backend: BackendConfig,
    pub tasks: Vec<TaskConfig>,
    pub exclusion_rule: ExclusionRule,
    pub started_at: String,
    pub finished_at: String,
    pub trace_files: Vec<String>,
    pub exclusions: Vec<ExclusionNote>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub metrics: MetricReport,
    pub samples: Vec<SampleMetrics>,
    pub manifest: Manifest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 2] = [ReportFormat::Csv, ReportFormat::Json];
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        })
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format '{other}' (expected csv or json)")),
        }
    }
}

/// Writes `report.csv` / `report.json` under `out_dir`. Output depends only
/// on the metric rows, so re-emitting the same report is byte-identical.
pub fn emit_report(
    metrics: &MetricReport,
    formats: &[ReportFormat],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, RunnerError> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for format in formats {
        let (name, contents) = match format {
            ReportFormat::Csv => ("report.csv", metrics.to_csv()),
            ReportFormat::Json => ("report.json", metrics.to_json()),
        };
        let path = out_dir.join(name);
        fs::write(&path, contents)?;
        written.push(path);
    }
    Ok(written)
}

impl ExperimentReport {
    /// Writes the metric report files plus `manifest.json`.
    pub fn emit(&self, formats: &[ReportFormat], out_dir: &Path) -> Result<Vec<PathBuf>, RunnerError> {
        let mut written = emit_report(&self.metrics, formats, out_dir)?;
        let manifest_path = out_dir.join("manifest.json");
        let mut manifest = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| RunnerError::Trace(format!("manifest: {e}")))?;
        manifest.push('\n');
        fs::write(&manifest_path, manifest)?;
        written.push(manifest_path);
        Ok(written)
    }
}
