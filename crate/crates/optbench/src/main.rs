use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use optbench::config::{BackendKind, ExperimentConfig};
use optbench::domain::{gen_dataset, Dataset};
use optbench::metrics::aggregate;
use optbench::oracles::Task;
use optbench::runner::report::{emit_report, ReportFormat};
use optbench::runner::{metrics_from_traces, read_traces, Runner};

#[derive(Parser)]
#[command(
    name = "optbench",
    about = "Benchmark chat models as iterative optimizers against exact oracle algorithms",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file (JSON lines).
    GenDataset(GenDatasetArgs),
    /// Run an experiment: N trials per (task, instance), traces + report.
    Run(RunArgs),
    /// Recompute the metric report from persisted traces.
    Report(ReportArgs),
    /// Emit oracle reference traces for the ground-truth tasks.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct GenDatasetArgs {
    /// Problem dimensions, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "3,6,12,24,48")]
    dims: Vec<usize>,
    /// Instances per dimension.
    #[arg(long = "per-dim", default_value_t = 3)]
    per_dim: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Tasks to run, comma separated (default: all four).
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<Task>>,
    /// Backend kind; overrides the config file.
    #[arg(long)]
    backend: Option<BackendKind>,
    /// TOML config file (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for traces, report, and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Worker pool size; overrides the config file.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Scripted-backend replies file; overrides the config file.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "csv,json")]
    format: Vec<ReportFormat>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory of trial trace files.
    #[arg(long)]
    traces: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "csv,json")]
    format: Vec<ReportFormat>,
    /// Output directory (default: next to the traces).
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML config file, for the exclusion rule.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Ground-truth tasks, comma separated (default: the three that have one).
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<Task>>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let dataset =
        Dataset::read_jsonl(path).with_context(|| format!("reading {}", path.display()))?;
    if dataset.instances.is_empty() {
        bail!("dataset {} is empty", path.display());
    }
    Ok(dataset)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenDataset(args) => {
            if args.dims.is_empty() {
                bail!("--dims must name at least one dimension");
            }
            let dataset = gen_dataset(&args.dims, args.per_dim, args.seed);
            dataset.write_jsonl(&args.out)?;
            println!(
                "wrote {} instances ({} dims x {}) to {}",
                dataset.instances.len(),
                args.dims.len(),
                args.per_dim,
                args.out.display()
            );
        }
        Command::Run(args) => {
            let mut cfg = load_config(args.config.as_ref())?;
            if let Some(kind) = args.backend {
                cfg.backend.kind = kind;
            }
            if let Some(script) = args.script {
                cfg.backend.script = Some(script);
            }
            if let Some(p) = args.parallelism {
                cfg.parallelism = p.max(1);
            }
            let dataset = load_dataset(&args.dataset)?;
            let tasks: Vec<Task> = args.tasks.unwrap_or_else(|| Task::ALL.to_vec());
            let task_cfgs: Vec<_> = tasks.iter().map(|&t| cfg.task_config(t)).collect();
            let runner = Runner::new(cfg)?;
            let report = runner.run_experiment(&dataset, &task_cfgs, Some(&args.out))?;
            let written = report.emit(&args.format, &args.out)?;
            for path in &written {
                println!("wrote {}", path.display());
            }
            let excluded = report.manifest.exclusions.len();
            println!(
                "{} samples aggregated into {} rows ({} trial(s) excluded)",
                report.samples.len(),
                report.metrics.rows.len(),
                excluded
            );
        }
        Command::Report(args) => {
            let cfg = load_config(args.config.as_ref())?;
            let traces = read_traces(&args.traces)?;
            if traces.is_empty() {
                bail!("no trace files under {}", args.traces.display());
            }
            let (samples, exclusions) = metrics_from_traces(&traces, &cfg.exclusion)?;
            let metrics = aggregate(&samples);
            let out_dir = args
                .out
                .or_else(|| args.traces.parent().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("."));
            let written = emit_report(&metrics, &args.format, &out_dir)?;
            for path in &written {
                println!("wrote {}", path.display());
            }
            println!(
                "{} traces -> {} samples, {} rows ({} exclusion(s))",
                traces.len(),
                samples.len(),
                metrics.rows.len(),
                exclusions.len()
            );
        }
        Command::Oracle(args) => {
            let cfg = load_config(args.config.as_ref())?;
            let dataset = load_dataset(&args.dataset)?;
            let tasks: Vec<Task> = args.tasks.unwrap_or_else(|| {
                vec![Task::GradientDescent, Task::HillClimbing, Task::GridSearch]
            });
            let task_cfgs: Vec<_> = tasks.iter().map(|&t| cfg.task_config(t)).collect();
            // reference traces never talk to a model backend
            let runner = Runner::with_backend(cfg, optbench::llm::Backend::PerfectOracle)?;
            let written = runner.emit_oracle_traces(&dataset, &task_cfgs, &args.out)?;
            println!("wrote {} oracle traces to {}", written.len(), args.out.display());
        }
    }
    Ok(())
}
