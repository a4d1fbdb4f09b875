//! Experiment orchestration: the per-task conversation protocols, trial
//! execution under a bounded worker pool, and the metrics pipeline.
//!
//! Every task follows the same loop: the model first formulates the loss
//! function from the data points, then each iteration asks for a new
//! solution and the harness recomputes its loss. A trial that fails to
//! parse (after one format-reminder retry) or loses its transport finishes
//! with an excluded outcome; it never aborts the experiment.

pub mod report;
pub mod trace;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, TaskConfig};
use crate::domain::{derive_rng, mse_loss, Dataset, DomainError, ProblemInstance, Solution};
use crate::exec;
use crate::llm::{Backend, ChatSession, ChatTranscript, LlmError};
use crate::metrics::{
    aggregate, exclude_outliers, sample_metrics, ExclusionRule, MetricsError, SampleMetrics,
    TrialOutcome,
};
use crate::oracles::{reference_loss, OracleError, Task};
use crate::prompts::{
    format_history, format_number, format_tuple, parse_point, parse_point_list, PromptError,
    TemplateId, TemplateSet, SELF_CONSISTENCY_TOL,
};
use crate::prompts::self_consistent_choice_index;

use report::{ExclusionNote, ExperimentReport, Manifest};
use trace::{
    trial_file_name, Exchange, OutcomeRecord, StepRecord, TraceHeader, TraceRecord, TraceWriter,
    TrialTrace, SOURCE_LLM, SOURCE_ORACLE,
};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("trace: {0}")]
    Trace(String),
}

/// Drives experiments against one configured backend.
pub struct Runner {
    cfg: ExperimentConfig,
    templates: TemplateSet,
    backend: Backend,
}

struct Progress {
    final_solution: Option<Solution>,
    final_loss: f64,
}

struct Asked<T> {
    value: Option<T>,
    exchanges: Vec<Exchange>,
    failure: Option<String>,
}

impl Runner {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, RunnerError> {
        cfg.validate()?;
        let backend = Backend::from_config(&cfg.backend)?;
        Self::with_backend(cfg, backend)
    }

    /// Bypasses backend construction; used by tests that build scripts in
    /// memory.
    pub fn with_backend(cfg: ExperimentConfig, backend: Backend) -> Result<Self, RunnerError> {
        let templates = TemplateSet::load(cfg.templates_dir.as_deref())?;
        Ok(Self {
            cfg,
            templates,
            backend,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Executes one full trial and returns its trace. When `trace_path` is
    /// given every record is flushed there as it happens.
    pub fn run_trial(
        &self,
        task_cfg: &TaskConfig,
        instance: &ProblemInstance,
        trial_index: usize,
        trace_path: Option<&Path>,
    ) -> Result<TrialTrace, RunnerError> {
        let header = TraceHeader {
            source: SOURCE_LLM.into(),
            task: task_cfg.task,
            sample_id: instance.id.clone(),
            trial_index,
            instance: instance.clone(),
            config: task_cfg.clone(),
            backend: Some(self.cfg.backend.clone()),
            experiment_seed: self.cfg.seed,
        };
        let mut writer = trace_path.map(TraceWriter::create).transpose()?;
        if let Some(w) = writer.as_mut() {
            w.record(&TraceRecord::Header(Box::new(header.clone())))?;
        }
        let session = ChatSession::new(
            ChatTranscript::new(self.cfg.token_budget),
            self.backend.session(&instance.id, trial_index),
        );
        let mut driver = TrialDriver {
            templates: &self.templates,
            cfg: task_cfg,
            instance,
            experiment_seed: self.cfg.seed,
            trial_index,
            session,
            steps: Vec::new(),
            writer,
            failure: None,
        };
        let outcome = driver.run()?;
        if let Some(w) = driver.writer.as_mut() {
            w.record(&TraceRecord::Outcome(outcome.clone()))?;
        }
        Ok(TrialTrace {
            header,
            steps: driver.steps,
            outcome,
        })
    }

    /// Runs N trials of every (task, instance) pair, persists traces, and
    /// reduces them through the metrics pipeline. With a scripted backend
    /// the result is identical at any parallelism.
    pub fn run_experiment(
        &self,
        dataset: &Dataset,
        tasks: &[TaskConfig],
        out_dir: Option<&Path>,
    ) -> Result<ExperimentReport, RunnerError> {
        for t in tasks {
            t.validate()?;
        }
        let traces_dir = out_dir.map(|d| d.join("traces"));
        if let Some(dir) = &traces_dir {
            fs::create_dir_all(dir)?;
        }
        let started_at = chrono::Utc::now().to_rfc3339();

        struct Unit {
            task_idx: usize,
            inst_idx: usize,
            trial: usize,
        }
        let mut units = Vec::new();
        for (task_idx, t) in tasks.iter().enumerate() {
            for (inst_idx, _) in dataset.instances.iter().enumerate() {
                for trial in 0..t.trials {
                    units.push(Unit {
                        task_idx,
                        inst_idx,
                        trial,
                    });
                }
            }
        }

        let results: Vec<Result<TrialTrace, RunnerError>> =
            exec::map_collect(units, self.cfg.parallelism, |u| {
                let task_cfg = &tasks[u.task_idx];
                let instance = &dataset.instances[u.inst_idx];
                let path = traces_dir.as_ref().map(|dir| {
                    dir.join(trial_file_name(
                        task_cfg.task,
                        &instance.id,
                        u.trial,
                        SOURCE_LLM,
                    ))
                });
                self.run_trial(task_cfg, instance, u.trial, path.as_deref())
            });
        let mut traces = Vec::with_capacity(results.len());
        for r in results {
            traces.push(r?);
        }

        let (samples, exclusions) = metrics_from_traces(&traces, &self.cfg.exclusion)?;
        let metrics = aggregate(&samples);
        let manifest = Manifest {
            experiment_seed: self.cfg.seed,
            dataset_seed: dataset.seed,
            parallelism: self.cfg.parallelism,
            token_budget: self.cfg.token_budget,
            backend: self.cfg.backend.clone(),
            tasks: tasks.to_vec(),
            exclusion_rule: self.cfg.exclusion,
            started_at,
            finished_at: chrono::Utc::now().to_rfc3339(),
            trace_files: traces.iter().map(TrialTrace::file_name).collect(),
            exclusions,
        };
        Ok(ExperimentReport {
            metrics,
            samples,
            manifest,
        })
    }

    /// Emits reference traces (`source = "oracle"`) for every instance of
    /// every ground-truth task.
    pub fn emit_oracle_traces(
        &self,
        dataset: &Dataset,
        tasks: &[TaskConfig],
        out_dir: &Path,
    ) -> Result<Vec<PathBuf>, RunnerError> {
        fs::create_dir_all(out_dir)?;
        let mut written = Vec::new();
        for task_cfg in tasks {
            if task_cfg.task == Task::BlackBox {
                log::warn!("black-box has no ground truth; skipping oracle traces");
                continue;
            }
            for instance in &dataset.instances {
                let oracle = crate::oracles::oracle_trace(task_cfg.task, instance, task_cfg)?;
                let steps = oracle
                    .steps
                    .iter()
                    .enumerate()
                    .map(|(i, s)| StepRecord {
                        step: "oracle-step".into(),
                        iteration: Some(i),
                        exchanges: Vec::new(),
                        parsed: Some(s.solution.clone()),
                        parsed_list: None,
                        loss: Some(s.loss.value()),
                    })
                    .collect();
                let final_step = oracle.final_step();
                let trace = TrialTrace {
                    header: TraceHeader {
                        source: SOURCE_ORACLE.into(),
                        task: task_cfg.task,
                        sample_id: instance.id.clone(),
                        trial_index: 0,
                        instance: instance.clone(),
                        config: task_cfg.clone(),
                        backend: None,
                        experiment_seed: self.cfg.seed,
                    },
                    steps,
                    outcome: OutcomeRecord {
                        final_solution: Some(final_step.solution.clone()),
                        init_loss: oracle.steps[0].loss.value(),
                        final_loss: oracle.final_loss().value(),
                        excluded: None,
                    },
                };
                let path = out_dir.join(trace.file_name());
                trace.write_jsonl(&path)?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

/// Rebuilds per-sample metrics from trial traces: exclusion rule, then
/// G/P/U per sample. Oracle-sourced traces are ignored. This is the same
/// pipeline `run_experiment` uses, so reports recomputed from persisted
/// traces match the original run.
pub fn metrics_from_traces(
    traces: &[TrialTrace],
    rule: &ExclusionRule,
) -> Result<(Vec<SampleMetrics>, Vec<ExclusionNote>), RunnerError> {
    let mut groups: BTreeMap<(Task, String), Vec<&TrialTrace>> = BTreeMap::new();
    for t in traces {
        if t.header.source == SOURCE_ORACLE {
            continue;
        }
        groups
            .entry((t.header.task, t.header.sample_id.clone()))
            .or_default()
            .push(t);
    }
    let mut samples = Vec::new();
    let mut exclusions = Vec::new();
    for ((task, sample_id), mut group) in groups {
        group.sort_by_key(|t| t.header.trial_index);
        let header = &group[0].header;
        let raw: Vec<TrialOutcome> = group.iter().map(|t| t.outcome_for_metrics()).collect();
        let outcomes = exclude_outliers(raw, rule);
        for o in &outcomes {
            if let Some(reason) = &o.excluded {
                exclusions.push(ExclusionNote {
                    task,
                    sample_id: o.sample_id.clone(),
                    trial_index: o.trial_index,
                    reason: reason.clone(),
                });
            }
        }
        let truth = match task {
            Task::BlackBox => None,
            t => Some(reference_loss(t, &header.instance, &header.config)?.value()),
        };
        match sample_metrics(task, header.instance.d, &outcomes, truth) {
            Ok(s) => samples.push(s),
            Err(e) => log::warn!("sample {sample_id}: {e}; skipped"),
        }
    }
    Ok((samples, exclusions))
}

/// Reads every `*.jsonl` trial trace under `dir` (sorted by file name).
pub fn read_traces(dir: &Path) -> Result<Vec<TrialTrace>, RunnerError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
        .collect();
    paths.sort();
    let mut traces = Vec::with_capacity(paths.len());
    for path in paths {
        traces.push(TrialTrace::read_jsonl(&path)?);
    }
    Ok(traces)
}

struct TrialDriver<'a> {
    templates: &'a TemplateSet,
    cfg: &'a TaskConfig,
    instance: &'a ProblemInstance,
    experiment_seed: u64,
    trial_index: usize,
    session: ChatSession,
    steps: Vec<StepRecord>,
    writer: Option<TraceWriter>,
    failure: Option<String>,
}

impl TrialDriver<'_> {
    fn loss(&self, s: &Solution) -> f64 {
        mse_loss(self.instance, s)
            .expect("parsing enforces arity")
            .value()
    }

    fn record(&mut self, step: StepRecord) -> Result<(), RunnerError> {
        if let Some(w) = self.writer.as_mut() {
            w.record(&TraceRecord::Step(step.clone()))?;
        }
        self.steps.push(step);
        Ok(())
    }

    fn run(&mut self) -> Result<OutcomeRecord, RunnerError> {
        self.session.push_system(self.templates.system_prompt());

        // black-box seed solutions come from the trial's own RNG stream, so
        // the initial loss is defined even if the conversation dies early
        let bb_seeds = (self.cfg.task == Task::BlackBox).then(|| self.sample_seeds());
        let init_loss = match &bb_seeds {
            Some(seeds) => seeds
                .iter()
                .map(|(_, l)| *l)
                .fold(f64::INFINITY, f64::min),
            None => self.loss(&self.instance.init_solution()),
        };

        let define_prompt = self.templates.render(
            TemplateId::DefineLoss,
            &crate::prompts::Bindings::new().set("data", format_tuple(&self.instance.y)),
        )?;
        let defined = self.send_raw(&define_prompt);
        self.record(StepRecord {
            step: "define-loss".into(),
            iteration: None,
            exchanges: defined.exchanges,
            parsed: None,
            parsed_list: None,
            loss: None,
        })?;
        // pinned prefix: system message + loss-definition exchange
        self.session.pin_prefix();

        let progress = if defined.value.is_none() {
            self.failure = defined.failure;
            Progress {
                final_solution: None,
                final_loss: init_loss,
            }
        } else {
            match self.cfg.task {
                Task::GradientDescent => self.run_gradient_descent(init_loss)?,
                Task::HillClimbing => self.run_hill_climbing(init_loss)?,
                Task::GridSearch => self.run_grid_search(init_loss)?,
                Task::BlackBox => self.run_black_box(bb_seeds.expect("seeded above"))?,
            }
        };
        Ok(OutcomeRecord {
            final_solution: progress.final_solution,
            init_loss,
            final_loss: progress.final_loss,
            excluded: self.failure.clone(),
        })
    }

    fn run_gradient_descent(&mut self, init_loss: f64) -> Result<Progress, RunnerError> {
        let mut current: Option<Solution> = None;
        let mut current_loss = init_loss;
        for it in 1..=self.cfg.iterations {
            let point = current
                .clone()
                .unwrap_or_else(|| self.instance.init_solution());
            let prompt = self.templates.render(
                TemplateId::GdStep,
                &crate::prompts::Bindings::new()
                    .set("lr", format_number(self.cfg.lr))
                    .set("point", format_tuple(point.values())),
            )?;
            let asked = self.ask_point(&prompt);
            let loss = asked.value.as_ref().map(|s| self.loss(s));
            self.record(StepRecord {
                step: "iteration".into(),
                iteration: Some(it),
                exchanges: asked.exchanges,
                parsed: asked.value.clone(),
                parsed_list: None,
                loss,
            })?;
            match asked.value {
                Some(sol) => {
                    current_loss = loss.expect("loss computed for parsed solution");
                    current = Some(sol);
                }
                None => {
                    self.failure = asked.failure;
                    break;
                }
            }
        }
        Ok(Progress {
            final_solution: current,
            final_loss: current_loss,
        })
    }

    fn run_hill_climbing(&mut self, init_loss: f64) -> Result<Progress, RunnerError> {
        let mut current: Option<Solution> = None;
        let mut current_loss = init_loss;
        for it in 1..=self.cfg.iterations {
            let point = current
                .clone()
                .unwrap_or_else(|| self.instance.init_solution());
            let gen_prompt = self.templates.render(
                TemplateId::HcGenerate,
                &crate::prompts::Bindings::new().set("solution", format_tuple(point.values())),
            )?;
            let generated = self.ask_list(&gen_prompt);
            if generated.value.is_none() {
                self.record(StepRecord {
                    step: "iteration".into(),
                    iteration: Some(it),
                    exchanges: generated.exchanges,
                    parsed: None,
                    parsed_list: None,
                    loss: None,
                })?;
                self.failure = generated.failure;
                break;
            }
            let select_prompt = self
                .templates
                .render(TemplateId::HcSelect, &crate::prompts::Bindings::new())?;
            let selected = self.ask_point(&select_prompt);
            let mut exchanges = generated.exchanges;
            exchanges.extend(selected.exchanges);
            let loss = selected.value.as_ref().map(|s| self.loss(s));
            self.record(StepRecord {
                step: "iteration".into(),
                iteration: Some(it),
                exchanges,
                parsed: selected.value.clone(),
                parsed_list: generated.value,
                loss,
            })?;
            match selected.value {
                Some(sol) => {
                    current_loss = loss.expect("loss computed for parsed solution");
                    current = Some(sol);
                }
                None => {
                    self.failure = selected.failure;
                    break;
                }
            }
        }
        Ok(Progress {
            final_solution: current,
            final_loss: current_loss,
        })
    }

    fn run_grid_search(&mut self, init_loss: f64) -> Result<Progress, RunnerError> {
        let create_prompt = self.templates.render(
            TemplateId::GridCreate,
            &crate::prompts::Bindings::new()
                .set("low_bound", self.cfg.grid_low.to_string())
                .set("high_bound", self.cfg.grid_high.to_string()),
        )?;
        let created = self.send_raw(&create_prompt);
        // the combination list is protocol, not scoring: record it (parsed
        // when possible) and move on
        let audit_list = created
            .value
            .as_deref()
            .and_then(|reply| parse_point_list(reply, self.instance.d).ok());
        self.record(StepRecord {
            step: "grid-create".into(),
            iteration: None,
            exchanges: created.exchanges,
            parsed: None,
            parsed_list: audit_list,
            loss: None,
        })?;
        if created.value.is_none() {
            self.failure = created.failure;
            return Ok(Progress {
                final_solution: None,
                final_loss: init_loss,
            });
        }

        let select_prompt = self
            .templates
            .render(TemplateId::GridSelect, &crate::prompts::Bindings::new())?;
        let selected = self.ask_point(&select_prompt);
        let loss = selected.value.as_ref().map(|s| self.loss(s));
        self.record(StepRecord {
            step: "grid-select".into(),
            iteration: None,
            exchanges: selected.exchanges,
            parsed: selected.value.clone(),
            parsed_list: None,
            loss,
        })?;
        match selected.value {
            Some(sol) => Ok(Progress {
                final_loss: loss.expect("loss computed for parsed solution"),
                final_solution: Some(sol),
            }),
            None => {
                self.failure = selected.failure;
                Ok(Progress {
                    final_solution: None,
                    final_loss: init_loss,
                })
            }
        }
    }

    fn sample_seeds(&self) -> Vec<(Solution, f64)> {
        use rand::Rng;
        let mut rng = derive_rng(
            self.experiment_seed,
            &format!("{}-{}", self.cfg.task.name(), self.instance.id),
            self.trial_index as u64,
        );
        (0..self.cfg.bb_seed_count)
            .map(|_| {
                let values: Vec<f64> = (0..self.instance.d)
                    .map(|_| f64::from(rng.random_range(0..=10u8)))
                    .collect();
                let s = Solution::new(values).expect("integer seeds are finite");
                let l = self.loss(&s);
                (s, l)
            })
            .collect()
    }

    fn run_black_box(&mut self, seeds: Vec<(Solution, f64)>) -> Result<Progress, RunnerError> {
        for (s, l) in &seeds {
            self.record(StepRecord {
                step: "seed".into(),
                iteration: None,
                exchanges: Vec::new(),
                parsed: Some(s.clone()),
                parsed_list: None,
                loss: Some(*l),
            })?;
        }
        let mut history = seeds;
        let mut best = history
            .iter()
            .cloned()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one seed");
        for it in 1..=self.cfg.iterations {
            let prompt = self.templates.render(
                TemplateId::BlackBoxGuess,
                &crate::prompts::Bindings::new().set("pass_result", format_history(&history)),
            )?;
            let asked = self.ask_point(&prompt);
            let loss = asked.value.as_ref().map(|s| self.loss(s));
            self.record(StepRecord {
                step: "iteration".into(),
                iteration: Some(it),
                exchanges: asked.exchanges,
                parsed: asked.value.clone(),
                parsed_list: None,
                loss,
            })?;
            match asked.value {
                Some(sol) => {
                    let l = loss.expect("loss computed for parsed solution");
                    if l < best.1 {
                        best = (sol.clone(), l);
                    }
                    history.push((sol, l));
                }
                None => {
                    self.failure = asked.failure;
                    break;
                }
            }
        }
        // best-so-far over everything visited, seeds included
        Ok(Progress {
            final_solution: Some(best.0),
            final_loss: best.1,
        })
    }

    /// Plain request/reply with no parsing; used for the loss definition
    /// and the grid combination step.
    fn send_raw(&mut self, prompt: &str) -> Asked<String> {
        match self.session.send(prompt) {
            Ok(reply) => Asked {
                exchanges: vec![Exchange {
                    prompt: prompt.into(),
                    replies: vec![reply.clone()],
                    chosen: Some(0),
                }],
                value: Some(reply),
                failure: None,
            },
            Err(e) => Asked {
                value: None,
                exchanges: vec![Exchange {
                    prompt: prompt.into(),
                    replies: Vec::new(),
                    chosen: None,
                }],
                failure: Some(format!("backend failure: {e}")),
            },
        }
    }

    /// Asks for a solution point, retrying once with a format reminder on
    /// parse failure. With self-consistency enabled, samples n completions
    /// and commits the majority choice.
    fn ask_point(&mut self, prompt: &str) -> Asked<Solution> {
        let d = self.instance.d;
        let reminder = format!(
            "Your previous answer could not be parsed. Reply again and end with exactly one tuple of {d} comma-separated numbers in parentheses, like (v1, v2, ...)."
        );
        let mut exchanges = Vec::new();
        for (attempt, text) in [prompt, reminder.as_str()].into_iter().enumerate() {
            match self.try_point(text, &mut exchanges) {
                Ok(Some(sol)) => {
                    return Asked {
                        value: Some(sol),
                        exchanges,
                        failure: None,
                    }
                }
                Ok(None) if attempt == 0 => continue,
                Ok(None) => {
                    return Asked {
                        value: None,
                        exchanges,
                        failure: Some(format!("parse failure after retry: no {d}-value tuple")),
                    }
                }
                Err(e) => {
                    return Asked {
                        value: None,
                        exchanges,
                        failure: Some(format!("backend failure: {e}")),
                    }
                }
            }
        }
        unreachable!("both attempts return");
    }

    fn try_point(
        &mut self,
        prompt: &str,
        exchanges: &mut Vec<Exchange>,
    ) -> Result<Option<Solution>, LlmError> {
        let d = self.instance.d;
        let n = self.cfg.self_consistency_n;
        if n == 1 {
            let reply = self.session.send(prompt)?;
            let parsed = parse_point(&reply, d).ok();
            exchanges.push(Exchange {
                prompt: prompt.into(),
                replies: vec![reply],
                chosen: Some(0),
            });
            return Ok(parsed);
        }
        let replies = self.session.sample(prompt, n)?;
        let mut candidates: Vec<(usize, Solution)> = Vec::new();
        for (i, r) in replies.iter().enumerate() {
            if let Ok(s) = parse_point(r, d) {
                candidates.push((i, s));
            }
        }
        if candidates.is_empty() {
            // keep the conversation coherent before any retry
            self.session.commit(&replies[0]);
            exchanges.push(Exchange {
                prompt: prompt.into(),
                replies,
                chosen: Some(0),
            });
            return Ok(None);
        }
        let solutions: Vec<Solution> = candidates.iter().map(|(_, s)| s.clone()).collect();
        let instance = self.instance;
        let winner = self_consistent_choice_index(&solutions, SELF_CONSISTENCY_TOL, |s| {
            mse_loss(instance, s).expect("parsing enforces arity").value()
        });
        let (reply_idx, solution) = candidates[winner].clone();
        self.session.commit(&replies[reply_idx]);
        exchanges.push(Exchange {
            prompt: prompt.into(),
            replies,
            chosen: Some(reply_idx),
        });
        Ok(Some(solution))
    }

    /// Asks for a neighbor list; an empty list counts as a parse failure.
    fn ask_list(&mut self, prompt: &str) -> Asked<Vec<Solution>> {
        let d = self.instance.d;
        let reminder = format!(
            "Your previous answer could not be parsed. Reply again and end with a list of tuples of {d} comma-separated numbers, like [(v1, v2, ...), (v1, v2, ...)]."
        );
        let mut exchanges = Vec::new();
        for (attempt, text) in [prompt, reminder.as_str()].into_iter().enumerate() {
            let reply = match self.session.send(text) {
                Ok(r) => r,
                Err(e) => {
                    exchanges.push(Exchange {
                        prompt: text.into(),
                        replies: Vec::new(),
                        chosen: None,
                    });
                    return Asked {
                        value: None,
                        exchanges,
                        failure: Some(format!("backend failure: {e}")),
                    };
                }
            };
            let parsed = parse_point_list(&reply, d)
                .ok()
                .filter(|list| !list.is_empty());
            exchanges.push(Exchange {
                prompt: text.into(),
                replies: vec![reply],
                chosen: Some(0),
            });
            match parsed {
                Some(list) => {
                    return Asked {
                        value: Some(list),
                        exchanges,
                        failure: None,
                    }
                }
                None if attempt == 0 => continue,
                None => {
                    return Asked {
                        value: None,
                        exchanges,
                        failure: Some("parse failure after retry: no non-empty solution list".into()),
                    }
                }
            }
        }
        unreachable!("both attempts return");
    }
}
