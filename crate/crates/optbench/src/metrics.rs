//! Goal, policy, and uncertainty metrics and the aggregation pipeline.
//!
//! All three are ratio-based, so they are insensitive to the absolute scale
//! of a sample's losses: scaling every loss by c leaves G and P unchanged
//! and scales U by c². Variance is population variance (divide by N, not
//! N−1), and the aggregated std is population std to match the plotted
//! confidence band `[value−std, value+std]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracles::Task;

/// Ground-truth losses below this are treated as degenerate: the policy
/// ratio would divide by (near) zero, so the metric is reported absent.
pub const TRUTH_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no usable trials for sample {sample_id}")]
    NoUsableTrials { sample_id: String },
    #[error("sample {sample_id} starts at the optimum: initial loss is zero, goal metric undefined")]
    DegenerateInitialLoss { sample_id: String },
}

/// Final result of one trial, as fed to the metrics. `init_loss` is the
/// loss of the shared starting solution, `final_loss` the harness-computed
/// loss of the trial's answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub sample_id: String,
    pub trial_index: usize,
    pub init_loss: f64,
    pub final_loss: f64,
    /// Exclusion reason; `None` means the trial counts toward metrics.
    pub excluded: Option<String>,
}

impl TrialOutcome {
    pub fn is_used(&self) -> bool {
        self.excluded.is_none()
    }
}

fn used(outcomes: &[TrialOutcome]) -> Vec<&TrialOutcome> {
    outcomes.iter().filter(|o| o.is_used()).collect()
}

fn sample_id_of(outcomes: &[TrialOutcome]) -> String {
    outcomes.first().map(|o| o.sample_id.clone()).unwrap_or_default()
}

/// Mean relative improvement over the initial solution:
/// `(1/N) Σ (init − final_i) / init`. Higher is better; 1 only when every
/// final loss is zero.
pub fn goal_metric(outcomes: &[TrialOutcome]) -> Result<f64, MetricsError> {
    let used = used(outcomes);
    if used.is_empty() {
        return Err(MetricsError::NoUsableTrials {
            sample_id: sample_id_of(outcomes),
        });
    }
    let init = used[0].init_loss;
    if init == 0.0 {
        return Err(MetricsError::DegenerateInitialLoss {
            sample_id: sample_id_of(outcomes),
        });
    }
    let sum: f64 = used.iter().map(|o| (init - o.final_loss) / init).sum();
    Ok(sum / used.len() as f64)
}

/// Mean relative gap to the ground-truth loss:
/// `(1/N) Σ (final_i − truth) / truth`. Zero means exact alignment;
/// negative means the model beat the oracle. Absent when the ground truth
/// is degenerate (below [`TRUTH_EPSILON`]).
pub fn policy_metric(
    outcomes: &[TrialOutcome],
    truth: f64,
) -> Result<Option<f64>, MetricsError> {
    let used = used(outcomes);
    if used.is_empty() {
        return Err(MetricsError::NoUsableTrials {
            sample_id: sample_id_of(outcomes),
        });
    }
    if truth < TRUTH_EPSILON {
        return Ok(None);
    }
    let sum: f64 = used.iter().map(|o| (o.final_loss - truth) / truth).sum();
    Ok(Some(sum / used.len() as f64))
}

/// Population variance of the final losses: `(1/N) Σ (final_i − mean)²`.
pub fn uncertainty_metric(outcomes: &[TrialOutcome]) -> Result<f64, MetricsError> {
    let used = used(outcomes);
    if used.is_empty() {
        return Err(MetricsError::NoUsableTrials {
            sample_id: sample_id_of(outcomes),
        });
    }
    let n = used.len() as f64;
    let mean: f64 = used.iter().map(|o| o.final_loss).sum::<f64>() / n;
    let var: f64 = used
        .iter()
        .map(|o| (o.final_loss - mean) * (o.final_loss - mean))
        .sum::<f64>()
        / n;
    Ok(var)
}

/// Divergence threshold for excluding excessively biased trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExclusionRule {
    /// Trials whose final loss exceeds this multiple of the initial loss
    /// are excluded.
    pub max_final_to_init_ratio: f64,
}

impl Default for ExclusionRule {
    fn default() -> Self {
        Self {
            max_final_to_init_ratio: 10.0,
        }
    }
}

/// Marks divergent trials excluded (parse failures arrive pre-marked from
/// the runner). At least one trial is always retained: if every trial would
/// be excluded, the worst offender is kept so the sample's metrics stay
/// defined and visibly bad.
pub fn exclude_outliers(mut outcomes: Vec<TrialOutcome>, rule: &ExclusionRule) -> Vec<TrialOutcome> {
    for o in &mut outcomes {
        if o.is_used() && o.final_loss > rule.max_final_to_init_ratio * o.init_loss {
            o.excluded = Some(format!(
                "final loss {} exceeds {} x initial loss {}",
                o.final_loss, rule.max_final_to_init_ratio, o.init_loss
            ));
        }
    }
    if !outcomes.is_empty() && outcomes.iter().all(|o| !o.is_used()) {
        let worst = outcomes
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.final_loss.total_cmp(&b.final_loss))
            .map(|(i, _)| i)
            .expect("non-empty");
        log::warn!(
            "sample {}: every trial was excluded; retaining trial {} (worst offender) to keep metrics defined",
            outcomes[worst].sample_id,
            outcomes[worst].trial_index
        );
        outcomes[worst].excluded = None;
    }
    outcomes
}

/// Per-sample metric values, ready for aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub sample_id: String,
    pub task: Task,
    pub dimension: usize,
    /// Absent for the non-iterative grid-search task and for samples that
    /// start at the optimum.
    pub goal: Option<f64>,
    /// Absent when the task has no ground truth or the truth is degenerate.
    pub policy: Option<f64>,
    pub uncertainty: f64,
    pub n_used: usize,
    pub n_excluded: usize,
}

/// Computes one sample's metrics from post-exclusion outcomes.
/// `truth` is `None` for tasks without ground truth.
pub fn sample_metrics(
    task: Task,
    dimension: usize,
    outcomes: &[TrialOutcome],
    truth: Option<f64>,
) -> Result<SampleMetrics, MetricsError> {
    let sample_id = sample_id_of(outcomes);
    let goal = if task == Task::GridSearch {
        // non-iterative task: no self-improvement to measure
        None
    } else {
        match goal_metric(outcomes) {
            Ok(g) => Some(g),
            Err(MetricsError::DegenerateInitialLoss { .. }) => {
                log::warn!("sample {sample_id}: initial loss is zero, goal metric omitted");
                None
            }
            Err(e) => return Err(e),
        }
    };
    let policy = match truth {
        Some(t) => policy_metric(outcomes, t)?,
        None => {
            // still enforce the shared precondition
            let _ = uncertainty_metric(outcomes)?;
            None
        }
    };
    let uncertainty = uncertainty_metric(outcomes)?;
    Ok(SampleMetrics {
        sample_id,
        task,
        dimension,
        goal,
        policy,
        uncertainty,
        n_used: outcomes.iter().filter(|o| o.is_used()).count(),
        n_excluded: outcomes.iter().filter(|o| !o.is_used()).count(),
    })
}

/// Mean and population std over the samples that carried a value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n_samples: usize,
}

impl Stat {
    fn compute(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Stat {
            mean,
            std: var.sqrt(),
            n_samples: values.len(),
        })
    }
}

/// One (task, dimension) row of the final report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub task: Task,
    pub dimension: usize,
    pub goal: Option<Stat>,
    pub policy: Option<Stat>,
    pub uncertainty: Stat,
    /// Total excluded trials across the group's samples.
    pub n_excluded: usize,
    /// Samples whose G / P value was absent and therefore skipped.
    pub goal_absent: usize,
    pub policy_absent: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<GroupRow>,
}

/// Aggregates per-sample metrics into per-(task, dimension) means and
/// population stds. Groups and samples are sorted canonically first, so the
/// result is identical regardless of input order.
pub fn aggregate(samples: &[SampleMetrics]) -> MetricReport {
    let mut groups: BTreeMap<(Task, usize), Vec<&SampleMetrics>> = BTreeMap::new();
    for s in samples {
        groups.entry((s.task, s.dimension)).or_default().push(s);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for ((task, dimension), mut group) in groups {
        group.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        let goals: Vec<f64> = group.iter().filter_map(|s| s.goal).collect();
        let policies: Vec<f64> = group.iter().filter_map(|s| s.policy).collect();
        let uncertainties: Vec<f64> = group.iter().map(|s| s.uncertainty).collect();
        let policy_absent = group.len() - policies.len();
        let goal_absent = group.len() - goals.len();
        if policy_absent > 0 {
            log::info!(
                "{task} d={dimension}: {policy_absent} of {} samples had no policy value",
                group.len()
            );
        }
        rows.push(GroupRow {
            task,
            dimension,
            goal: Stat::compute(&goals),
            policy: Stat::compute(&policies),
            uncertainty: Stat::compute(&uncertainties).expect("group is non-empty"),
            n_excluded: group.iter().map(|s| s.n_excluded).sum(),
            goal_absent,
            policy_absent,
        });
    }
    MetricReport { rows }
}

impl MetricReport {
    /// CSV with one line per (task, dimension, metric); absent metrics keep
    /// their row but leave the value cells empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,dimension,metric,mean,std,n_samples,n_excluded\n");
        for row in &self.rows {
            let mut push = |metric: &str, stat: Option<&Stat>| {
                let (mean, std, n) = match stat {
                    Some(s) => (s.mean.to_string(), s.std.to_string(), s.n_samples.to_string()),
                    None => (String::new(), String::new(), "0".into()),
                };
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    row.task, row.dimension, metric, mean, std, n, row.n_excluded
                ));
            };
            push("goal", row.goal.as_ref());
            push("policy", row.policy.as_ref());
            push("uncertainty", Some(&row.uncertainty));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn outcomes(init: f64, finals: &[f64]) -> Vec<TrialOutcome> {
        finals
            .iter()
            .enumerate()
            .map(|(i, &f)| TrialOutcome {
                sample_id: "s".into(),
                trial_index: i,
                init_loss: init,
                final_loss: f,
                excluded: None,
            })
            .collect()
    }

    #[test]
    fn goal_metric_examples() {
        assert_eq!(goal_metric(&outcomes(10.0, &[5.0; 5])).unwrap(), 0.5);
        assert_eq!(goal_metric(&outcomes(10.0, &[10.0; 3])).unwrap(), 0.0);
        assert_eq!(goal_metric(&outcomes(10.0, &[10.0, 0.0])).unwrap(), 0.5);
    }

    #[test]
    fn goal_metric_rejects_zero_initial_loss() {
        assert!(matches!(
            goal_metric(&outcomes(0.0, &[1.0])),
            Err(MetricsError::DegenerateInitialLoss { .. })
        ));
    }

    #[test]
    fn policy_metric_examples() {
        assert_eq!(policy_metric(&outcomes(1.0, &[4.0; 3]), 4.0).unwrap(), Some(0.0));
        assert_eq!(policy_metric(&outcomes(1.0, &[6.0, 2.0]), 4.0).unwrap(), Some(0.0));
        assert_eq!(policy_metric(&outcomes(1.0, &[2.0]), 4.0).unwrap(), Some(-0.5));
        // degenerate ground truth
        assert_eq!(policy_metric(&outcomes(1.0, &[2.0]), 0.0).unwrap(), None);
        assert_eq!(policy_metric(&outcomes(1.0, &[2.0]), 1e-12).unwrap(), None);
    }

    #[test]
    fn uncertainty_metric_examples() {
        assert_eq!(uncertainty_metric(&outcomes(1.0, &[7.0; 3])).unwrap(), 0.0);
        assert_eq!(uncertainty_metric(&outcomes(1.0, &[1.0, 3.0])).unwrap(), 1.0);
    }

    #[test]
    fn excluded_trials_do_not_count() {
        let mut o = outcomes(10.0, &[5.0, 0.0]);
        o[1].excluded = Some("parse failure".into());
        assert_eq!(goal_metric(&o).unwrap(), 0.5);
        let all_excluded: Vec<TrialOutcome> = o
            .into_iter()
            .map(|mut t| {
                t.excluded = Some("x".into());
                t
            })
            .collect();
        assert!(matches!(
            goal_metric(&all_excluded),
            Err(MetricsError::NoUsableTrials { .. })
        ));
    }

    #[test]
    fn exclusion_rule_drops_divergent_trials() {
        let o = exclude_outliers(outcomes(10.0, &[5.0, 5.0, 5.0, 5.0, 900.0]), &ExclusionRule::default());
        assert_eq!(o.iter().filter(|t| t.is_used()).count(), 4);
        assert!(o[4].excluded.is_some());

        let o = exclude_outliers(outcomes(10.0, &[5.0, 9.0]), &ExclusionRule::default());
        assert!(o.iter().all(|t| t.is_used()));
    }

    #[test]
    fn exclusion_never_empties_a_sample() {
        let o = exclude_outliers(outcomes(1.0, &[500.0, 900.0, 700.0]), &ExclusionRule::default());
        let kept: Vec<&TrialOutcome> = o.iter().filter(|t| t.is_used()).collect();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].final_loss, 900.0);
    }

    #[test]
    fn sample_metrics_shapes() {
        let o = outcomes(10.0, &[5.0, 5.0]);
        let m = sample_metrics(Task::GradientDescent, 3, &o, Some(5.0)).unwrap();
        assert_eq!(m.goal, Some(0.5));
        assert_eq!(m.policy, Some(0.0));
        assert_eq!(m.uncertainty, 0.0);
        assert_eq!((m.n_used, m.n_excluded), (2, 0));

        let grid = sample_metrics(Task::GridSearch, 3, &o, Some(5.0)).unwrap();
        assert_eq!(grid.goal, None);

        let bb = sample_metrics(Task::BlackBox, 3, &o, None).unwrap();
        assert_eq!(bb.policy, None);
    }

    fn sample(id: &str, task: Task, d: usize, g: Option<f64>, p: Option<f64>, u: f64) -> SampleMetrics {
        SampleMetrics {
            sample_id: id.into(),
            task,
            dimension: d,
            goal: g,
            policy: p,
            uncertainty: u,
            n_used: 5,
            n_excluded: 0,
        }
    }

    #[test]
    fn aggregate_mean_and_population_std() {
        let samples = vec![
            sample("a", Task::GradientDescent, 3, Some(0.2), Some(0.0), 1.0),
            sample("b", Task::GradientDescent, 3, Some(0.4), Some(0.0), 3.0),
        ];
        let report = aggregate(&samples);
        assert_eq!(report.rows.len(), 1);
        let g = report.rows[0].goal.unwrap();
        assert!((g.mean - 0.3).abs() < 1e-12);
        assert!((g.std - 0.1).abs() < 1e-12);
        assert_eq!(g.n_samples, 2);
    }

    #[test]
    fn aggregate_single_sample_has_zero_std() {
        let report = aggregate(&[sample("a", Task::HillClimbing, 6, Some(0.5), Some(0.1), 2.0)]);
        assert_eq!(report.rows[0].goal.unwrap().std, 0.0);
    }

    #[test]
    fn aggregate_reports_absent_policy() {
        let samples = vec![
            sample("a", Task::BlackBox, 3, Some(0.5), None, 0.0),
            sample("b", Task::BlackBox, 3, Some(0.7), None, 0.0),
        ];
        let report = aggregate(&samples);
        assert_eq!(report.rows[0].policy, None);
        assert_eq!(report.rows[0].policy_absent, 2);
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let mut samples = vec![
            sample("a", Task::GradientDescent, 3, Some(0.2), Some(0.1), 1.0),
            sample("b", Task::GradientDescent, 3, Some(0.4), Some(0.3), 3.0),
            sample("c", Task::HillClimbing, 6, Some(0.6), Some(0.5), 5.0),
        ];
        let forward = aggregate(&samples);
        samples.reverse();
        let backward = aggregate(&samples);
        assert_eq!(forward, backward);
        assert_eq!(forward.to_csv(), backward.to_csv());
    }

    #[test]
    fn csv_leaves_absent_values_empty() {
        let report = aggregate(&[sample("a", Task::BlackBox, 3, Some(0.5), None, 0.25)]);
        let csv = report.to_csv();
        assert!(csv.contains("black-box,3,policy,,,0,0"));
        assert!(csv.contains("black-box,3,uncertainty,0.25,0,1,0"));
    }

    proptest! {
        #[test]
        fn metrics_are_scale_invariant(
            init in 0.1f64..100.0,
            finals in proptest::collection::vec(0.0f64..100.0, 1..8),
            truth in 0.1f64..100.0,
            scale in 0.001f64..1000.0,
        ) {
            let base = outcomes(init, &finals);
            let scaled: Vec<TrialOutcome> = base
                .iter()
                .map(|o| TrialOutcome {
                    init_loss: o.init_loss * scale,
                    final_loss: o.final_loss * scale,
                    ..o.clone()
                })
                .collect();

            let g0 = goal_metric(&base).unwrap();
            let g1 = goal_metric(&scaled).unwrap();
            prop_assert!((g0 - g1).abs() <= 1e-12 * g0.abs().max(1.0));

            let p0 = policy_metric(&base, truth).unwrap().unwrap();
            let p1 = policy_metric(&scaled, truth * scale).unwrap().unwrap();
            prop_assert!((p0 - p1).abs() <= 1e-12 * p0.abs().max(1.0));

            let u0 = uncertainty_metric(&base).unwrap();
            let u1 = uncertainty_metric(&scaled).unwrap();
            prop_assert!((u1 - u0 * scale * scale).abs() <= 1e-9 * (u0 * scale * scale).max(1.0));
        }

        #[test]
        fn uncertainty_zero_iff_all_finals_equal(
            finals in proptest::collection::vec(0.0f64..50.0, 2..8),
        ) {
            let u = uncertainty_metric(&outcomes(1.0, &finals)).unwrap();
            let all_equal = finals.windows(2).all(|w| w[0] == w[1]);
            if all_equal {
                prop_assert_eq!(u, 0.0);
            } else {
                prop_assert!(u > 0.0);
            }
        }
    }
}
