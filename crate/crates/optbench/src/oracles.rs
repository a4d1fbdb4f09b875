//! Exact reference implementations of the four search tasks.
//!
//! These produce the ground-truth traces and `loss_truth` values the policy
//! metric compares model output against. All functions are pure.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TaskConfig;
use crate::domain::{mse_loss, DomainError, LossValue, ProblemInstance, Solution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    GradientDescent,
    HillClimbing,
    GridSearch,
    BlackBox,
}

impl Task {
    pub const ALL: [Task; 4] = [
        Task::GradientDescent,
        Task::HillClimbing,
        Task::GridSearch,
        Task::BlackBox,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::GradientDescent => "gradient-descent",
            Task::HillClimbing => "hill-climbing",
            Task::GridSearch => "grid-search",
            Task::BlackBox => "black-box",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gradient-descent" | "gd" => Ok(Task::GradientDescent),
            "hill-climbing" | "hc" => Ok(Task::HillClimbing),
            "grid-search" | "grid" => Ok(Task::GridSearch),
            "black-box" | "bb" => Ok(Task::BlackBox),
            other => Err(format!(
                "unknown task '{other}' (expected gradient-descent, hill-climbing, grid-search or black-box)"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("grid too large: {count} points exceed the cap of {cap}")]
    GridTooLarge { count: String, cap: u64 },
    #[error("the black-box task has no ground truth")]
    NoGroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleStep {
    pub solution: Solution,
    pub loss: LossValue,
}

/// Ground-truth trajectory for one instance. `converged` marks the
/// hill-climbing local-optimum stop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTrace {
    pub task: Task,
    pub steps: Vec<OracleStep>,
    pub converged: bool,
}

impl OracleTrace {
    pub fn final_step(&self) -> &OracleStep {
        self.steps.last().expect("oracle trace is never empty")
    }

    pub fn final_loss(&self) -> LossValue {
        self.final_step().loss
    }
}

fn loss_of(instance: &ProblemInstance, s: &Solution) -> LossValue {
    mse_loss(instance, s).expect("arity checked by caller")
}

/// One gradient-descent update `point − lr · ∇loss`, with
/// `∇loss_i = (2/d)(ŷi − yi)` for the 1/d-normalized MSE. Dropping the 1/d
/// factor would change the effective learning rate by a factor of d.
pub fn gd_step(
    instance: &ProblemInstance,
    point: &Solution,
    lr: f64,
) -> Result<Solution, OracleError> {
    assert!(lr > 0.0, "learning rate must be positive");
    if point.len() != instance.d {
        return Err(DomainError::ArityMismatch {
            expected: instance.d,
            got: point.len(),
        }
        .into());
    }
    let scale = 2.0 / instance.d as f64;
    let next: Vec<f64> = point
        .values()
        .iter()
        .zip(&instance.y)
        .map(|(yhat, y)| yhat - lr * scale * (yhat - y))
        .collect();
    Ok(Solution::new(next)?)
}

/// Runs `iters` gradient-descent updates from `instance.init`, recording the
/// loss at every step. The first trace step is the starting point itself.
pub fn gd_run(instance: &ProblemInstance, lr: f64, iters: usize) -> OracleTrace {
    assert!(iters >= 1, "iteration count must be at least 1");
    let mut current = instance.init_solution();
    let mut steps = vec![OracleStep {
        loss: loss_of(instance, &current),
        solution: current.clone(),
    }];
    for _ in 0..iters {
        current = gd_step(instance, &current, lr).expect("arity preserved");
        steps.push(OracleStep {
            loss: loss_of(instance, &current),
            solution: current.clone(),
        });
    }
    OracleTrace {
        task: Task::GradientDescent,
        steps,
        converged: false,
    }
}

/// The 2d hill-climbing neighbors in canonical order: +1 then −1 on
/// coordinate 0, +1 then −1 on coordinate 1, and so on.
pub fn hc_neighbors(point: &Solution) -> Vec<Solution> {
    let mut out = Vec::with_capacity(2 * point.len());
    for i in 0..point.len() {
        for delta in [1.0, -1.0] {
            let mut values = point.values().to_vec();
            values[i] += delta;
            out.push(Solution::new(values).expect("finite +/- 1 stays finite"));
        }
    }
    out
}

/// Picks the minimum-loss neighbor. Returns the input point with
/// `improved = false` when no neighbor is strictly better; ties between
/// neighbors break toward the first in canonical order.
pub fn hc_step(instance: &ProblemInstance, point: &Solution) -> (Solution, bool) {
    let current_loss = loss_of(instance, point);
    let mut best: Option<(Solution, f64)> = None;
    for neighbor in hc_neighbors(point) {
        let loss = loss_of(instance, &neighbor).value();
        match &best {
            Some((_, best_loss)) if loss >= *best_loss => {}
            _ => best = Some((neighbor, loss)),
        }
    }
    match best {
        Some((neighbor, loss)) if loss < current_loss.value() => (neighbor, true),
        _ => (point.clone(), false),
    }
}

/// Hill climbs from `instance.init`, stopping early at a local optimum.
pub fn hc_run(instance: &ProblemInstance, iters: usize) -> OracleTrace {
    assert!(iters >= 1, "iteration count must be at least 1");
    let mut current = instance.init_solution();
    let mut steps = vec![OracleStep {
        loss: loss_of(instance, &current),
        solution: current.clone(),
    }];
    let mut converged = false;
    for _ in 0..iters {
        let (next, improved) = hc_step(instance, &current);
        if !improved {
            converged = true;
            break;
        }
        steps.push(OracleStep {
            loss: loss_of(instance, &next),
            solution: next.clone(),
        });
        current = next;
    }
    OracleTrace {
        task: Task::HillClimbing,
        steps,
        converged,
    }
}

/// Exact minimizer over the integer grid `{low..high}^d`.
///
/// The MSE is coordinate-separable, so each coordinate is the argmin of
/// `(g − yi)²` over `{low..high}` independently; ties break toward the
/// smaller integer. Equals brute-force enumeration wherever enumeration is
/// feasible.
pub fn grid_optimum(instance: &ProblemInstance, low: i64, high: i64) -> Solution {
    assert!(low <= high, "grid bounds must satisfy low <= high");
    let values: Vec<f64> = instance
        .y
        .iter()
        .map(|&y| {
            let floor = y.floor();
            // nearest integer, half-way cases toward the smaller one
            let nearest = if y - floor <= 0.5 { floor } else { floor + 1.0 };
            nearest.clamp(low as f64, high as f64)
        })
        .collect();
    Solution::new(values).expect("grid points are finite")
}

/// Lexicographic enumeration of `{low..high}^d` (last coordinate fastest).
#[derive(Debug)]
pub struct GridIter {
    low: i64,
    high: i64,
    current: Option<Vec<i64>>,
}

impl Iterator for GridIter {
    type Item = Solution;

    fn next(&mut self) -> Option<Solution> {
        let current = self.current.as_mut()?;
        let item = Solution::new(current.iter().map(|&v| v as f64).collect())
            .expect("grid points are finite");
        // advance the odometer, rightmost digit first
        let mut i = current.len();
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if current[i] < self.high {
                current[i] += 1;
                break;
            }
            current[i] = self.low;
        }
        Some(item)
    }
}

/// Uncapped grid iterator; callers bound their own consumption.
pub fn grid_iter(low: i64, high: i64, d: usize) -> GridIter {
    assert!(d >= 1, "dimension must be at least 1");
    assert!(low <= high, "grid bounds must satisfy low <= high");
    GridIter {
        low,
        high,
        current: Some(vec![low; d]),
    }
}

fn grid_point_count(low: i64, high: i64, d: usize) -> Option<u128> {
    let width = (high - low + 1) as u128;
    let mut count: u128 = 1;
    for _ in 0..d {
        count = count.checked_mul(width)?;
    }
    Some(count)
}

/// Streams all grid points, refusing grids larger than `cap` with an error
/// that names the offending count.
pub fn grid_enumerate(
    low: i64,
    high: i64,
    d: usize,
    cap: u64,
) -> Result<GridIter, OracleError> {
    assert!(d >= 1, "dimension must be at least 1");
    assert!(low <= high, "grid bounds must satisfy low <= high");
    let width = high - low + 1;
    match grid_point_count(low, high, d) {
        Some(count) if count <= u128::from(cap) => Ok(GridIter {
            low,
            high,
            current: Some(vec![low; d]),
        }),
        Some(count) => Err(OracleError::GridTooLarge {
            count: count.to_string(),
            cap,
        }),
        None => Err(OracleError::GridTooLarge {
            count: format!("{width}^{d}"),
            cap,
        }),
    }
}

/// Ground-truth final loss for the policy metric: the same-budget oracle run
/// for the iterative tasks, the exact grid optimum for grid search. The
/// black-box task has no ground truth.
pub fn reference_loss(
    task: Task,
    instance: &ProblemInstance,
    cfg: &TaskConfig,
) -> Result<LossValue, OracleError> {
    match task {
        Task::GradientDescent => Ok(gd_run(instance, cfg.lr, cfg.iterations).final_loss()),
        Task::HillClimbing => Ok(hc_run(instance, cfg.iterations).final_loss()),
        Task::GridSearch => {
            let best = grid_optimum(instance, cfg.grid_low, cfg.grid_high);
            Ok(mse_loss(instance, &best)?)
        }
        Task::BlackBox => Err(OracleError::NoGroundTruth),
    }
}

/// Reference trace for one (task, instance) pair, as emitted by the oracle
/// CLI subcommand.
pub fn oracle_trace(
    task: Task,
    instance: &ProblemInstance,
    cfg: &TaskConfig,
) -> Result<OracleTrace, OracleError> {
    match task {
        Task::GradientDescent => Ok(gd_run(instance, cfg.lr, cfg.iterations)),
        Task::HillClimbing => Ok(hc_run(instance, cfg.iterations)),
        Task::GridSearch => {
            let best = grid_optimum(instance, cfg.grid_low, cfg.grid_high);
            let loss = mse_loss(instance, &best)?;
            Ok(OracleTrace {
                task: Task::GridSearch,
                steps: vec![OracleStep {
                    solution: best,
                    loss,
                }],
                converged: true,
            })
        }
        Task::BlackBox => Err(OracleError::NoGroundTruth),
    }
}
