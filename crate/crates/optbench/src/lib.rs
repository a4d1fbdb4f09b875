//! Benchmark harness that evaluates chat models as iterative numerical
//! optimizers on four tasks — gradient descent, hill climbing, grid search,
//! and black-box search — and scores them against exact oracle
//! implementations with goal, policy, and uncertainty metrics.

pub mod config;
pub mod domain;
pub mod exec;
pub mod llm;
pub mod metrics;
pub mod oracles;
pub mod prompts;
pub mod runner;

pub use config::{BackendConfig, BackendKind, ExperimentConfig, TaskConfig};
pub use domain::{gen_dataset, make_instance, mse_loss, Dataset, LossValue, ProblemInstance, Solution};
pub use oracles::Task;
pub use runner::Runner;
