//! Federated learning on top of the aggregation pipeline: data, models, local
//! training, the round loop, and the convergence bound.

pub mod bound;
pub mod data;
pub mod harness;
pub mod model;
pub mod task;

pub use bound::{convergence_bound, quadratic_constants, QuadraticConstants};
pub use data::{gaussian_mixture, partition, Dataset, MixtureSpec, Partition};
pub use harness::{
    run_experiment, run_trial, summarize, CorrelationSource, ExperimentConfig, ExperimentReport, Reoptimize, RoundLog, Scheme,
    SchemeState, SummaryRow, TrialSetup,
};
pub use model::{LossFamily, Model};
pub use task::{Federation, LearningTask, UpdateMode};
