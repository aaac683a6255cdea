//! Glue between a resolved configuration and the core algorithms.

use anyhow::Result;
use rayon::prelude::*;
use uavfl_core::airphy::{normalize_gradients, NormalizeOptions};
use uavfl_core::baseline::{start_anchored_circle, static_ps, tuned_circle, CircleCandidate, StaticPs};
use uavfl_core::learning::{run_trial, summarize, ExperimentReport, TrialSetup};
use uavfl_core::mse::{estimate_correlation, CorrelationMatrix, WeightedStds};
use uavfl_core::optimizer::{optimize, OptimizationResult};
use uavfl_core::rng::{derive_seed, stream};
use uavfl_core::Scenario;

use crate::config::Resolved;

/// Gradient statistics the trajectory is optimized for: the local updates of
/// trial 0, round 0, with the partition's device weights.
#[derive(Debug, Clone)]
pub struct RoundZero {
    pub scenario: Scenario,
    pub stds: WeightedStds,
    pub corr: CorrelationMatrix,
    pub dim: usize,
}

pub fn round_zero(resolved: &Resolved) -> Result<RoundZero> {
    let setup = TrialSetup::generate(&resolved.scenario, &resolved.task, &resolved.experiment, 0)?;
    let round_seed = derive_seed(setup.seed, &[stream::ROUND, 0]);
    let batch = setup.federation.compute_local_updates(&setup.init, round_seed)?;
    let normalized = normalize_gradients(&batch, NormalizeOptions { allow_constant: true })?;
    Ok(RoundZero {
        stds: WeightedStds::from_batch(&normalized, setup.scenario.weights())?,
        corr: estimate_correlation(&normalized)?,
        dim: batch.dim(),
        scenario: setup.scenario,
    })
}

/// The alternating optimizer started from the best start-anchored circle.
pub fn optimize_trajectory(rz: &RoundZero, resolved: &Resolved) -> Result<OptimizationResult> {
    let e = &resolved.experiment;
    let initial = start_anchored_circle(&rz.scenario, &rz.corr, &rz.stds, e.anchor_directions, e.anchor_radii)?;
    Ok(optimize(&rz.scenario, &rz.corr, &rz.stds, &initial.trajectory)?)
}

pub fn baselines(rz: &RoundZero, resolved: &Resolved) -> Result<(StaticPs, CircleCandidate)> {
    let fixed = static_ps(&rz.scenario, &rz.corr, &rz.stds)?;
    let circle = tuned_circle(&rz.scenario, &rz.corr, &rz.stds, &resolved.experiment.circle_search)?;
    Ok((fixed, circle))
}

/// All trials, in parallel; logs come back in trial order.
pub fn simulate(resolved: &Resolved) -> Result<ExperimentReport> {
    resolved.experiment.validate()?;
    resolved.task.validate()?;
    let per_trial = (0..resolved.experiment.trials)
        .into_par_iter()
        .map(|trial| {
            let setup = TrialSetup::generate(&resolved.scenario, &resolved.task, &resolved.experiment, trial)?;
            Ok(run_trial(&setup, &resolved.experiment)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let logs: Vec<_> = per_trial.into_iter().flatten().collect();
    let summary = summarize(&logs);
    Ok(ExperimentReport { logs, summary })
}
