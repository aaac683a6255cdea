//! The round loop: local updates, aggregation under each scheme, and the
//! gradient step, repeated over rounds and Monte-Carlo trials.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::DVector;
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

use super::data::{gaussian_mixture, MixtureSpec};
use super::task::{Federation, LearningTask};
use crate::airphy::{
    ideal_aggregate, normalize_gradients, simulate_round_with_gains, ChannelPhases, GradientBatch, NormalizeOptions,
};
use crate::baseline::{start_anchored_circle, static_ps, tuned_circle, CircleSearch};
use crate::geometry::{gain_matrix, GainMatrix, Trajectory};
use crate::mse::{self, estimate_correlation, AggregationWeights, CorrelationMatrix, SingularFallback, WeightedStds};
use crate::optimizer::optimize;
use crate::rng::{self, stream};
use crate::scenario::Scenario;
use crate::{Error, Result};

/// How the server aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    /// Exact weighted sum of the local gradients.
    ErrorFree,
    /// Aerial-equivalent server hovering at the barycenter, coverage waived.
    StaticPs,
    /// Tuned circular flight.
    Circular,
    /// Trajectory from the alternating optimizer.
    Optimized,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::ErrorFree, Scheme::StaticPs, Scheme::Circular, Scheme::Optimized];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::ErrorFree => "error-free",
            Scheme::StaticPs => "static-ps",
            Scheme::Circular => "circular",
            Scheme::Optimized => "optimized",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::invalid("schemes", alloc::format!("unknown scheme `{s}`")))
    }
}

/// When the geometry of the flying schemes is refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reoptimize {
    /// In the first round only.
    Once,
    /// In every round whose index is a multiple of `k`, warm-started from the
    /// previous solution.
    Every(usize),
}

impl Default for Reoptimize {
    fn default() -> Self {
        Reoptimize::Every(1)
    }
}

impl Reoptimize {
    fn due(self, round: usize) -> bool {
        match self {
            Reoptimize::Once => round == 0,
            Reoptimize::Every(k) => round % k.max(1) == 0,
        }
    }
}

/// Which correlation estimate the combining weights of a round are solved
/// with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrelationSource {
    /// The round's own empirical correlation of the normalized gradients.
    #[default]
    Current,
    /// The estimate from the last geometry refresh.
    Stale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub trials: usize,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    pub reoptimize: Reoptimize,
    pub correlation: CorrelationSource,
    pub circle_search: CircleSearch,
    /// Headings and radii of the start-anchored circles the optimizer is
    /// initialized from.
    pub anchor_directions: usize,
    pub anchor_radii: usize,
    pub mixture: MixtureSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            trials: 1,
            seed: 0,
            schemes: Scheme::ALL.to_vec(),
            reoptimize: Reoptimize::default(),
            correlation: CorrelationSource::default(),
            circle_search: CircleSearch::default(),
            anchor_directions: 16,
            anchor_radii: 8,
            mixture: MixtureSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be at least 1"));
        }
        if self.schemes.is_empty() {
            return Err(Error::invalid("schemes", "at least one scheme is required"));
        }
        if let Reoptimize::Every(0) = self.reoptimize {
            return Err(Error::invalid("optimizer.reoptimize_every", "must be at least 1"));
        }
        if self.anchor_directions == 0 || self.anchor_radii == 0 {
            return Err(Error::invalid("optimizer.anchor", "directions and radii must be at least 1"));
        }
        Ok(())
    }

    /// Seed of everything random in trial `trial`.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        rng::derive_seed(self.seed, &[stream::TRIAL, trial as u64])
    }
}

/// Per-round, per-scheme record.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub trial: usize,
    pub round: usize,
    pub scheme: Scheme,
    /// Test accuracy after the round's update.
    pub accuracy: f64,
    /// Global training loss after the round's update.
    pub train_loss: f64,
    /// Realized `‖e‖²` of the aggregate.
    pub error_sq_norm: f64,
    /// Expected `‖e‖²` under the round's empirical correlation.
    pub analytic_mse: f64,
    /// Outer iterations of the optimizer when it ran this round, else zero.
    pub optimizer_iters: usize,
}

/// Geometry and statistics a scheme carries between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeState {
    pub scheme: Scheme,
    pub trajectory: Option<Trajectory>,
    pub gains: Option<GainMatrix>,
    /// Correlation estimate from the last refresh.
    pub corr: Option<CorrelationMatrix>,
}

impl SchemeState {
    pub fn new(scheme: Scheme) -> Self {
        Self {
            scheme,
            trajectory: None,
            gains: None,
            corr: None,
        }
    }

    /// Rebuilds the scheme's geometry for the given statistics; returns the
    /// optimizer's outer iterations.
    fn refresh(
        &mut self,
        scenario: &Scenario,
        corr: CorrelationMatrix,
        stds: &WeightedStds,
        config: &ExperimentConfig,
    ) -> Result<usize> {
        let mut iters = 0;
        match self.scheme {
            Scheme::ErrorFree => {}
            Scheme::StaticPs => {
                if self.gains.is_none() {
                    self.gains = Some(static_ps(scenario, &corr, stds)?.gains);
                }
            }
            Scheme::Circular => {
                let best = tuned_circle(scenario, &corr, stds, &config.circle_search)?;
                self.gains = Some(best.rounded.gains);
                self.trajectory = Some(best.trajectory);
            }
            Scheme::Optimized => {
                let initial = match self.trajectory.take() {
                    Some(t) => t,
                    None => {
                        start_anchored_circle(scenario, &corr, stds, config.anchor_directions, config.anchor_radii)?
                            .trajectory
                    }
                };
                let res = optimize(scenario, &corr, stds, &initial)?;
                iters = res.iterations;
                self.gains = Some(gain_matrix(&res.trajectory, scenario));
                self.trajectory = Some(res.trajectory);
            }
        }
        self.corr = Some(corr);
        Ok(iters)
    }
}

/// Aggregated gradient plus the realized and expected error.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub estimate: DVector<f64>,
    pub error_sq_norm: f64,
    pub analytic_mse: f64,
    pub optimizer_iters: usize,
}

fn fallback(scenario: &Scenario) -> SingularFallback {
    if scenario.optimizer.min_norm_fallback {
        SingularFallback::MinimumNorm
    } else {
        SingularFallback::Error
    }
}

/// Aggregates one round's local updates under `state`'s scheme, refreshing the
/// scheme first when `refresh` is set or it has never been configured.
pub fn aggregate(
    batch: &GradientBatch,
    scenario: &Scenario,
    state: &mut SchemeState,
    refresh: bool,
    round_seed: u64,
    config: &ExperimentConfig,
) -> Result<Aggregate> {
    let weights = scenario.weights();
    if state.scheme == Scheme::ErrorFree {
        return Ok(Aggregate {
            estimate: ideal_aggregate(batch, weights)?,
            error_sq_norm: 0.0,
            analytic_mse: 0.0,
            optimizer_iters: 0,
        });
    }
    let opts = NormalizeOptions { allow_constant: true };
    let normalized = normalize_gradients(batch, opts)?;
    let stds = WeightedStds::from_batch(&normalized, weights)?;
    let current = estimate_correlation(&normalized)?;
    let optimizer_iters = if refresh || state.gains.is_none() {
        state.refresh(scenario, current.clone(), &stds, config)?
    } else {
        0
    };
    let gains = state.gains.as_ref().expect("refreshed above");
    let corr = match config.correlation {
        CorrelationSource::Current => &current,
        CorrelationSource::Stale => state.corr.as_ref().expect("refreshed above"),
    };
    let sigma2 = scenario.channel.noise_power;
    let zeta = if corr.is_zero() {
        AggregationWeights::zeros(gains.slots())
    } else {
        mse::optimal_zeta(gains, corr, &stds, sigma2, fallback(scenario))?
    };
    let noise_seed = rng::derive_seed(round_seed, &[stream::NOISE]);
    let out = simulate_round_with_gains(
        batch,
        gains,
        zeta.as_slice(),
        weights,
        sigma2,
        noise_seed,
        ChannelPhases::Random { seed: noise_seed },
        opts,
    )?;
    let error_sq_norm = out.error_sq_norm();
    Ok(Aggregate {
        estimate: DVector::from_vec(out.estimate),
        error_sq_norm,
        analytic_mse: mse::mse(&stds, &current, gains, &zeta, sigma2, batch.dim())?,
        optimizer_iters,
    })
}

/// One round for one scheme: local updates at `w`, aggregation, and the step
/// `w − η ĝ`.
#[allow(clippy::too_many_arguments)]
pub fn run_round(
    fed: &Federation,
    scenario: &Scenario,
    state: &mut SchemeState,
    w: &DVector<f64>,
    trial: usize,
    round: usize,
    round_seed: u64,
    config: &ExperimentConfig,
) -> Result<(DVector<f64>, RoundLog)> {
    let batch = fed.compute_local_updates(w, round_seed)?;
    let agg = aggregate(&batch, scenario, state, config.reoptimize.due(round), round_seed, config)?;
    let next = w - agg.estimate * fed.task.learning_rate;
    let log = RoundLog {
        trial,
        round,
        scheme: state.scheme,
        accuracy: fed.test_accuracy(&next),
        train_loss: fed.global_loss(&next)?,
        error_sq_norm: agg.error_sq_norm,
        analytic_mse: agg.analytic_mse,
        optimizer_iters: agg.optimizer_iters,
    };
    Ok((next, log))
}

/// A trial's federation, starting point and server geometry, with device
/// weights taken from the data partition.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSetup {
    pub trial: usize,
    pub seed: u64,
    pub federation: Federation,
    pub scenario: Scenario,
    pub init: DVector<f64>,
}

impl TrialSetup {
    /// Draws a fresh dataset and partition for trial `trial`.
    pub fn generate(scenario: &Scenario, task: &LearningTask, config: &ExperimentConfig, trial: usize) -> Result<Self> {
        let seed = config.trial_seed(trial);
        let (train, test) = gaussian_mixture(&config.mixture, rng::derive_seed(seed, &[stream::DATA]))?;
        let federation = Federation::new(
            task.clone(),
            &train,
            test,
            scenario.num_devices(),
            rng::derive_seed(seed, &[stream::PARTITION]),
        )?;
        Self::from_federation(scenario, federation, trial, seed)
    }

    pub fn from_federation(scenario: &Scenario, federation: Federation, trial: usize, seed: u64) -> Result<Self> {
        Error::check_len("devices in the partition", scenario.num_devices(), federation.devices())?;
        let scenario = scenario.with_weights(federation.weights().to_vec())?;
        let init = federation.task.model.init(rng::derive_seed(seed, &[stream::INIT]));
        Ok(Self {
            trial,
            seed,
            federation,
            scenario,
            init,
        })
    }
}

/// All rounds of one trial for every scheme. Schemes share the round seeds, so
/// mini-batches and receiver noise are common across them.
pub fn run_trial(setup: &TrialSetup, config: &ExperimentConfig) -> Result<Vec<RoundLog>> {
    let fed = &setup.federation;
    let mut logs = Vec::with_capacity(fed.task.rounds * config.schemes.len());
    for &scheme in &config.schemes {
        let mut state = SchemeState::new(scheme);
        let mut w = setup.init.clone();
        for round in 0..fed.task.rounds {
            let round_seed = rng::derive_seed(setup.seed, &[stream::ROUND, round as u64]);
            let (next, log) = run_round(fed, &setup.scenario, &mut state, &w, setup.trial, round, round_seed, config)?;
            w = next;
            logs.push(log);
        }
    }
    Ok(logs)
}

/// Mean and sample standard deviation across trials for one scheme and round.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub round: usize,
    pub trials: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub train_loss_mean: f64,
    pub error_sq_norm_mean: f64,
    pub analytic_mse_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub logs: Vec<RoundLog>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentReport {
    /// Summary row of `scheme` at the last round.
    pub fn final_row(&self, scheme: Scheme) -> Option<&SummaryRow> {
        self.summary.iter().filter(|r| r.scheme == scheme).max_by_key(|r| r.round)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Groups logs by scheme and round, in order of first appearance of each scheme.
pub fn summarize(logs: &[RoundLog]) -> Vec<SummaryRow> {
    let mut schemes: Vec<Scheme> = Vec::new();
    for l in logs {
        if !schemes.contains(&l.scheme) {
            schemes.push(l.scheme);
        }
    }
    let mut rows = Vec::new();
    for scheme in schemes {
        let rounds = logs.iter().filter(|l| l.scheme == scheme).map(|l| l.round + 1).max().unwrap_or(0);
        for round in 0..rounds {
            let sel: Vec<&RoundLog> = logs.iter().filter(|l| l.scheme == scheme && l.round == round).collect();
            if sel.is_empty() {
                continue;
            }
            let col = |f: fn(&RoundLog) -> f64| sel.iter().map(|l| f(l)).collect::<Vec<f64>>();
            let (accuracy_mean, accuracy_std) = mean_std(&col(|l| l.accuracy));
            rows.push(SummaryRow {
                scheme,
                round,
                trials: sel.len(),
                accuracy_mean,
                accuracy_std,
                train_loss_mean: mean_std(&col(|l| l.train_loss)).0,
                error_sq_norm_mean: mean_std(&col(|l| l.error_sq_norm)).0,
                analytic_mse_mean: mean_std(&col(|l| l.analytic_mse)).0,
            });
        }
    }
    rows
}

/// Sequential driver over trials. Trials are independent, so callers with
/// threads can map [`run_trial`] over [`TrialSetup::generate`] instead and
/// pass the concatenated logs to [`summarize`].
pub fn run_experiment(scenario: &Scenario, task: &LearningTask, config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    task.validate()?;
    let mut logs = Vec::new();
    for trial in 0..config.trials {
        let setup = TrialSetup::generate(scenario, task, config, trial)?;
        logs.extend(run_trial(&setup, config)?);
    }
    let summary = summarize(&logs);
    Ok(ExperimentReport { logs, summary })
}

/// Comma-separated scheme list such as `error-free,optimized`.
pub fn parse_schemes(list: &str) -> Result<Vec<Scheme>> {
    let schemes: Vec<Scheme> = list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
    if schemes.is_empty() {
        return Err(Error::invalid("schemes", String::from("at least one scheme is required")));
    }
    Ok(schemes)
}
