//! Alternating optimization of the trajectory/gains block and the combining
//! weights, followed by rounding the relaxed coverage back to binary.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::geometry::{coverage_matrix, gain_matrix, GainMatrix, Trajectory};
use crate::mse::{self, optimal_zeta, AggregationWeights, CorrelationMatrix, SingularFallback, WeightedStds};
use crate::sca::{coverage_bound, SlackParams};
use crate::scenario::Scenario;
use crate::subproblem::{solve_subproblem, BarrierSettings, SubproblemSpec};
use crate::{Error, Result};

/// One row of the optimizer trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub outer_iter: usize,
    /// Per-dimension objective `rᵀρr + (σ²/2)ζᵀζ` with the relaxed gains.
    pub objective: f64,
    /// Worst violation of `0 ≤ K ≤ f(‖u − v‖²)` and of the speed limit.
    pub max_constraint_violation: f64,
    pub zeta_norm: f64,
}

/// Binary coverage recovered from a trajectory, with exact gains and the
/// matching optimal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Rounded {
    pub coverage: DMatrix<u8>,
    pub gains: GainMatrix,
    pub zeta: AggregationWeights,
    /// Per-dimension objective.
    pub objective: f64,
}

impl Rounded {
    /// Expected `‖e‖²` for a `dim`-dimensional model.
    pub fn mse(&self, dim: usize) -> f64 {
        self.objective * dim as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    /// The iterate whose rounded objective is lowest.
    pub trajectory: Trajectory,
    /// Rounded solution at `trajectory`.
    pub rounded: Rounded,
    /// Outer iteration that produced `trajectory`; zero for the initialization.
    pub rounded_iter: usize,
    /// Last iterate of the relaxed problem, with its gains and weights.
    pub relaxed_trajectory: Trajectory,
    pub relaxed_gains: GainMatrix,
    pub relaxed_zeta: AggregationWeights,
    pub trace: Vec<TraceRow>,
    /// Outer iterations performed.
    pub iterations: usize,
    /// True when the fractional decrease fell below the tolerance.
    pub converged: bool,
    pub newton_steps: usize,
}

impl OptimizationResult {
    pub fn objective_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.objective).collect()
    }

    pub fn zeta(&self) -> &AggregationWeights {
        &self.rounded.zeta
    }

    pub fn gains(&self) -> &GainMatrix {
        &self.rounded.gains
    }

    pub fn coverage(&self) -> &DMatrix<u8> {
        &self.rounded.coverage
    }
}

/// `K_{m,n} = f(‖u[n] − v_m‖²)`: the gains with coverage relaxed.
pub fn relaxed_gains(traj: &Trajectory, scenario: &Scenario) -> GainMatrix {
    let p = SlackParams::from_scenario(scenario);
    let devices = scenario.devices();
    let k = DMatrix::from_fn(devices.len(), traj.slots(), |m, j| {
        coverage_bound((traj.slot(j + 1) - devices[m]).norm_squared(), &p)
    });
    GainMatrix::from_matrix(k).expect("relaxed bound is finite and non-negative")
}

fn fallback(scenario: &Scenario) -> SingularFallback {
    if scenario.optimizer.min_norm_fallback {
        SingularFallback::MinimumNorm
    } else {
        SingularFallback::Error
    }
}

fn weights_for(
    gains: &GainMatrix,
    scenario: &Scenario,
    corr: &CorrelationMatrix,
    stds: &WeightedStds,
) -> Result<AggregationWeights> {
    if corr.is_zero() {
        return Ok(AggregationWeights::zeros(gains.slots()));
    }
    optimal_zeta(gains, corr, stds, scenario.channel.noise_power, fallback(scenario))
}

fn violation(traj: &Trajectory, gains: &GainMatrix, scenario: &Scenario) -> f64 {
    let p = SlackParams::from_scenario(scenario);
    let mut worst = traj.speed_violation(scenario.uav.max_step());
    for (m, v) in scenario.devices().iter().enumerate() {
        for j in 0..gains.slots() {
            let k = gains.get(m, j);
            let cap = coverage_bound((traj.slot(j + 1) - v).norm_squared(), &p);
            worst = worst.max(k - cap).max(-k);
        }
    }
    worst
}

fn check_initial(traj: &Trajectory, scenario: &Scenario) -> Result<()> {
    traj.check(scenario.uav.max_step())?;
    if traj.slots() != scenario.uav.slots {
        return Err(Error::InfeasibleTrajectory(alloc::format!(
            "trajectory has {} slots, scenario expects {}",
            traj.slots(),
            scenario.uav.slots
        )));
    }
    if traj.start() != scenario.uav.start {
        return Err(Error::InfeasibleTrajectory(
            "trajectory must start and end at the configured start point".into(),
        ));
    }
    Ok(())
}

/// Binary coverage, exact gains and optimal weights at `traj`.
pub fn finalize_rounding(
    traj: &Trajectory,
    scenario: &Scenario,
    corr: &CorrelationMatrix,
    stds: &WeightedStds,
) -> Result<Rounded> {
    let gains = gain_matrix(traj, scenario);
    let zeta = weights_for(&gains, scenario, corr, stds)?;
    let objective = mse::objective(stds, corr, &gains, &zeta, scenario.channel.noise_power)?;
    Ok(Rounded {
        coverage: coverage_matrix(traj, scenario),
        gains,
        zeta,
        objective,
    })
}

/// Runs the alternating scheme from `initial` with relaxed gains
/// `f(‖u − v‖²)` and weights `initial_zeta`.
pub fn optimize_alternating(
    scenario: &Scenario,
    corr: &CorrelationMatrix,
    stds: &WeightedStds,
    initial: &Trajectory,
    initial_zeta: &AggregationWeights,
) -> Result<OptimizationResult> {
    check_initial(initial, scenario)?;
    Error::check_len("initial zeta", scenario.uav.slots, initial_zeta.len())?;
    let opts = &scenario.optimizer;
    let sigma2 = scenario.channel.noise_power;
    let settings = BarrierSettings::from_params(opts);

    let mut traj = initial.clone();
    let mut gains = relaxed_gains(&traj, scenario);
    let mut zeta = if corr.is_zero() {
        AggregationWeights::zeros(traj.slots())
    } else {
        initial_zeta.clone()
    };
    let mut objective = mse::objective(stds, corr, &gains, &zeta, sigma2)?;
    let row = |it: usize, obj: f64, t: &Trajectory, k: &GainMatrix, z: &AggregationWeights| TraceRow {
        outer_iter: it,
        objective: obj,
        max_constraint_violation: violation(t, k, scenario),
        zeta_norm: z.vector().norm(),
    };
    let mut trace = alloc::vec![row(0, objective, &traj, &gains, &zeta)];
    // Rounding can lose devices the relaxed gains still credit near the
    // coverage edge, so the relaxed objective does not order the rounded
    // ones; keep the best rounded iterate.
    let mut best = (finalize_rounding(&traj, scenario, corr, stds)?, traj.clone(), 0);
    let mut iterations = 0;
    let mut converged = corr.is_zero();
    let mut newton_steps = 0;

    if !converged {
        for it in 1..=opts.max_outer_iters {
            for _ in 0..opts.sca_refreshes {
                let spec = SubproblemSpec::new(&traj, &zeta, scenario, opts.tangent)?;
                // The previous gains satisfy the new bound up to rounding; clip
                // so the warm start is feasible as stated.
                let mut warm = gains.matrix().clone();
                warm.zip_apply(spec.values(), |k, cap| *k = k.min(cap));
                let warm = GainMatrix::from_matrix(warm)?;
                let sol = solve_subproblem(&spec, corr, stds, &warm, &settings)?;
                newton_steps += sol.newton_steps;
                gains = sol.gains;
                traj = sol.trajectory;
            }
            let mut next = mse::objective(stds, corr, &gains, &zeta, sigma2)?;
            let candidate = weights_for(&gains, scenario, corr, stds)?;
            let value = mse::objective(stds, corr, &gains, &candidate, sigma2)?;
            if value <= next {
                zeta = candidate;
                next = value;
            }
            // The subproblem only sees `Kζ̃`, so its gains are one point of a
            // flat optimal set and can sit well below the bound. Saturating them
            // at the bound is also feasible; keep it when the weight step then
            // does better.
            let saturated = relaxed_gains(&traj, scenario);
            let saturated_zeta = weights_for(&saturated, scenario, corr, stds)?;
            let value = mse::objective(stds, corr, &saturated, &saturated_zeta, sigma2)?;
            if value < next {
                gains = saturated;
                zeta = saturated_zeta;
                next = value;
            }
            trace.push(row(it, next, &traj, &gains, &zeta));
            iterations = it;
            let rounded = finalize_rounding(&traj, scenario, corr, stds)?;
            if rounded.objective < best.0.objective {
                best = (rounded, traj.clone(), it);
            }
            let decrease = if objective != 0.0 {
                (objective - next) / objective.abs()
            } else {
                0.0
            };
            objective = next;
            if decrease < opts.tolerance {
                converged = true;
                break;
            }
        }
    }

    let (rounded, trajectory, rounded_iter) = best;
    Ok(OptimizationResult {
        trajectory,
        rounded,
        rounded_iter,
        relaxed_trajectory: traj,
        relaxed_gains: gains,
        relaxed_zeta: zeta,
        trace,
        iterations,
        converged,
        newton_steps,
    })
}

/// [`optimize_alternating`] with the weights initialized optimally for the
/// relaxed gains of `initial`.
pub fn optimize(
    scenario: &Scenario,
    corr: &CorrelationMatrix,
    stds: &WeightedStds,
    initial: &Trajectory,
) -> Result<OptimizationResult> {
    check_initial(initial, scenario)?;
    let zeta = weights_for(&relaxed_gains(initial, scenario), scenario, corr, stds)?;
    optimize_alternating(scenario, corr, stds, initial, &zeta)
}
