//! Oracle checks run by `uavfl verify` and by the acceptance suite.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use uavfl_core::airphy::{normalize_gradients, simulate_round_with_gains, ChannelPhases, GradientBatch, NormalizeOptions};
use uavfl_core::mse::{
    self, estimate_correlation, mse_monte_carlo, objective_gradient, optimal_zeta, AggregationWeights, CorrelationMatrix,
    SingularFallback, WeightedStds,
};
use uavfl_core::rng::{derive_rng, derive_seed, SimRng};
use uavfl_core::sca::{coverage_bound, tangent_coefficients, SlackParams, TangentFormula};
use uavfl_core::GainMatrix;

/// Outcome of one check: the worst observed value against its limit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
    pub cases: usize,
}

impl CheckResult {
    fn new(name: &str, worst: f64, tolerance: f64, cases: usize) -> Self {
        Self {
            name: name.to_string(),
            passed: worst <= tolerance,
            worst,
            tolerance,
            cases,
        }
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: worst {:.3e} (limit {:.1e}, {} cases)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.cases
        )
    }
}

/// A random aggregation problem.
#[derive(Debug, Clone)]
pub struct Instance {
    pub stds: WeightedStds,
    pub corr: CorrelationMatrix,
    pub gains: GainMatrix,
    pub noise_power: f64,
}

fn normal(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Columns share a random common factor so the correlation is not diagonal.
fn correlated_batch(rng: &mut SimRng, dim: usize, devices: usize) -> GradientBatch {
    let common: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
    let mut g = DMatrix::zeros(dim, devices);
    for m in 0..devices {
        let share = rng.random::<f64>();
        let scale = 0.1 + rng.random::<f64>();
        let offset = normal(rng);
        for i in 0..dim {
            g[(i, m)] = offset + scale * (share * common[i] + (1.0 - share) * normal(rng));
        }
    }
    GradientBatch::new(g).expect("finite batch")
}

/// Random gains: each device is heard in a random subset of slots, and every
/// slot hears at least one device.
fn random_gains(rng: &mut SimRng, devices: usize, slots: usize) -> GainMatrix {
    let p = 0.1 + 0.5 * rng.random::<f64>();
    let mut k = DMatrix::from_fn(devices, slots, |_, _| {
        if rng.random::<f64>() < p {
            0.2 + rng.random::<f64>()
        } else {
            0.0
        }
    });
    for j in 0..slots {
        if k.column(j).iter().all(|&x| x == 0.0) {
            let m = rng.random_range(0..devices);
            k[(m, j)] = 0.2 + rng.random::<f64>();
        }
    }
    GainMatrix::from_matrix(k).expect("non-negative gains")
}

fn random_weights(rng: &mut SimRng, devices: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..devices).map(|_| 0.2 + rng.random::<f64>()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / sum).collect()
}

pub fn random_instance(seed: u64, max_devices: usize, max_slots: usize, dim: usize) -> Instance {
    let mut rng = derive_rng(seed, &[]);
    let devices = rng.random_range(1..=max_devices);
    let slots = rng.random_range(1..=max_slots);
    let batch = correlated_batch(&mut rng, dim, devices);
    let normalized = normalize_gradients(&batch, NormalizeOptions::default()).expect("columns vary");
    let weights = random_weights(&mut rng, devices);
    let stds = WeightedStds::new(DVector::from_fn(devices, |m, _| weights[m] * (0.5 + rng.random::<f64>())))
        .expect("positive stds");
    Instance {
        stds,
        corr: estimate_correlation(&normalized).expect("valid batch"),
        gains: random_gains(&mut rng, devices, slots),
        noise_power: 10f64.powf(-3.0 + 2.0 * rng.random::<f64>()),
    }
}

impl Instance {
    pub fn optimal_zeta(&self) -> AggregationWeights {
        optimal_zeta(&self.gains, &self.corr, &self.stds, self.noise_power, SingularFallback::Error)
            .expect("noisy problems are non-singular")
    }
}

/// Analytic MSE against the Monte-Carlo mean, relative error.
pub fn mse_oracle(instances: usize, trials: usize, dim: usize, seed: u64) -> CheckResult {
    let errors: Vec<f64> = (0..instances as u64)
        .into_par_iter()
        .map(|i| {
            let inst = random_instance(derive_seed(seed, &[1, i]), 20, 120, dim);
            let star = inst.optimal_zeta();
            // Perturb the optimum so the check is not confined to it.
            let mut rng = derive_rng(seed, &[2, i]);
            let zeta = AggregationWeights::new(star.vector().map(|z| z * (1.0 + 0.3 * normal(&mut rng))))
                .expect("finite weights");
            let analytic = mse::mse(&inst.stds, &inst.corr, &inst.gains, &zeta, inst.noise_power, dim).expect("dims agree");
            let mc = mse_monte_carlo(
                &inst.stds,
                &inst.corr,
                &inst.gains,
                &zeta,
                inst.noise_power,
                dim,
                trials,
                derive_seed(seed, &[3, i]),
            )
            .expect("dims agree");
            (mc - analytic).abs() / analytic
        })
        .collect();
    CheckResult::new("mse-monte-carlo", errors.iter().cloned().fold(0.0, f64::max), 0.02, instances)
}

/// Simulated noiseless `‖e‖²` against `D (υ − Kζ)ᵀ ρ̂ (υ − Kζ)`.
pub fn noiseless_exactness(instances: usize, dim: usize, seed: u64) -> CheckResult {
    let mut worst: f64 = 0.0;
    for i in 0..instances as u64 {
        let mut rng = derive_rng(seed, &[4, i]);
        let devices = rng.random_range(1..=20);
        let slots = rng.random_range(1..=120);
        let batch = correlated_batch(&mut rng, dim, devices);
        let gains = random_gains(&mut rng, devices, slots);
        let weights = random_weights(&mut rng, devices);
        let zeta: Vec<f64> = (0..slots).map(|_| normal(&mut rng) / slots as f64).collect();
        let phases = ChannelPhases::Random {
            seed: derive_seed(seed, &[5, i]),
        };
        let out = simulate_round_with_gains(&batch, &gains, &zeta, &weights, 0.0, 0, phases, NormalizeOptions::default())
            .expect("valid round");
        let stds = WeightedStds::from_batch(&out.normalized, &weights).expect("dims agree");
        let corr = estimate_correlation(&out.normalized).expect("valid batch");
        let zeta = AggregationWeights::new(DVector::from_vec(zeta)).expect("finite");
        let predicted = mse::mse(&stds, &corr, &gains, &zeta, 0.0, dim).expect("dims agree");
        let simulated = out.error_sq_norm();
        worst = worst.max((simulated - predicted).abs() / predicted.abs().max(f64::MIN_POSITIVE));
    }
    CheckResult::new("noiseless-exactness", worst, 1e-8, instances)
}

/// Largest relative excess of `mse(ζ*)` over `mse(ζ)` for random `ζ`; the
/// check passes when no random `ζ` does better.
pub fn zeta_optimality(instances: usize, samples: usize, seed: u64) -> CheckResult {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..instances as u64 {
        let inst = random_instance(derive_seed(seed, &[6, i]), 20, 120, 100);
        let star = inst.optimal_zeta();
        let best = mse::objective(&inst.stds, &inst.corr, &inst.gains, &star, inst.noise_power).expect("dims agree");
        let mut rng = derive_rng(seed, &[7, i]);
        let scale = 1.0 + star.vector().amax();
        for s in 0..samples {
            let v = if s % 2 == 0 {
                let step = 10f64.powf(-3.0 + 3.0 * rng.random::<f64>()) * scale;
                star.vector().map(|z| z + step * normal(&mut rng))
            } else {
                star.vector().map(|_| scale * normal(&mut rng))
            };
            let zeta = AggregationWeights::new(v).expect("finite");
            let value = mse::objective(&inst.stds, &inst.corr, &inst.gains, &zeta, inst.noise_power).expect("dims agree");
            worst = worst.max((best - value) / best);
        }
    }
    CheckResult::new("zeta-optimality", worst, 0.0, instances * samples)
}

/// Gradient norm at `ζ*` relative to `1 + ‖ζ*‖`.
pub fn zeta_stationarity(instances: usize, seed: u64) -> CheckResult {
    let mut worst: f64 = 0.0;
    for i in 0..instances as u64 {
        let inst = random_instance(derive_seed(seed, &[6, i]), 20, 120, 100);
        let star = inst.optimal_zeta();
        let g = objective_gradient(&inst.stds, &inst.corr, &inst.gains, &star, inst.noise_power).expect("dims agree");
        worst = worst.max(g.norm() / (1.0 + star.vector().norm()));
    }
    CheckResult::new("zeta-stationarity", worst, 1e-8, instances)
}

/// One device, one slot, `ρ = υ = K = σ² = 1`: the optimum is `2/3`.
pub fn zeta_hand_case() -> CheckResult {
    let zeta = optimal_zeta(
        &GainMatrix::from_matrix(DMatrix::from_element(1, 1, 1.0)).expect("valid"),
        &CorrelationMatrix::identity(1),
        &WeightedStds::new(DVector::from_element(1, 1.0)).expect("valid"),
        1.0,
        SingularFallback::Error,
    )
    .expect("non-singular");
    CheckResult::new("zeta-hand-case", (zeta.as_slice()[0] - 2.0 / 3.0).abs(), f64::EPSILON, 1)
}

fn random_squared_distance(rng: &mut SimRng, max: f64) -> f64 {
    // Half the draws concentrate near zero, where the bound bends most.
    if rng.random::<bool>() {
        max * rng.random::<f64>()
    } else {
        max * rng.random::<f64>().powi(4)
    }
}

/// Worst violation of `Ψ + Ψ′(s − s̃) ≤ f(s)`, relative to `f(s)`, and of
/// `Ψ = f(s̃)`.
pub fn tangent_bounds(params: &SlackParams, pairs: usize, max_s: f64, seed: u64) -> [CheckResult; 2] {
    let mut rng = derive_rng(seed, &[8]);
    let (mut above, mut touch): (f64, f64) = (0.0, 0.0);
    for _ in 0..pairs {
        let expansion = random_squared_distance(&mut rng, max_s);
        let s = random_squared_distance(&mut rng, max_s);
        let t = tangent_coefficients(expansion, params, TangentFormula::Exact);
        let f = coverage_bound(s, params);
        above = above.max((t.at(s) - f) / f);
        let f0 = coverage_bound(expansion, params);
        touch = touch.max((t.value - f0).abs() / f0);
    }
    [
        CheckResult::new("tangent-below-bound", above, 1e-12, pairs),
        CheckResult::new("tangent-touches-bound", touch, 1e-12, pairs),
    ]
}

/// Analytic slope against a central difference with step `10⁻⁴ max(1, s̃)`.
pub fn tangent_slope_fd(params: &SlackParams, points: usize, max_s: f64, seed: u64) -> CheckResult {
    let mut rng = derive_rng(seed, &[9]);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        // Keep the stencil inside the domain `s ≥ 0`.
        let s = random_squared_distance(&mut rng, max_s).max(1e-4);
        let h = 1e-4 * s.max(1.0);
        let fd = (coverage_bound(s + h, params) - coverage_bound(s - h, params)) / (2.0 * h);
        let slope = tangent_coefficients(s, params, TangentFormula::Exact).slope;
        worst = worst.max((slope - fd).abs() / fd.abs());
    }
    CheckResult::new("tangent-slope-finite-difference", worst, 1e-6, points)
}

/// Sizes for [`run_all`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyPlan {
    pub mse_instances: usize,
    pub mse_trials: usize,
    pub dim: usize,
    pub noiseless_instances: usize,
    pub zeta_instances: usize,
    pub zeta_samples: usize,
    pub tangent_pairs: usize,
    /// Largest squared horizontal distance sampled, m².
    pub max_squared_distance: f64,
    pub seed: u64,
}

impl Default for VerifyPlan {
    fn default() -> Self {
        Self {
            mse_instances: 50,
            mse_trials: 10_000,
            dim: 100,
            noiseless_instances: 20,
            zeta_instances: 50,
            zeta_samples: 100,
            tangent_pairs: 1000,
            max_squared_distance: 8e6,
            seed: 0,
        }
    }
}

pub fn run_all(params: &SlackParams, plan: &VerifyPlan) -> Vec<CheckResult> {
    let [below, touch] = tangent_bounds(params, plan.tangent_pairs, plan.max_squared_distance, plan.seed);
    vec![
        mse_oracle(plan.mse_instances, plan.mse_trials, plan.dim, plan.seed),
        noiseless_exactness(plan.noiseless_instances, plan.dim, plan.seed),
        zeta_optimality(plan.zeta_instances, plan.zeta_samples, plan.seed),
        zeta_stationarity(plan.zeta_instances, plan.seed),
        zeta_hand_case(),
        below,
        touch,
        tangent_slope_fd(params, plan.tangent_pairs, plan.max_squared_distance, plan.seed),
    ]
}
