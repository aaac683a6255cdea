//! Reference schemes: a ground-equivalent static server at the barycenter and
//! circular flights.

use alloc::vec::Vec;

use core::f64::consts::PI;
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;
use rand::Rng;

use crate::geometry::{waived_coverage_gains, GainMatrix, Trajectory};
use crate::mse::{self, AggregationWeights, CorrelationMatrix, WeightedStds};
use crate::optimizer::{finalize_rounding, Rounded};
use crate::rng::{self, stream};
use crate::scenario::{barycenter, circular_trajectory, max_circle_radius, Point, Scenario};
use crate::{Error, Result};

/// Server hovering at the weighted barycenter with coverage waived.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticPs {
    pub location: Point,
    pub gains: GainMatrix,
    pub zeta: AggregationWeights,
    /// Per-dimension objective.
    pub objective: f64,
}

pub fn static_ps(scenario: &Scenario, corr: &CorrelationMatrix, stds: &WeightedStds) -> Result<StaticPs> {
    let location = barycenter(scenario.devices(), scenario.weights())?;
    let gains = waived_coverage_gains(location, scenario);
    let zeta = if corr.is_zero() {
        AggregationWeights::zeros(gains.slots())
    } else {
        let fb = if scenario.optimizer.min_norm_fallback {
            mse::SingularFallback::MinimumNorm
        } else {
            mse::SingularFallback::Error
        };
        mse::optimal_zeta(&gains, corr, stds, scenario.channel.noise_power, fb)?
    };
    let objective = mse::objective(stds, corr, &gains, &zeta, scenario.channel.noise_power)?;
    Ok(StaticPs {
        location,
        gains,
        zeta,
        objective,
    })
}

/// Grid and refinement sizes for the circle search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleSearch {
    /// Lattice points per axis over the device bounding box.
    pub centers_per_axis: usize,
    /// Radii evenly spaced in `(0, r_max]`, plus radius zero.
    pub radii: usize,
    /// Random perturbations of the best lattice candidate.
    pub refine_samples: usize,
    pub seed: u64,
}

impl Default for CircleSearch {
    fn default() -> Self {
        Self {
            centers_per_axis: 9,
            radii: 8,
            refine_samples: 48,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircleCandidate {
    pub center: Point,
    pub radius: f64,
    pub trajectory: Trajectory,
    pub rounded: Rounded,
}

fn evaluate(
    center: Point,
    radius: f64,
    scenario: &Scenario,
    corr: &CorrelationMatrix,
    stds: &WeightedStds,
) -> Result<CircleCandidate> {
    let trajectory = circular_trajectory(center, radius, &scenario.uav)?;
    let rounded = finalize_rounding(&trajectory, scenario, corr, stds)?;
    Ok(CircleCandidate {
        center,
        radius,
        trajectory,
        rounded,
    })
}

fn keep_best(best: &mut Option<CircleCandidate>, c: CircleCandidate) {
    if best.as_ref().is_none_or(|b| c.rounded.objective < b.rounded.objective) {
        *best = Some(c);
    }
}

/// Circle with center in the device bounding box and radius up to the speed
/// limit, chosen to minimize the rounded objective.
pub fn tuned_circle(
    scenario: &Scenario,
    corr: &CorrelationMatrix,
    stds: &WeightedStds,
    search: &CircleSearch,
) -> Result<CircleCandidate> {
    if search.centers_per_axis == 0 || search.radii == 0 {
        return Err(Error::invalid("circle search", "grid sizes must be at least 1"));
    }
    let devices = scenario.devices();
    let (mut lo, mut hi) = (devices[0], devices[0]);
    for d in devices {
        lo = lo.inf(d);
        hi = hi.sup(d);
    }
    let r_max = max_circle_radius(&scenario.uav).min((hi - lo).norm().max(1.0));
    let axis = |a: f64, b: f64, i: usize| {
        if search.centers_per_axis == 1 {
            0.5 * (a + b)
        } else {
            a + (b - a) * i as f64 / (search.centers_per_axis - 1) as f64
        }
    };
    let radii: Vec<f64> = (0..=search.radii)
        .map(|k| r_max * k as f64 / search.radii as f64)
        .collect();

    let mut best = None;
    for i in 0..search.centers_per_axis {
        for j in 0..search.centers_per_axis {
            let c = Point::new(axis(lo.x, hi.x, i), axis(lo.y, hi.y, j));
            for &r in &radii {
                keep_best(&mut best, evaluate(c, r, scenario, corr, stds)?);
            }
        }
    }

    let spacing = Point::new(
        (hi.x - lo.x) / search.centers_per_axis as f64,
        (hi.y - lo.y) / search.centers_per_axis as f64,
    );
    let dr = r_max / search.radii as f64;
    let mut rng = rng::derive_rng(search.seed, &[stream::SEARCH]);
    for _ in 0..search.refine_samples {
        let b = best.as_ref().expect("lattice is non-empty");
        let c = b.center
            + Point::new(
                spacing.x * (rng.random::<f64>() - 0.5),
                spacing.y * (rng.random::<f64>() - 0.5),
            );
        let r = (b.radius + dr * (rng.random::<f64>() - 0.5)).clamp(0.0, r_max);
        keep_best(&mut best, evaluate(c, r, scenario, corr, stds)?);
    }
    Ok(best.expect("lattice is non-empty"))
}

/// Best circle passing through the start point, over `directions` headings of
/// the center and `radii` radii; radius zero is hovering at the start.
pub fn start_anchored_circle(
    scenario: &Scenario,
    corr: &CorrelationMatrix,
    stds: &WeightedStds,
    directions: usize,
    radii: usize,
) -> Result<CircleCandidate> {
    let start = scenario.uav.start;
    let r_max = max_circle_radius(&scenario.uav);
    let mut best = None;
    keep_best(&mut best, evaluate(start, 0.0, scenario, corr, stds)?);
    for k in 1..=radii {
        let r = r_max * k as f64 / radii.max(1) as f64;
        for d in 0..directions {
            let phi = 2.0 * PI * d as f64 / directions.max(1) as f64;
            let center = start + Point::new(r * phi.cos(), r * phi.sin());
            keep_best(&mut best, evaluate(center, r, scenario, corr, stds)?);
        }
    }
    Ok(best.expect("hovering candidate always exists"))
}
