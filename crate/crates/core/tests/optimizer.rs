use nalgebra::{DMatrix, DVector};

use uavfl_core::baseline::{start_anchored_circle, static_ps, tuned_circle, CircleSearch};
use uavfl_core::geometry::Trajectory;
use uavfl_core::mse::{objective, objective_gradient, optimal_zeta, CorrelationMatrix, SingularFallback, WeightedStds};
use uavfl_core::optimizer::{finalize_rounding, optimize, optimize_alternating, relaxed_gains};
use uavfl_core::scenario::{circular_trajectory, Point, Scenario};

/// Two small clusters, short flight.
fn small_scenario() -> Scenario {
    let devices = vec![
        Point::new(700.0, 50.0),
        Point::new(740.0, 90.0),
        Point::new(690.0, 120.0),
        Point::new(1000.0, -200.0),
        Point::new(1040.0, -230.0),
    ];
    let mut s = Scenario::paper_default().with_devices(devices, vec![0.2; 5]).unwrap();
    s.uav.slots = 30;
    s.optimizer.max_outer_iters = 15;
    s
}

fn stats(m: usize, c: f64) -> (CorrelationMatrix, WeightedStds) {
    let corr = CorrelationMatrix::new(DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { c })).unwrap();
    let stds = WeightedStds::new(DVector::from_element(m, 0.2)).unwrap();
    (corr, stds)
}

fn initial(s: &Scenario) -> Trajectory {
    circular_trajectory(s.uav.start + Point::new(-150.0, 0.0), 150.0, &s.uav).unwrap()
}

#[test]
fn zero_budget_returns_the_initialization() {
    let mut s = small_scenario();
    s.optimizer.max_outer_iters = 0;
    let (corr, stds) = stats(5, 0.5);
    let init = initial(&s);
    let r = optimize(&s, &corr, &stds, &init).unwrap();
    assert_eq!(r.trajectory, init);
    assert_eq!(r.iterations, 0);
    assert!(!r.converged);
    assert_eq!(r.trace.len(), 1);
    let k = relaxed_gains(&init, &s);
    let z = optimal_zeta(&k, &corr, &stds, s.channel.noise_power, SingularFallback::Error).unwrap();
    assert_eq!(r.trace[0].objective, objective(&stds, &corr, &k, &z, s.channel.noise_power).unwrap());
}

#[test]
fn trace_is_monotone_and_iterates_stay_feasible() {
    let s = small_scenario();
    let (corr, stds) = stats(5, 0.7);
    let r = optimize(&s, &corr, &stds, &initial(&s)).unwrap();
    assert!(r.iterations >= 1 && r.iterations <= s.optimizer.max_outer_iters);
    for pair in r.trace.windows(2) {
        assert!(pair[1].objective <= pair[0].objective + 1e-10, "{pair:?}");
    }
    for row in &r.trace {
        assert!(row.max_constraint_violation <= 1e-9, "{row:?}");
    }
    r.trajectory.check(s.uav.max_step()).unwrap();
    assert_eq!(r.trajectory.start(), s.uav.start);
    assert_eq!(*r.trajectory.points().last().unwrap(), s.uav.start);
    assert!(r.trace.last().unwrap().objective < r.trace[0].objective);
    assert!(r.rounded.objective.is_finite() && r.rounded.objective >= 0.0);
}

#[test]
fn weight_step_is_stationary() {
    let s = small_scenario();
    let (corr, stds) = stats(5, 0.3);
    let r = optimize(&s, &corr, &stds, &initial(&s)).unwrap();
    let g = objective_gradient(&stds, &corr, &r.relaxed_gains, &r.relaxed_zeta, s.channel.noise_power).unwrap();
    let z = r.relaxed_zeta.vector().norm();
    // The gradient is in units of K times the objective; compare on that scale.
    let scale = r.relaxed_gains.matrix().amax() * stds.vector().norm();
    assert!(g.norm() <= 1e-8 * (1.0 + z) * scale, "|grad| {} |zeta| {z}", g.norm());
    let g = objective_gradient(&stds, &corr, &r.rounded.gains, &r.rounded.zeta, s.channel.noise_power).unwrap();
    assert!(g.norm() <= 1e-8 * (1.0 + r.rounded.zeta.vector().norm()) * scale);
}

#[test]
fn single_device_is_served_from_overhead() {
    let device = Point::new(950.0, 40.0);
    let mut s = Scenario::paper_default().with_devices(vec![device], vec![1.0]).unwrap();
    s.uav.slots = 20;
    s.optimizer.max_outer_iters = 30;
    let (corr, stds) = stats(1, 0.0);
    let init = initial(&s);
    let before = finalize_rounding(&init, &s, &corr, &stds).unwrap();
    let r = optimize(&s, &corr, &stds, &init).unwrap();
    assert!(r.rounded.objective <= before.objective);

    // Best feasible flight: straight in at full speed, hover, straight back.
    let dist = (device - s.uav.start).norm();
    let step = s.uav.max_step();
    let dir = (device - s.uav.start) / dist;
    let mut pts = vec![s.uav.start; s.uav.slots + 1];
    for (n, p) in pts.iter_mut().enumerate().take(s.uav.slots).skip(1) {
        let reach = (n.min(s.uav.slots - n) as f64 * step).min(dist);
        *p = s.uav.start + dir * reach;
    }
    let direct = Trajectory::new(pts, step).unwrap();
    let best = finalize_rounding(&direct, &s, &corr, &stds).unwrap().objective;
    assert!(r.rounded.objective <= best * 1.02, "{} vs {best}", r.rounded.objective);
    for p in r.trajectory.points() {
        assert!((*p - device).norm() <= s.uav.coverage_radius);
    }
}

#[test]
fn zero_correlation_short_circuits() {
    let s = small_scenario();
    let corr = CorrelationMatrix::new(DMatrix::zeros(5, 5)).unwrap();
    let stds = WeightedStds::new(DVector::from_element(5, 0.2)).unwrap();
    let init = initial(&s);
    let r = optimize(&s, &corr, &stds, &init).unwrap();
    assert!(r.converged);
    assert_eq!(r.iterations, 0);
    assert_eq!(r.trajectory, init);
    assert!(r.zeta().vector().iter().all(|&z| z == 0.0));
    assert_eq!(r.rounded.objective, 0.0);
}

#[test]
fn coverage_boundary_is_inclusive() {
    let mut s = Scenario::paper_default()
        .with_devices(vec![Point::new(0.0, 0.0), Point::new(0.0, 158.0 + 1e-9)], vec![0.5, 0.5])
        .unwrap();
    s.uav.slots = 2;
    s.uav.start = Point::new(158.0, 0.0);
    let hover = Trajectory::hover(s.uav.start, 2);
    let (corr, stds) = stats(2, 0.5);
    let r = finalize_rounding(&hover, &s, &corr, &stds).unwrap();
    assert_eq!(r.coverage[(0, 0)], 1);
    assert_eq!(r.coverage[(1, 0)], 0);
    assert!(r.gains.get(0, 1) > 0.0 && r.gains.get(1, 1) == 0.0);
}

#[test]
fn rejects_trajectories_not_anchored_at_start() {
    let s = small_scenario();
    let (corr, stds) = stats(5, 0.5);
    let off = Trajectory::hover(s.uav.start + Point::new(1.0, 0.0), s.uav.slots);
    assert!(optimize(&s, &corr, &stds, &off).is_err());
    let short = Trajectory::hover(s.uav.start, s.uav.slots - 1);
    assert!(optimize(&s, &corr, &stds, &short).is_err());
    let z = uavfl_core::mse::AggregationWeights::zeros(3);
    assert!(optimize_alternating(&s, &corr, &stds, &initial(&s), &z).is_err());
}

#[test]
fn baselines_are_consistent() {
    let s = small_scenario();
    let (corr, stds) = stats(5, 0.6);
    let ps = static_ps(&s, &corr, &stds).unwrap();
    let bary = Point::new(
        s.devices().iter().map(|d| d.x).sum::<f64>() / 5.0,
        s.devices().iter().map(|d| d.y).sum::<f64>() / 5.0,
    );
    assert!((ps.location - bary).norm() < 1e-9);
    assert!(ps.gains.matrix().iter().all(|&k| k > 0.0), "coverage is waived");

    let search = CircleSearch {
        centers_per_axis: 4,
        radii: 3,
        refine_samples: 8,
        seed: 1,
    };
    let tuned = tuned_circle(&s, &corr, &stds, &search).unwrap();
    let again = tuned_circle(&s, &corr, &stds, &search).unwrap();
    assert_eq!(tuned, again);
    tuned.trajectory.check(s.uav.max_step()).unwrap();
    let anchored = start_anchored_circle(&s, &corr, &stds, 8, 3).unwrap();
    assert_eq!(anchored.trajectory.start(), s.uav.start);
    let hover = finalize_rounding(&Trajectory::hover(s.uav.start, s.uav.slots), &s, &corr, &stds).unwrap();
    assert!(anchored.rounded.objective <= hover.objective);
}
