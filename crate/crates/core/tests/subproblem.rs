use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

use uavfl_core::geometry::{GainMatrix, Trajectory};
use uavfl_core::mse::{AggregationWeights, CorrelationMatrix, WeightedStds};
use uavfl_core::rng::rng_from;
use uavfl_core::sca::{coverage_bound, tangent_coefficients, SlackParams, TangentFormula};
use uavfl_core::scenario::Point;
use uavfl_core::subproblem::{solve_subproblem, subproblem_objective, BarrierSettings, SubproblemSpec};

const PARAMS: SlackParams = SlackParams {
    coverage_radius: 158.0,
    altitude: 50.0,
    amplitude: 5.656854249492381e-4,
};

fn zeta(v: &[f64]) -> AggregationWeights {
    AggregationWeights::new(DVector::from_column_slice(v)).unwrap()
}

/// One device at the origin, UAV hovering at (100, 0) for two slots; only
/// `u[1]` is free.
fn one_free_slot(max_step: f64) -> (SubproblemSpec, Point) {
    let device = Point::new(0.0, 0.0);
    let start = Point::new(100.0, 0.0);
    let t = tangent_coefficients(1e4, &PARAMS, TangentFormula::Exact);
    let spec = SubproblemSpec::from_tangents(
        Trajectory::hover(start, 2),
        &zeta(&[1.0, 1.0]),
        vec![device],
        DMatrix::from_element(1, 2, t.value),
        DMatrix::from_element(1, 2, t.slope),
        max_step,
    )
    .unwrap();
    (spec, start)
}

fn grid_search(spec: &SubproblemSpec, start: Point, ups: f64) -> (f64, Point) {
    let mut best = (f64::INFINITY, start);
    for i in 0..200 {
        for j in 0..200 {
            let u = Point::new(-150.0 + 2.0 * i as f64, -200.0 + 2.0 * j as f64);
            if (u - start).norm() > spec.max_step() {
                continue;
            }
            let b1 = spec.bound(0, 1, u);
            if b1 < 0.0 {
                continue;
            }
            let p = b1 + spec.bound(0, 2, start);
            let w = ups.clamp(0.0, p);
            let obj = w * w - 2.0 * ups * w;
            if obj < best.0 {
                best = (obj, u);
            }
        }
    }
    best
}

fn check_against_grid(max_step: f64) {
    let ups = 10.0;
    let (spec, start) = one_free_slot(max_step);
    let warm = GainMatrix::from_matrix(spec.values() * 0.5).unwrap();
    let r = CorrelationMatrix::identity(1);
    let u = WeightedStds::new(DVector::from_element(1, ups)).unwrap();
    let out = solve_subproblem(&spec, &r, &u, &warm, &BarrierSettings::default()).unwrap();
    let (grid_obj, grid_u) = grid_search(&spec, start, ups);
    assert!(out.improved && out.converged);
    let u1 = out.trajectory.slot(1);
    assert!(out.objective <= grid_obj + 1e-7 * grid_obj.abs(), "{} vs {}", out.objective, grid_obj);
    assert!((u1 - grid_u).norm() <= 2.0 * 2f64.sqrt(), "{u1:?} vs {grid_u:?}");
    // Gains sit on their (tangent) upper bound.
    let b1 = spec.bound(0, 1, u1);
    assert!((out.gains.get(0, 0) - b1).abs() <= 1e-6 * b1);
}

#[test]
fn free_slot_moves_onto_device_when_reachable() {
    check_against_grid(500.0);
}

#[test]
fn free_slot_moves_toward_device_under_speed_limit() {
    check_against_grid(30.0);
}

/// Projected gradient on `K` for `min J(Kζ)` over the box `0 ≤ K ≤ Ψ`.
fn box_qp_oracle(psi: &DMatrix<f64>, z: &DVector<f64>, rho: &DMatrix<f64>, ups: &DVector<f64>) -> DVector<f64> {
    let lmax = rho.clone().symmetric_eigen().eigenvalues.max();
    let step = 1.0 / (2.0 * lmax * z.norm_squared());
    let mut k = psi * 0.5;
    for _ in 0..200_000 {
        let grad = (rho * (&k * z - ups)) * z.transpose() * 2.0;
        k -= grad * step;
        k.zip_apply(psi, |v, cap| *v = v.clamp(0.0, cap));
    }
    &k * z
}

#[test]
fn flat_bounds_reduce_to_box_qp() {
    let mut rng = rng_from(11);
    for _case in 0..5 {
        let (m, n) = (3, 4);
        let psi = DMatrix::from_fn(m, n, |_, _| 0.5 + rng.random::<f64>());
        let z = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 0.7);
        let a = DMatrix::from_fn(m, m, |_, _| rng.random::<f64>() - 0.5);
        let rho = &a * a.transpose() + DMatrix::identity(m, m) * 0.2;
        let ups = DVector::from_fn(m, |_, _| 2.0 * rng.random::<f64>());
        let devices = (0..m).map(|i| Point::new(100.0 * i as f64, 0.0)).collect();
        let spec = SubproblemSpec::from_tangents(
            Trajectory::hover(Point::new(0.0, 50.0), n),
            &AggregationWeights::new(z.clone()).unwrap(),
            devices,
            psi.clone(),
            DMatrix::zeros(m, n),
            10.0,
        )
        .unwrap();
        let corr = CorrelationMatrix::new(rho.clone()).unwrap();
        let stds = WeightedStds::new(ups.clone()).unwrap();
        let warm = GainMatrix::from_matrix(&psi * 0.5).unwrap();
        let settings = BarrierSettings {
            gap_tolerance: 1e-14,
            ..BarrierSettings::default()
        };
        let out = solve_subproblem(&spec, &corr, &stds, &warm, &settings).unwrap();
        let w = out.gains.matrix() * &z;
        let oracle = box_qp_oracle(&psi, &z, &rho, &ups);
        assert!((&w - &oracle).norm() <= 1e-6 * oracle.norm().max(1.0), "{w} vs {oracle}");
        assert!(out.gains.matrix().iter().zip(psi.iter()).all(|(k, c)| *k >= 0.0 && *k <= *c));
    }
}

#[test]
fn optimal_warm_start_is_a_fixed_point() {
    let (spec, _) = one_free_slot(500.0);
    let warm = GainMatrix::from_matrix(spec.values() * 0.5).unwrap();
    // υ equal to the warm start's Kζ: the objective's unconstrained minimum.
    let target = (warm.matrix() * spec.zeta())[0];
    let r = CorrelationMatrix::identity(1);
    let u = WeightedStds::new(DVector::from_element(1, target)).unwrap();
    let out = solve_subproblem(&spec, &r, &u, &warm, &BarrierSettings::default()).unwrap();
    let w = (out.gains.matrix() * spec.zeta())[0];
    assert!((w - target).abs() <= 1e-6 * target);
    assert!(out.objective <= out.warm_objective);
}

fn random_instance(seed: u64) -> (SubproblemSpec, CorrelationMatrix, WeightedStds, GainMatrix) {
    let mut rng = rng_from(seed);
    let (m, n) = (4, 12);
    let step = 40.0;
    let start = Point::new(0.0, 0.0);
    // A closed feasible polygon: out and back along a random heading.
    let heading = rng.random::<f64>() * std::f64::consts::TAU;
    let dir = Point::new(heading.cos(), heading.sin());
    let mut pts: Vec<Point> = (0..=n / 2).map(|k| start + dir * (step * 0.9 * k as f64)).collect();
    let back: Vec<Point> = pts[..n / 2].iter().rev().cloned().collect();
    pts.extend(back);
    let traj = Trajectory::new(pts, step).unwrap();
    let devices: Vec<Point> = (0..m)
        .map(|_| Point::new(rng.random_range(-400.0..400.0), rng.random_range(-400.0..400.0)))
        .collect();
    let z = DVector::from_fn(n, |_, _| rng.random::<f64>() * 1e5 - 2e4);
    let a = DMatrix::from_fn(m, m + 1, |_, _| rng.random::<f64>() - 0.3);
    let corr = CorrelationMatrix::new(&a * a.transpose()).unwrap();
    let stds = WeightedStds::new(DVector::from_fn(m, |_, _| rng.random::<f64>())).unwrap();
    let mut value = DMatrix::zeros(m, n);
    let mut slope = DMatrix::zeros(m, n);
    for (i, v) in devices.iter().enumerate() {
        for j in 0..n {
            let t = tangent_coefficients((traj.slot(j + 1) - v).norm_squared(), &PARAMS, TangentFormula::Exact);
            value[(i, j)] = t.value;
            slope[(i, j)] = t.slope;
        }
    }
    let spec = SubproblemSpec::from_tangents(traj, &AggregationWeights::new(z).unwrap(), devices, value.clone(), slope, step)
        .unwrap();
    let warm = GainMatrix::from_matrix(value * 0.7).unwrap();
    (spec, corr, stds, warm)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solution_is_feasible_and_no_worse(seed in 0u64..10_000) {
        let (spec, corr, stds, warm) = random_instance(seed);
        let out = solve_subproblem(&spec, &corr, &stds, &warm, &BarrierSettings::default()).unwrap();
        prop_assert!(out.trajectory.check(spec.max_step()).is_ok());
        prop_assert_eq!(out.trajectory.start(), spec.expansion().start());
        prop_assert!(out.objective <= out.warm_objective);
        let recomputed = subproblem_objective(&out.gains, spec.zeta(), &corr, &stds);
        prop_assert_eq!(recomputed, out.objective);
        let bounds = spec.bounds(&out.trajectory);
        for i in 0..spec.devices().len() {
            for j in 0..out.trajectory.slots() {
                let k = out.gains.get(i, j);
                let s = (out.trajectory.slot(j + 1) - spec.devices()[i]).norm_squared();
                prop_assert!(k >= 0.0);
                prop_assert!(k <= bounds[(i, j)] * (1.0 + 1e-12));
                prop_assert!(k <= coverage_bound(s, &PARAMS) * (1.0 + 1e-12));
            }
        }
    }
}
