use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use uavfl_core::airphy::{ideal_aggregate, GradientBatch};
use uavfl_core::learning::harness::aggregate;
use uavfl_core::learning::*;
use uavfl_core::rng::rng_from;
use uavfl_core::scenario::{Point, Scenario};

fn mixture(seed: u64) -> (Dataset, Dataset) {
    let spec = MixtureSpec {
        classes: 4,
        features: 5,
        train_per_class: 30,
        test_per_class: 10,
        separation: 1.0,
    };
    gaussian_mixture(&spec, seed).unwrap()
}

fn task(model: Model, mode: UpdateMode) -> LearningTask {
    LearningTask {
        model,
        partition: Partition::Iid,
        learning_rate: 0.1,
        momentum: 0.0,
        mode,
        rounds: 3,
    }
}

fn random_vector(dim: usize, scale: f64, seed: u64) -> DVector<f64> {
    let mut rng = rng_from(seed);
    DVector::from_fn(dim, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

#[test]
fn gradients_match_central_differences() {
    let (train, _) = mixture(1);
    let families = [LossFamily::Quadratic, LossFamily::Logistic, LossFamily::Mlp { hidden: 3 }];
    for (k, family) in families.into_iter().enumerate() {
        let model = Model::new(family, 5, 4, 0.05).unwrap();
        let w = random_vector(model.dim(), 0.5, 10 + k as u64);
        let mut g = DVector::zeros(model.dim());
        model.loss_grad(&w, &train, Some(&mut g)).unwrap();
        let mut rng = rng_from(99);
        for _ in 0..10 {
            let i = rng.random_range(0..model.dim());
            let h = 1e-5 * (1.0 + w[i].abs());
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[i] += h;
            wm[i] -= h;
            let fd = (model.loss_grad(&wp, &train, None).unwrap() - model.loss_grad(&wm, &train, None).unwrap()) / (2.0 * h);
            let rel = (fd - g[i]).abs() / g[i].abs().max(1e-3);
            assert!(rel < 1e-5, "{family:?} coordinate {i}: analytic {} vs fd {fd}", g[i]);
        }
    }
}

/// With no features the quadratic loss is `½‖w − c‖²` averaged over one-hot
/// targets, so the gradient is `w − c_m` with `c_m` the label histogram.
#[test]
fn centers_task_gradient_is_offset_from_center() {
    let labels = [vec![0, 0, 1, 3], vec![2, 2, 2, 1]];
    let shards: Vec<Dataset> = labels
        .iter()
        .map(|l| Dataset::new(DMatrix::zeros(l.len(), 0), l.clone(), 4).unwrap())
        .collect();
    let model = Model::new(LossFamily::Quadratic, 0, 4, 0.0).unwrap();
    let fed = Federation::from_shards(task(model, UpdateMode::PureGradient), shards, Dataset::new(DMatrix::zeros(1, 0), vec![0], 4).unwrap()).unwrap();
    let w = DVector::from_column_slice(&[0.3, -0.2, 0.7, 1.5]);
    let batch = fed.compute_local_updates(&w, 0).unwrap();
    let centers = [[0.5, 0.25, 0.0, 0.25], [0.0, 0.25, 0.75, 0.0]];
    for (m, c) in centers.iter().enumerate() {
        for d in 0..4 {
            assert!((batch.matrix()[(d, m)] - (w[d] - c[d])).abs() <= 4.0 * f64::EPSILON);
        }
    }
}

#[test]
fn single_full_batch_step_equals_gradient() {
    let (train, test) = mixture(2);
    let model = Model::new(LossFamily::Logistic, 5, 4, 0.01).unwrap();
    let w = random_vector(model.dim(), 0.3, 4);
    let pure = Federation::new(task(model, UpdateMode::PureGradient), &train, test.clone(), 3, 5).unwrap();
    let mut sgd_task = task(model, UpdateMode::LocalSgd { steps: 1, batch_size: 1000 });
    sgd_task.momentum = 0.5;
    let sgd = Federation::new(sgd_task, &train, test, 3, 5).unwrap();
    let a = pure.compute_local_updates(&w, 7).unwrap();
    let b = sgd.compute_local_updates(&w, 7).unwrap();
    let diff = (a.matrix() - b.matrix()).amax();
    assert!(diff <= 1e-12 * a.matrix().amax(), "difference {diff}");
}

#[test]
fn local_updates_are_deterministic_per_seed() {
    let (train, test) = mixture(3);
    let model = Model::new(LossFamily::Logistic, 5, 4, 0.0).unwrap();
    let fed = Federation::new(task(model, UpdateMode::LocalSgd { steps: 5, batch_size: 4 }), &train, test, 4, 1).unwrap();
    let w = model.init(0);
    let a = fed.compute_local_updates(&w, 11).unwrap();
    let b = fed.compute_local_updates(&w, 11).unwrap();
    let c = fed.compute_local_updates(&w, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

/// With `b_m = Q_m / Q` the weighted sum of local gradients is the gradient of
/// the pooled data, also after one device's samples are duplicated.
#[test]
fn weighted_gradient_equals_pooled_gradient_after_duplication() {
    let (train, test) = mixture(4);
    let model = Model::new(LossFamily::Logistic, 5, 4, 0.02).unwrap();
    let idx = partition(&train, 3, Partition::LabelSkew { classes_per_device: 2 }, 8).unwrap();
    let shards: Vec<Dataset> = idx.iter().map(|i| train.subset(i)).collect();
    let mut doubled = shards.clone();
    doubled[1] = Dataset::concat(&[shards[1].clone(), shards[1].clone()]).unwrap();
    let w = random_vector(model.dim(), 0.2, 3);
    for parts in [shards, doubled] {
        let fed = Federation::from_shards(task(model, UpdateMode::PureGradient), parts.clone(), test.clone()).unwrap();
        let total: usize = parts.iter().map(Dataset::len).sum();
        for (b, p) in fed.weights().iter().zip(&parts) {
            assert_eq!(*b, p.len() as f64 / total as f64);
        }
        let weighted = ideal_aggregate(&fed.compute_local_updates(&w, 0).unwrap(), fed.weights()).unwrap();
        let mut pooled = DVector::zeros(model.dim());
        model.loss_grad(&w, &Dataset::concat(&parts).unwrap(), Some(&mut pooled)).unwrap();
        assert!((&weighted - &pooled).norm() <= 1e-12 * pooled.norm());
    }
}

#[test]
fn empty_shard_is_rejected() {
    let (train, test) = mixture(5);
    let model = Model::new(LossFamily::Logistic, 5, 4, 0.0).unwrap();
    let shards = vec![train.clone(), train.subset(&[])];
    let err = Federation::from_shards(task(model, UpdateMode::PureGradient), shards, test).unwrap_err();
    assert_eq!(err, uavfl_core::Error::EmptyDataset(1));
}

#[test]
fn invalid_tasks_are_rejected() {
    let model = Model::new(LossFamily::Logistic, 5, 4, 0.0).unwrap();
    let mut t = task(model, UpdateMode::PureGradient);
    t.rounds = 0;
    assert!(t.validate().is_err());
    let mut t = task(model, UpdateMode::PureGradient);
    t.learning_rate = 0.0;
    assert!(t.validate().is_err());
    assert!(Model::new(LossFamily::Logistic, 4, 3, 0.0).is_err(), "(4 + 1) * 3 is odd");
}

fn quadratic_federation(seed: u64) -> Federation {
    let (train, test) = mixture(seed);
    let model = Model::new(LossFamily::Quadratic, 5, 4, 1.0).unwrap();
    let mut t = task(model, UpdateMode::PureGradient);
    t.partition = Partition::LabelSkew { classes_per_device: 2 };
    Federation::new(t, &train, test, 4, seed).unwrap()
}

#[test]
fn quadratic_constants_are_exact() {
    let fed = quadratic_federation(6);
    let q = quadratic_constants(&fed).unwrap();
    let batch = fed.compute_local_updates(&q.optimum, 0).unwrap();
    let g = ideal_aggregate(&batch, fed.weights()).unwrap();
    assert!(g.norm() < 1e-12, "gradient at the optimum {}", g.norm());
    assert!(q.mu >= 1.0 && q.omega >= q.mu);
    let w = random_vector(fed.dim(), 1.0, 2);
    assert!(fed.global_loss(&w).unwrap() >= q.optimal_loss);
}

fn hessian_min_direction(fed: &Federation) -> DVector<f64> {
    let d = fed.dim();
    let h = 1e-3;
    let grad = |w: &DVector<f64>| {
        let batch = fed.compute_local_updates(w, 0).unwrap();
        ideal_aggregate(&batch, fed.weights()).unwrap()
    };
    let zero = DVector::zeros(d);
    let g0 = grad(&zero);
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut e = DVector::zeros(d);
        e[i] = h;
        hess.set_column(i, &((grad(&e) - &g0) / h));
    }
    let hess = (&hess + hess.transpose()) * 0.5;
    let eig = SymmetricEigen::new(hess);
    eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned()
}

/// Gradient steps of size `1/ω` shrink the gap by at most `1 − μ/ω` per
/// round; along the flattest direction the gap is quadratic in the
/// displacement, so it shrinks by exactly `(1 − μ/ω)²`.
#[test]
fn error_free_gradient_descent_contracts_at_the_predicted_rate() {
    let fed = quadratic_federation(7);
    let q = quadratic_constants(&fed).unwrap();
    let rate = 1.0 - q.mu / q.omega;
    let step = |w: &DVector<f64>| {
        let batch = fed.compute_local_updates(w, 0).unwrap();
        w - ideal_aggregate(&batch, fed.weights()).unwrap() / q.omega
    };
    let gap = |w: &DVector<f64>| fed.global_loss(w).unwrap() - q.optimal_loss;

    let mut w = random_vector(fed.dim(), 1.0, 5);
    for _ in 0..20 {
        let next = step(&w);
        assert!(gap(&next) <= rate * gap(&w) * (1.0 + 1e-10) + 1e-15);
        w = next;
    }

    let mut w = &q.optimum + hessian_min_direction(&fed) * 0.5;
    for _ in 0..5 {
        let next = step(&w);
        let ratio = gap(&next) / gap(&w);
        assert!((ratio - rate * rate).abs() <= 1e-6 * rate * rate, "ratio {ratio} vs {}", rate * rate);
        w = next;
    }
}

#[test]
fn single_device_noiseless_air_round_matches_error_free() {
    let (train, test) = mixture(8);
    let model = Model::new(LossFamily::Logistic, 5, 4, 0.0).unwrap();
    let fed = Federation::new(task(model, UpdateMode::PureGradient), &train, test, 1, 0).unwrap();
    let mut scenario = Scenario::paper_default().with_devices(vec![Point::new(10.0, 20.0)], vec![1.0]).unwrap();
    scenario.channel.noise_power = 0.0;
    scenario.optimizer.min_norm_fallback = true;
    let w = random_vector(fed.dim(), 0.4, 1);
    let batch: GradientBatch = fed.compute_local_updates(&w, 0).unwrap();
    let ideal = ideal_aggregate(&batch, &[1.0]).unwrap();
    let cfg = ExperimentConfig::default();
    let mut state = SchemeState::new(Scheme::StaticPs);
    let air = aggregate(&batch, &scenario, &mut state, true, 3, &cfg).unwrap();
    assert!((&air.estimate - &ideal).norm() <= 1e-12 * ideal.norm());
    assert!(air.error_sq_norm <= 1e-24 * ideal.norm_squared());
}

fn small_setup() -> (Scenario, LearningTask, ExperimentConfig) {
    let devices = vec![Point::new(800.0, 0.0), Point::new(900.0, 60.0), Point::new(850.0, -80.0), Point::new(600.0, 300.0)];
    let mut scenario = Scenario::paper_default().with_devices(devices, vec![0.25; 4]).unwrap();
    scenario.uav.slots = 12;
    scenario.optimizer.max_outer_iters = 3;
    let model = Model::new(LossFamily::Logistic, 5, 4, 0.0).unwrap();
    let mut t = task(model, UpdateMode::LocalSgd { steps: 2, batch_size: 8 });
    t.momentum = 0.5;
    let cfg = ExperimentConfig {
        trials: 2,
        seed: 3,
        reoptimize: Reoptimize::Once,
        circle_search: uavfl_core::baseline::CircleSearch {
            centers_per_axis: 3,
            radii: 2,
            refine_samples: 2,
            seed: 0,
        },
        anchor_directions: 4,
        anchor_radii: 2,
        mixture: MixtureSpec {
            classes: 4,
            features: 5,
            train_per_class: 20,
            test_per_class: 5,
            separation: 1.0,
        },
        ..Default::default()
    };
    (scenario, t, cfg)
}

#[test]
fn experiments_are_reproducible() {
    let (scenario, t, cfg) = small_setup();
    let a = run_experiment(&scenario, &t, &cfg).unwrap();
    let b = run_experiment(&scenario, &t, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.logs.len(), cfg.trials * t.rounds * Scheme::ALL.len());
    for l in &a.logs {
        assert!((0.0..=1.0).contains(&l.accuracy));
        assert!(l.analytic_mse >= 0.0 && l.error_sq_norm >= 0.0);
        if l.scheme == Scheme::ErrorFree {
            assert_eq!(l.error_sq_norm, 0.0);
        }
    }
    let opt_runs = a.logs.iter().filter(|l| l.optimizer_iters > 0).count();
    assert_eq!(opt_runs, cfg.trials);
}

#[test]
fn minimal_run_has_a_single_entry() {
    let (scenario, mut t, mut cfg) = small_setup();
    t.rounds = 1;
    cfg.trials = 1;
    cfg.schemes = vec![Scheme::ErrorFree];
    let r = run_experiment(&scenario, &t, &cfg).unwrap();
    assert_eq!(r.logs.len(), 1);
    assert_eq!(r.summary.len(), 1);
    assert_eq!(r.summary[0].trials, 1);
    assert_eq!(r.summary[0].accuracy_std, 0.0);
}

#[test]
fn zero_rounds_and_unknown_schemes_are_rejected() {
    let (scenario, mut t, cfg) = small_setup();
    t.rounds = 0;
    assert!(run_experiment(&scenario, &t, &cfg).is_err());
    assert!(harness::parse_schemes("error-free,optimized").unwrap() == vec![Scheme::ErrorFree, Scheme::Optimized]);
    assert!(harness::parse_schemes("error-free,teleport").is_err());
    for s in Scheme::ALL {
        assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
    }
}

#[test]
fn label_skew_limits_classes_per_device() {
    let (train, _) = mixture(9);
    let idx = partition(&train, 5, Partition::LabelSkew { classes_per_device: 2 }, 1).unwrap();
    for shard in &idx {
        let mut seen: Vec<usize> = shard.iter().map(|&i| train.labels()[i]).collect();
        seen.sort_unstable();
        seen.dedup();
        assert!(seen.len() <= 2);
        assert_eq!(shard.len(), train.len() / 10 * 2);
    }
}
