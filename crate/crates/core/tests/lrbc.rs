use fl_lrbc::lrbc::{
    exact_gradient, exact_loss, kkt_residual, project, taylor_gradient, taylor_loss_at,
    train_centralized, BoxBounds, LabeledBatch, LossKind, StopReason, TrainConfig, Weights,
};
use fl_lrbc::matrix::Matrix;
use proptest::prelude::*;
use rand::Rng;

mod common;

fn bounds_strategy(n: usize) -> impl Strategy<Value = BoxBounds> {
    prop::collection::vec((-5f64..5.0, 0f64..5.0), n).prop_map(|v| {
        let lower = v.iter().map(|(l, _)| *l).collect();
        let upper = v.iter().map(|(l, w)| l + w).collect();
        BoxBounds::new(lower, upper).unwrap()
    })
}

/// Random weights and batch with every score inside `[-2, 2]`.
fn random_instance(seed: u64) -> (Weights, LabeledBatch) {
    let mut r = common::rng(seed);
    let dim = r.gen_range(1..6);
    let rows = r.gen_range(2..40);
    let x: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect())
        .collect();
    let labels: Vec<u8> = (0..rows).map(|_| r.gen_range(0..2)).collect();
    let scale = 1.0 / dim as f64;
    let w = Weights::new(
        (0..dim).map(|_| r.gen_range(-1.0..1.0) * scale).collect(),
        r.gen_range(-1.0..1.0),
    );
    (
        w,
        LabeledBatch::from_binary(Matrix::from_rows(&x), &labels).unwrap(),
    )
}

proptest! {
    #[test]
    fn projection_is_idempotent(
        (v, b) in (1usize..8).prop_flat_map(|n| (prop::collection::vec(-10f64..10.0, n), bounds_strategy(n)))
    ) {
        let p = project(&v, &b);
        prop_assert_eq!(project(&p, &b), p.clone());
        for (i, x) in p.iter().enumerate() {
            prop_assert!(*x >= b.lower()[i] && *x <= b.upper()[i]);
        }
    }

    #[test]
    fn projection_is_non_expansive(
        (v, w, b) in (1usize..8).prop_flat_map(|n| (
            prop::collection::vec(-10f64..10.0, n),
            prop::collection::vec(-10f64..10.0, n),
            bounds_strategy(n),
        ))
    ) {
        let (pv, pw) = (project(&v, &b), project(&w, &b));
        for i in 0..v.len() {
            prop_assert!((pv[i] - pw[i]).abs() <= (v[i] - w[i]).abs());
        }
    }

    #[test]
    fn projection_clamps_coordinatewise(v in prop::collection::vec(-10f64..10.0, 1..8)) {
        let p = project(&v, &BoxBounds::nonnegative(v.len()));
        for (a, b) in v.iter().zip(&p) {
            prop_assert_eq!(*b, a.max(0.0));
        }
    }

    #[test]
    fn every_iterate_is_nonnegative(seed in 0u64..1000, eta in 0.05f64..2.0, batch in 1usize..64) {
        let data = common::logistic_data(80, &[1.0, -1.0, 0.5], 0.0, seed);
        let config = TrainConfig { eta, batch_size: batch, max_iter: 60, seed, ..TrainConfig::default() };
        let out = train_centralized(&data, &config, &BoxBounds::nonnegative(3), None).unwrap();
        for w in &out.trajectory {
            prop_assert!(w.min_coefficient() >= 0.0);
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..100 {
        let (w, batch) = random_instance(seed);
        let g = exact_gradient(&w, &batch).unwrap();
        let fd = common::finite_difference(&w, 1e-6, |w| exact_loss(w, &batch).unwrap());
        worst.0 = worst
            .0
            .max(common::relative_error((&g.w, g.b), (&fd.0, fd.1)));
        let g = taylor_gradient(&w, &batch).unwrap();
        let fd = common::finite_difference(&w, 1e-6, |w| taylor_loss_at(w, &batch).unwrap());
        worst.1 = worst
            .1
            .max(common::relative_error((&g.w, g.b), (&fd.0, fd.1)));
    }
    assert!(worst.0 < 1e-5, "exact gradient rel err {}", worst.0);
    assert!(worst.1 < 1e-6, "taylor gradient rel err {}", worst.1);
}

#[test]
fn boundary_optimum_matches_grid_search() {
    let data = common::boundary_data(400, 3);
    let f = |w: &Weights| exact_loss(w, &data).unwrap();

    let free = train_centralized(
        &data,
        &TrainConfig {
            eta: 1.0,
            batch_size: 400,
            tol_w: 1e-10,
            tol_loss: 0.0,
            max_iter: 20000,
            loss: LossKind::Exact,
            ..TrainConfig::default()
        },
        &BoxBounds::unbounded(2),
        Some(Weights::zeros(2)),
    )
    .unwrap();
    assert!(
        free.weights.w[1] < -0.1,
        "unconstrained optimum {:?}",
        free.weights
    );

    let config = TrainConfig {
        eta: 1.0,
        batch_size: 400,
        tol_w: 1e-9,
        tol_loss: 0.0,
        max_iter: 20000,
        loss: LossKind::Exact,
        ..TrainConfig::default()
    };
    let fit = train_centralized(&data, &config, &BoxBounds::nonnegative(2), None).unwrap();
    assert_eq!(fit.stop, StopReason::WeightsStalled);
    assert_eq!(fit.weights.w[1], 0.0);

    let grid = common::grid_search_2d(f, (0.0, 3.0), (-2.0, 2.0), 60);
    assert_eq!(grid.w[1], 0.0);
    let oracle = common::polish(grid, f, 0.1);
    assert!(oracle.w[1] < 1e-6);
    assert!(
        fit.weights.max_abs_diff(&oracle) < 1e-3,
        "{:?} vs {:?}",
        fit.weights,
        oracle
    );

    let kkt = kkt_residual(
        &fit.weights,
        &data,
        &BoxBounds::nonnegative(2),
        LossKind::Exact,
    )
    .unwrap();
    assert!(kkt.residual < 1e-3);
    assert!(kkt.coordinates[1].gradient >= -1e-3);
}

#[test]
fn full_batch_descent_is_monotone() {
    let data = common::logistic_data(300, &[0.8, 0.4, 0.0], -0.3, 5);
    let config = TrainConfig {
        eta: 1e-2,
        batch_size: 300,
        tol_loss: 0.0,
        tol_w: 0.0,
        max_iter: 300,
        loss: LossKind::Exact,
        ..TrainConfig::default()
    };
    let out = train_centralized(&data, &config, &BoxBounds::nonnegative(3), None).unwrap();
    for pair in out.losses.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-15, "{} -> {}", pair[0], pair[1]);
    }
}

#[test]
fn converged_runs_satisfy_kkt() {
    for seed in 0..8 {
        let data = common::logistic_data(250, &[1.0, 0.5, -0.7, 0.0], 0.2, seed);
        for loss in [LossKind::Exact, LossKind::Taylor] {
            let config = TrainConfig {
                eta: 0.1,
                batch_size: 250,
                tol_loss: 0.0,
                max_iter: 100_000,
                loss,
                seed,
                ..TrainConfig::default()
            };
            let out = train_centralized(&data, &config, &BoxBounds::nonnegative(4), None).unwrap();
            assert_eq!(out.stop, StopReason::WeightsStalled);
            let kkt = kkt_residual(&out.weights, &data, &BoxBounds::nonnegative(4), loss).unwrap();
            assert!(
                kkt.residual < 10.0 * config.tol_w,
                "seed {seed}: residual {}",
                kkt.residual
            );
            assert!(kkt.max_sign_violation() < 1e-3);
        }
    }
}
