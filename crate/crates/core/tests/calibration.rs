use nst_core::calibrate::{calibrate, calibrate_moments, clip_by_norm, l2_norm, CalibConfig, LossSpec, Objective};
use nst_core::dsl::SdeModel;
use nst_core::engine::{ensemble_moments, generate_noise, simulate, Grid, InitialState};
use proptest::prelude::*;

const TRUE: [f64; 2] = [0.1, 0.15];

#[test]
fn self_consistent_target_is_recovered() {
    let grid = Grid::new(0.0, 100, 0.01).unwrap();
    let seed = 21;
    let panel = generate_noise(seed, 1, &grid, 2);
    let model = SdeModel::gbm(TRUE[0], TRUE[1]);
    let series = simulate(&model, &TRUE, 1.0, &grid, &panel).unwrap().values.remove(0);
    let config = CalibConfig {
        seed,
        n_paths: 1,
        ..CalibConfig::default()
    };
    let r = calibrate(&model, &series, &config, &LossSpec::default()).unwrap();
    assert!(r.mae < 1e-3, "{}", r.mae);
    assert_eq!(r.loss_trace.len(), 100);
    assert!(r.loss_trace.iter().all(|l| r.best_loss <= *l));
    let again = calibrate(&model, &series, &config, &LossSpec::default()).unwrap();
    assert_eq!(again.theta, r.theta);
    assert_eq!(again.loss_trace, r.loss_trace);
}

#[test]
fn scan_minimum_is_first_order_optimal_and_reached_by_descent() {
    let grid = Grid::new(0.0, 100, 0.01).unwrap();
    let noise = generate_noise(8, 100, &grid, 2);
    let model = SdeModel::gbm(TRUE[0], TRUE[1]);
    let target = ensemble_moments(&simulate(&model, &TRUE, 1.0, &grid, &noise).unwrap()).unwrap();
    let spec = LossSpec::default();
    let x0 = InitialState::new(1.0);
    let obj = Objective::new(&model, target, spec, grid, &noise, x0).unwrap();

    let mut best = (f64::INFINITY, [0.0; 2]);
    for i in 0..=40 {
        for j in 0..=40 {
            let theta = [i as f64 * 0.005, 0.05 + j as f64 * 0.005];
            let l = obj.loss(&theta).unwrap();
            if l < best.0 {
                best = (l, theta);
            }
        }
    }
    let theta = best.1;
    assert!((theta[0] - TRUE[0]).abs() < 1e-9 && (theta[1] - TRUE[1]).abs() < 1e-9, "{theta:?}");

    // The loss is a sum of absolute values, so its minimum sits on a kink:
    // check both one-sided derivatives along each axis instead of a zero gradient.
    let h = 1e-6;
    for k in 0..2 {
        for sign in [-1.0, 1.0] {
            let mut probe = theta;
            probe[k] += sign * h;
            let slope = (obj.loss(&probe).unwrap() - best.0) / h;
            assert!(slope > 0.0, "axis {k} sign {sign}: {slope}");
        }
    }

    let start = SdeModel::gbm(0.05, 0.1);
    let config = CalibConfig {
        seed: 8,
        ..CalibConfig::default()
    };
    let r = calibrate_moments(&start, &target, x0, &grid, &noise, &config, &spec).unwrap();
    assert!(r.mae < 0.02, "{}", r.mae);
    assert!((r.theta[0] - TRUE[0]).abs() < 0.05 && (r.theta[1] - TRUE[1]).abs() < 0.03, "{:?}", r.theta);
}

#[test]
fn zero_epochs_rejected() {
    let config = CalibConfig {
        epochs: 0,
        ..CalibConfig::default()
    };
    let series: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
    assert!(calibrate(&SdeModel::gbm(0.1, 0.1), &series, &config, &LossSpec::default()).is_err());
}

proptest! {
    #[test]
    fn clipping_bounds_global_norm(g in prop::collection::vec(-1e6f64..1e6, 1..12), thr in 1e-3f64..10.0) {
        let c = clip_by_norm(&g, thr);
        prop_assert!(l2_norm(&c) <= thr);
        if l2_norm(&g) <= thr {
            prop_assert_eq!(c, g);
        } else {
            let ratio = c[0] / g[0];
            for (a, b) in c.iter().zip(&g) {
                if *b != 0.0 {
                    prop_assert!((a / b - ratio).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn schedule_is_staircase(e in 0usize..500) {
        let c = CalibConfig::default();
        prop_assert!((c.learning_rate(e) - 0.05 * 0.9f64.powi((e / 10) as i32)).abs() < 1e-15);
    }
}
