//! Per-operation checks against independently computed expectations.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use triopts_core::data::SupervisedSet;
use triopts_core::explain::{self, LimeConfig};
use triopts_core::metrics::{self, IntervalForecast};
use triopts_core::network::{
    self, init_mlp, Dense, HiddenActivation, LossKind, MlpParams, OutputActivation,
    QuantileForecast, QuantileLevels,
};
use triopts_core::optim::{self, OptimizerConfig, OptimizerState, TrainOptions, TriOptsConfig};
use triopts_core::Matrix;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-scale..scale))
            .collect(),
    )
    .unwrap()
}

#[test]
fn two_layer_mse_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let params = init_mlp(
        &[3, 5, 1],
        HiddenActivation::Tanh,
        OutputActivation::Identity,
        4,
    )
    .unwrap();
    let x = random_matrix(&mut rng, 7, 3, 1.0);
    let y = random_matrix(&mut rng, 7, 1, 1.0);
    let (_, cache) = network::forward(&params, &x).unwrap();
    let analytic = network::backward(&params, &cache, &y, &LossKind::Mse).unwrap();
    let numeric = common::numeric_gradients(&params, &x, &y, &LossKind::Mse, 1e-6);
    let err = common::max_relative_error(&analytic, &numeric, 1e-4);
    assert!(err < 1e-5, "max relative error {err:e}");
}

#[test]
fn adam_on_quadratic_matches_reference_trajectory() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let theta0: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let opt = OptimizerConfig::default();
    let expected = common::adam_reference(
        &theta0,
        |t| t.to_vec(),
        100,
        opt.fixed_lr,
        opt.beta1,
        opt.beta2,
        opt.epsilon,
    );

    let mut params = MlpParams::from_layers(
        vec![Dense {
            weights: Matrix::from_vec(1, 10, theta0.clone()).unwrap(),
            bias: vec![0.0],
        }],
        HiddenActivation::Relu,
        OutputActivation::Identity,
    )
    .unwrap();
    let tri = TriOptsConfig::disabled(100);
    let mut state = OptimizerState::new(&params, 0);
    for (step, want) in expected.iter().enumerate().skip(1) {
        // ∇ ½‖θ‖² = θ
        let mut grads = network::Gradients::zeros_like(&params);
        grads.layers[0].weights = params.layers[0].weights.clone();
        state.step(&mut params, &grads, 1, &opt, &tri).unwrap();
        for (a, b) in params.layers[0].weights.as_slice().iter().zip(want) {
            assert!((a - b).abs() <= 1e-12, "step {step}: {a} vs {b}");
        }
    }
}

fn linear_set(rng: &mut ChaCha8Rng, n: usize, coef: &[f64], intercept: f64) -> SupervisedSet {
    let d = coef.len();
    let x = random_matrix(rng, n, d, 1.0);
    let y = x
        .row_iter()
        .map(|r| intercept + r.iter().zip(coef).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    SupervisedSet::new(
        x,
        y,
        (0..d).map(|i| format!("x{i}")).collect(),
        (0..n).collect(),
    )
    .unwrap()
}

#[test]
fn plain_adam_fits_exactly_linear_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let train = linear_set(&mut rng, 200, &[0.5, -0.3, 0.2], 0.1);
    let val = SupervisedSet::empty(train.feature_names.clone());
    let params = init_mlp(
        &[3, 1],
        HiddenActivation::Relu,
        OutputActivation::Identity,
        1,
    )
    .unwrap();
    let opt = OptimizerConfig {
        fixed_lr: 0.01,
        ..Default::default()
    };
    let options = TrainOptions {
        epochs: 500,
        batch_size: None,
        early_stop_patience: None,
    };
    let (_, trace) = optim::train(
        params,
        &train,
        &val,
        &opt,
        &TriOptsConfig::disabled(500),
        &LossKind::Mse,
        &options,
    )
    .unwrap();
    let losses: Vec<f64> = trace.records.iter().map(|r| r.train_loss).collect();
    // momentum oscillates once the fit is exact; monotone up to the threshold
    let hit = losses
        .iter()
        .position(|&l| l < 1e-6)
        .expect("loss never fell below 1e-6");
    assert!(
        losses[..=hit].windows(2).all(|w| w[1] <= w[0]),
        "loss is not monotone"
    );
    assert!(
        *losses.last().unwrap() < 1e-6,
        "final loss {}",
        losses.last().unwrap()
    );
}

#[test]
fn permutation_importance_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 6;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..2).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|r| 3.0 * r[0] + rng.random_range(-0.1..0.1))
        .collect();
    let f_row = |r: &[f64]| 3.0 * r[0] + 0.0 * r[1];
    let predict = |m: &Matrix| Ok(m.row_iter().map(f_row).collect::<Vec<f64>>());

    let expected = common::exhaustive_pfi(f_row, &rows, &y, 0);
    let x = Matrix::from_rows(&rows).unwrap();
    let names = vec!["x1".to_string(), "x2".to_string()];
    let repeats = 400;
    let rep = explain::permutation_importance(&predict, &x, &y, &names, repeats, 8).unwrap();
    let se = rep.features[0].fi_std / (repeats as f64).sqrt();
    assert!(
        (rep.features[0].fi - expected).abs() <= 2.0 * se,
        "fi {} vs exhaustive {expected} (se {se})",
        rep.features[0].fi
    );
    assert_eq!(rep.features[1].fi, 0.0);
}

#[test]
fn lime_recovers_linear_coefficients() {
    let a0 = 0.25;
    let a = [1.5, -0.7, 0.0, 2.25];
    let predict = |m: &Matrix| {
        Ok(m.row_iter()
            .map(|r| a0 + r.iter().zip(&a).map(|(x, c)| x * c).sum::<f64>())
            .collect::<Vec<f64>>())
    };
    let instance = [0.3, 0.8, -0.1, 0.55];
    let names: Vec<String> = (0..4).map(|i| format!("f{i}")).collect();
    for kernel_width in [None, Some(0.5)] {
        let cfg = LimeConfig {
            ridge_lambda: 0.0,
            kernel_width,
            n_samples: 500,
            seed: 3,
            ..Default::default()
        };
        let e =
            explain::fit_lime(&predict, &instance, &[0.2, 0.3, 0.1, 0.25], &names, &cfg).unwrap();
        for (got, want) in e.coefficients.iter().zip(&a) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
        assert!((e.intercept - a0).abs() < 1e-6);
        assert!((e.local_prediction - e.model_prediction).abs() < 1e-6);
        assert_eq!(
            e.local_prediction,
            e.intercept + e.contributions.iter().sum::<f64>()
        );
    }
}

#[test]
fn perturbation_spread_follows_scale() {
    let cfg = LimeConfig {
        n_samples: 10_000,
        perturb_scale: 0.1,
        seed: 21,
        ..Default::default()
    };
    let stats = [1.0, 4.0, 0.5];
    let p = explain::generate_perturbations(&[1.0, -2.0, 0.0], &stats, &cfg).unwrap();
    for (c, s) in stats.iter().enumerate() {
        let col = p.column(c);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let sd =
            (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64).sqrt();
        let want = 0.1 * s;
        assert!((sd - want).abs() <= 0.05 * want, "col {c}: {sd} vs {want}");
    }
}

#[test]
fn hand_computed_metric_values() {
    assert!((metrics::r2(&[0.0, 1.0, 2.0], &[0.0, 1.0, 1.0]).unwrap() - 0.5).abs() <= 1e-12);
    assert!((metrics::nrmse(&[0.0, 0.0], &[0.0, 1.0]).unwrap() - 0.5_f64.sqrt()).abs() <= 1e-12);
    let f = QuantileForecast::from_raw(
        QuantileLevels::new(vec![0.1, 0.9]).unwrap(),
        Matrix::from_rows(&[[0.0, 1.0]]).unwrap(),
    )
    .unwrap();
    assert!((metrics::quantile_score(&f, &[0.5]).unwrap() - 0.05).abs() <= 1e-12);
    let iv = IntervalForecast::new(0.8, vec![0.2], vec![0.4]).unwrap();
    let m = metrics::interval_metrics(&iv, &[0.5]).unwrap();
    assert!((m.winkler - 1.2).abs() <= 1e-12);
}

#[test]
fn crps_quantile_approximation_matches_integration() {
    // quantiles of N(0, 1) on the 19-level 5% grid
    let dist = Normal::new(0.0, 1.0).unwrap();
    let levels: Vec<f64> = (1..=19).map(|k| f64::from(k) / 20.0).collect();
    let values: Vec<f64> = levels.iter().map(|&q| dist.inverse_cdf(q)).collect();
    let forecast = QuantileForecast::from_raw(
        QuantileLevels::new(levels).unwrap(),
        Matrix::from_rows(&[values]).unwrap(),
    )
    .unwrap();
    for y in [0.0, 0.5, 1.0, -0.8] {
        let approx = metrics::crps_from_quantiles(&forecast, &[y]).unwrap();
        let exact = common::crps_by_integration(|x| dist.cdf(x), y, -12.0, 12.0, 400_000);
        assert!(
            (approx - exact).abs() <= 0.05 * exact,
            "y={y}: quantile CRPS {approx} vs integral {exact}"
        );
        assert_eq!(
            approx,
            2.0 * metrics::quantile_score(&forecast, &[y]).unwrap()
        );
    }
}
