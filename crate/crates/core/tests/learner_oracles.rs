#![allow(clippy::needless_range_loop)]

mod common;

use approx::assert_abs_diff_eq;
use common::{gradient_descent_logistic, small_logistic_problem};
use cvtmle::dgm::generate_covariates;
use cvtmle::learners::glm::{predict_logistic, standard_errors};
use cvtmle::learners::lasso::LassoProblem;
use cvtmle::learners::{
    expand_basis, fit_gam, fit_glm, fit_lasso, fit_logistic, fit_stepwise, predict_glm, DesignKind, DesignSpec,
    Features, LogisticOptions,
};
use cvtmle::{expit, logit, Matrix, RngState};

#[test]
fn irls_matches_gradient_descent_on_five_problems() {
    for (seed, n, p) in [(1, 40, 2), (2, 60, 3), (3, 80, 4), (4, 120, 3), (5, 50, 5)] {
        let (x, y) = small_logistic_problem(seed, n, p);
        let irls = fit_logistic(&x, &y, &LogisticOptions::default()).unwrap();
        assert!(irls.converged);
        let gd = gradient_descent_logistic(&x, &y);
        for (a, b) in irls.coefficients.iter().zip(&gd) {
            assert!((a - b).abs() < 1e-6, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn offset_at_truth_gives_null_coefficients() {
    let seeds = 40;
    let mut z = vec![Vec::new(); 3];
    for seed in 0..seeds {
        let mut rng = RngState::from_seed(seed);
        let rows: Vec<Vec<f64>> = (0..10_000)
            .map(|_| vec![1.0, rng.sample_gaussian(), rng.sample_gaussian()])
            .collect();
        let offset: Vec<f64> = rows.iter().map(|r| -0.3 + 0.8 * r[1] - 0.5 * r[2]).collect();
        let y: Vec<f64> = offset
            .iter()
            .map(|&e| f64::from(rng.sample_bernoulli(expit(e)).unwrap()))
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let opts = LogisticOptions {
            weights: None,
            offset: Some(&offset),
        };
        let fit = fit_logistic(&x, &y, &opts).unwrap();
        let se = standard_errors(&x, &fit, &opts);
        for j in 0..3 {
            z[j].push(fit.coefficients[j] / se[j]);
        }
    }
    for zj in &z {
        let mean = zj.iter().sum::<f64>() / seeds as f64;
        let inside = zj.iter().filter(|v| v.abs() < 2.0).count();
        assert!(mean.abs() < 3.0 / (seeds as f64).sqrt(), "mean z {mean}");
        assert!(inside * 100 >= 85 * seeds as usize, "{inside}/{seeds} within 2 se");
    }
}

#[test]
fn offset_is_a_coefficient_shift() {
    let (x, y) = small_logistic_problem(11, 200, 3);
    let delta = [0.4, -0.7, 0.2];
    let offset = x.mul_vec(&delta);
    let plain = fit_logistic(&x, &y, &LogisticOptions::default()).unwrap();
    let shifted = fit_logistic(
        &x,
        &y,
        &LogisticOptions {
            weights: None,
            offset: Some(&offset),
        },
    )
    .unwrap();
    for j in 0..3 {
        assert_abs_diff_eq!(
            shifted.coefficients[j] + delta[j],
            plain.coefficients[j],
            epsilon = 1e-8
        );
    }
    let p1 = predict_logistic(&x, &shifted, Some(&offset)).unwrap();
    let p2 = predict_logistic(&x, &plain, None).unwrap();
    for (a, b) in p1.iter().zip(&p2) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }
}

#[test]
fn weighted_score_equations_hold() {
    let (x, y) = small_logistic_problem(12, 150, 4);
    let mut rng = RngState::from_seed(13);
    let w: Vec<f64> = (0..150).map(|_| 0.2 + 2.0 * rng.next_uniform()).collect();
    let fit = fit_logistic(
        &x,
        &y,
        &LogisticOptions {
            weights: Some(&w),
            offset: None,
        },
    )
    .unwrap();
    assert!(fit.converged);
    let p = predict_logistic(&x, &fit, None).unwrap();
    for j in 0..4 {
        let s: f64 = (0..150).map(|i| x.get(i, j) * w[i] * (y[i] - p[i])).sum();
        assert!(s.abs() < 1e-6, "column {j}: {s}");
    }
}

#[test]
fn intercept_only_is_logit_of_mean() {
    let y: Vec<f64> = (0..10).map(|i| f64::from(i < 3)).collect();
    let fit = fit_logistic(
        &Matrix::from_vec(10, 1, vec![1.0; 10]).unwrap(),
        &y,
        &LogisticOptions::default(),
    )
    .unwrap();
    assert_abs_diff_eq!(fit.coefficients[0], logit(0.3), epsilon = 1e-10);
    assert_abs_diff_eq!(fit.coefficients[0], -0.847_297_860_387_203_7, epsilon = 1e-10);
}

fn covariates(n: usize, seed: u64) -> Features {
    Features::new(generate_covariates(n, &mut RngState::from_seed(seed)).unwrap())
}

fn draw(f: &Features, seed: u64, lp: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut rng = RngState::from_seed(seed);
    (0..f.rows())
        .map(|i| f64::from(rng.sample_bernoulli(expit(lp(f.x.row(i)))).unwrap()))
        .collect()
}

#[test]
fn stepwise_picks_signal_first_and_beats_null() {
    let f = covariates(5000, 20);
    let y = draw(&f, 21, |w| -1.0 + 3.0 * w[1]);
    let fit = fit_stepwise(&f, &y).unwrap();
    assert_eq!(fit.design.main.first(), Some(&1));
    let ones = Matrix::from_vec(5000, 1, vec![1.0; 5000]).unwrap();
    let null = fit_logistic(&ones, &y, &LogisticOptions::default()).unwrap();
    assert!(fit.fit.aic() < null.aic());
}

#[test]
fn stepwise_null_rate_matches_aic_threshold() {
    // Under the null each of the 8 likelihood-ratio statistics is about
    // chi-square(1); a term enters when it exceeds 2, so intercept-only
    // survives with probability P(chi2_1 < 2)^8 = 0.254.
    let seeds = 100;
    let mut null_models = 0;
    for s in 0..seeds {
        let f = covariates(5000, 1000 + s);
        let y = draw(&f, 5000 + s, |_| -0.2);
        if fit_stepwise(&f, &y).unwrap().design.main.is_empty() {
            null_models += 1;
        }
    }
    let rate = null_models as f64 / seeds as f64;
    assert!((rate - 0.254).abs() < 0.13, "intercept-only rate {rate}");
}

#[test]
fn lasso_kkt_on_dgm_problems() {
    for seed in 0..5 {
        let f = covariates(300, 30 + seed);
        let y = draw(&f, 40 + seed, |w| -0.5 + 0.9 * w[0] + 0.4 * w[2] - 0.6 * w[5]);
        let spec = DesignSpec::learn(DesignKind::MainTerms, &f);
        let x = expand_basis(&f.x, &spec).unwrap();
        let x = x.select_cols(&(1..x.cols()).collect::<Vec<_>>());
        let binary: Vec<bool> = spec.keep[1..].iter().map(|&c| f.binary[c - 1]).collect();
        let prob = LassoProblem::new(&x, &binary, &y).unwrap();
        let path = prob.path(&prob.lambda_grid());
        assert!(path[0].beta.iter().all(|b| *b == 0.0));
        for sol in &path {
            assert!(prob.kkt_violation(sol) < 1e-6);
        }
        let devs: Vec<f64> = path.iter().map(|s| prob.deviance(s)).collect();
        assert!(devs.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }
}

#[test]
fn lasso_recovers_sparse_support() {
    // Two active columns out of the 38 non-intercept columns of the
    // second-order design. Recovery means both active columns are
    // selected; the CV-minimum rule may also admit small noise terms.
    let seeds = 10;
    let mut recovered = 0;
    let mut exact = 0;
    for s in 0..seeds {
        let f = covariates(2000, 100 + s);
        let spec = DesignSpec::learn(DesignKind::PolyInteractions, &f);
        let full = expand_basis(&f.x, &spec).unwrap();
        let x = full.select_cols(&(1..full.cols()).collect::<Vec<_>>());
        let feats = Features::new(x);
        let active = [2usize, 9];
        let y = draw(&feats, 200 + s, |r| -0.4 + 1.0 * r[active[0]] + 1.0 * r[active[1]]);
        let fit = fit_lasso(&feats, &y, &mut RngState::from_seed(300 + s)).unwrap();
        let coef = fit.glm.coefficients();
        let selected: Vec<usize> = (0..feats.cols()).filter(|&j| coef[j + 1] != 0.0).collect();
        if active.iter().all(|a| selected.contains(a)) {
            recovered += 1;
        }
        if selected == active {
            exact += 1;
        }
    }
    println!("support recovered in {recovered}/{seeds}, exactly in {exact}/{seeds}");
    assert!(recovered * 10 >= seeds * 8);
}

#[test]
fn lasso_constant_response_is_intercept_only() {
    let f = covariates(100, 50);
    let fit = fit_lasso(&f, &[1.0; 100], &mut RngState::from_seed(1)).unwrap();
    assert_eq!(fit.glm.coefficients().len(), 1);
}

#[test]
fn gam_matches_glm_under_linear_truth() {
    let f = covariates(5000, 60);
    let y = draw(&f, 61, |w| -0.3 + 0.5 * w[2] - 0.4 * w[5] + 0.6 * w[1]);
    let gam = fit_gam(&f, &y).unwrap();
    let glm = fit_glm(&f, &y, DesignKind::MainTerms).unwrap();
    let a = predict_glm(&gam, &f.x, None).unwrap();
    let b = predict_glm(&glm, &f.x, None).unwrap();
    let rms = (a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / a.len() as f64).sqrt();
    assert!(rms < 0.02, "rms {rms}");
}

#[test]
fn gam_captures_curvature() {
    let f = covariates(5000, 62);
    let y = draw(&f, 63, |w| -1.0 + 1.2 * w[2] * w[2]);
    let gam = fit_gam(&f, &y).unwrap();
    let glm = fit_glm(&f, &y, DesignKind::MainTerms).unwrap();
    assert!(gam.deviance() < glm.deviance());
}

#[test]
fn gam_null_signal_is_flat() {
    let f = covariates(10_000, 64);
    let y = draw(&f, 65, |_| 0.0);
    let p = predict_glm(&fit_gam(&f, &y).unwrap(), &f.x, None).unwrap();
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    let rms = (p.iter().map(|v| (v - 0.5).powi(2)).sum::<f64>() / p.len() as f64).sqrt();
    assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    assert!(rms < 0.05, "rms {rms}");
}

#[test]
fn zero_coefficients_predict_one_half() {
    let f = covariates(10, 66);
    let mut fit = fit_glm(&f, &draw(&f, 67, |_| 0.0), DesignKind::MainTerms).unwrap();
    fit.fit.coefficients.iter_mut().for_each(|b| *b = 0.0);
    assert!(predict_glm(&fit, &f.x, None).unwrap().iter().all(|&p| p == 0.5));
    assert!(predict_glm(&fit, &Matrix::zeros(3, 5), None).is_err());
}
