#![allow(dead_code, clippy::needless_range_loop)]

use cvtmle::dgm::{simulate_dataset, Extrapolation, Prevalence, ScenarioConfig};
use cvtmle::tmle::ObservedData;
use cvtmle::{expit, Matrix, RngState};

/// Plain gradient descent with backtracking on the mean logistic loss,
/// run until the gradient is negligible. Shares no code with the IRLS
/// solver.
pub fn gradient_descent_logistic(x: &Matrix, y: &[f64]) -> Vec<f64> {
    let n = x.rows() as f64;
    let p = x.cols();
    let loss = |b: &[f64]| -> f64 {
        (0..x.rows())
            .map(|i| {
                let e: f64 = x.row(i).iter().zip(b).map(|(a, c)| a * c).sum();
                let sp = if e > 0.0 {
                    e + (-e).exp().ln_1p()
                } else {
                    e.exp().ln_1p()
                };
                sp - y[i] * e
            })
            .sum::<f64>()
            / n
    };
    let grad = |b: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; p];
        for i in 0..x.rows() {
            let e: f64 = x.row(i).iter().zip(b).map(|(a, c)| a * c).sum();
            let r = expit(e) - y[i];
            for (gj, xj) in g.iter_mut().zip(x.row(i)) {
                *gj += r * xj / n;
            }
        }
        g
    };
    let mut b = vec![0.0; p];
    let mut step = 1.0;
    for _ in 0..2_000_000 {
        let g = grad(&b);
        let gnorm: f64 = g.iter().map(|v| v * v).sum::<f64>();
        if gnorm.sqrt() < 1e-13 {
            break;
        }
        let f0 = loss(&b);
        loop {
            let cand: Vec<f64> = b.iter().zip(&g).map(|(bj, gj)| bj - step * gj).collect();
            if loss(&cand) <= f0 - 0.5 * step * gnorm || step < 1e-12 {
                b = cand;
                break;
            }
            step *= 0.5;
        }
        step *= 1.5;
    }
    b
}

/// Small well-conditioned logistic problem with an intercept column.
pub fn small_logistic_problem(seed: u64, n: usize, p: usize) -> (Matrix, Vec<f64>) {
    let mut rng = RngState::from_seed(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            std::iter::once(1.0)
                .chain((1..p).map(|_| rng.sample_gaussian()))
                .collect()
        })
        .collect();
    let beta: Vec<f64> = (0..p).map(|j| 0.6 * (j as f64 - 1.0) / p as f64).collect();
    let y = rows
        .iter()
        .map(|r| {
            let e: f64 = r.iter().zip(&beta).map(|(a, b)| a * b).sum();
            f64::from(rng.sample_bernoulli(expit(e)).unwrap())
        })
        .collect();
    (Matrix::from_rows(&rows).unwrap(), y)
}

pub fn scenario(n: usize, prev: u32, high: bool) -> ScenarioConfig {
    ScenarioConfig::new(
        n,
        Prevalence::from_percent(prev).unwrap(),
        if high { Extrapolation::High } else { Extrapolation::None },
    )
}

pub fn dgm_data(cfg: &ScenarioConfig, seed: u64, rep: u64) -> ObservedData {
    let ds = simulate_dataset(cfg, &mut cfg.replicate_stream(seed, rep)).unwrap();
    ObservedData::from_dataset(&ds).unwrap()
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
        .join(name)
}
