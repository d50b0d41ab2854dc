//! L1-penalized logistic regression.
//!
//! Minimizes `(1/n) sum [log(1 + e^eta) - y eta] + lambda * sum |b_j|` with
//! an unpenalized intercept. Continuous columns are centered and scaled to
//! unit variance before fitting (binary columns are only centered); the
//! returned coefficients are on the original scale.
//!
//! The solver is cyclic coordinate descent on the IRLS quadratic
//! approximation, with step halving on the outer loop and warm starts down
//! a log-spaced lambda grid. Lambda is picked by 10-fold cross-validated
//! deviance (minimum rule).

use super::design::{expand_basis, DesignKind, DesignSpec};
use super::glm::{binomial_deviance, fit_on_design, GlmFit, LogisticFit};
use super::{check_response, mean, Features};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::RngState;
use crate::superlearner::make_folds;
use crate::{expit, softplus};

pub const N_LAMBDA: usize = 50;
pub const LAMBDA_MIN_RATIO: f64 = 1e-3;
pub const CV_FOLDS: usize = 10;

const INNER_TOL: f64 = 1e-10;
const OUTER_TOL: f64 = 1e-8;
const MAX_OUTER: usize = 200;
const MAX_SWEEPS: usize = 10_000;
const MIN_WEIGHT: f64 = 1e-5;

/// Internally standardized lasso problem (columns stored contiguously).
#[derive(Clone, Debug)]
pub struct LassoProblem {
    cols: Vec<Vec<f64>>,
    y: Vec<f64>,
    center: Vec<f64>,
    scale: Vec<f64>,
}

/// Solution at one lambda on the standardized scale.
#[derive(Clone, Debug, PartialEq)]
pub struct LassoSolution {
    pub lambda: f64,
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub converged: bool,
}

impl LassoProblem {
    /// `x` must not contain an intercept column.
    pub fn new(x: &Matrix, binary: &[bool], y: &[f64]) -> Result<Self> {
        check_response(y, x.rows())?;
        let n = x.rows() as f64;
        let mut cols = Vec::with_capacity(x.cols());
        let mut center = Vec::with_capacity(x.cols());
        let mut scale = Vec::with_capacity(x.cols());
        for j in 0..x.cols() {
            let c = x.column(j);
            let m = c.iter().sum::<f64>() / n;
            let s = if binary[j] {
                1.0
            } else {
                let v = c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
                if v > 0.0 {
                    v.sqrt()
                } else {
                    1.0
                }
            };
            cols.push(c.iter().map(|v| (v - m) / s).collect());
            center.push(m);
            scale.push(s);
        }
        Ok(LassoProblem {
            cols,
            y: y.to_vec(),
            center,
            scale,
        })
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.cols.len()
    }

    /// Smallest lambda at which every penalized coefficient is zero,
    /// nudged up by a relative 1e-9 so rounding cannot activate a column.
    pub fn lambda_max(&self) -> f64 {
        let ybar = mean(&self.y);
        let n = self.n() as f64;
        self.cols
            .iter()
            .map(|c| (c.iter().zip(&self.y).map(|(x, y)| x * (y - ybar)).sum::<f64>() / n).abs())
            .fold(0.0, f64::max)
            * (1.0 + 1e-9)
    }

    pub fn lambda_grid(&self) -> Vec<f64> {
        let hi = self.lambda_max();
        (0..N_LAMBDA)
            .map(|k| hi * LAMBDA_MIN_RATIO.powf(k as f64 / (N_LAMBDA - 1) as f64))
            .collect()
    }

    fn eta(&self, b0: f64, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![b0; self.n()];
        for (c, &b) in self.cols.iter().zip(beta) {
            if b != 0.0 {
                eta.iter_mut().zip(c).for_each(|(e, x)| *e += b * x);
            }
        }
        eta
    }

    /// Penalized objective.
    pub fn objective(&self, b0: f64, beta: &[f64], lambda: f64) -> f64 {
        let eta = self.eta(b0, beta);
        let loss = eta.iter().zip(&self.y).map(|(&e, &y)| softplus(e) - y * e).sum::<f64>() / self.n() as f64;
        loss + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    /// Gradient of the smooth part with respect to each penalized
    /// coefficient, and with respect to the intercept.
    pub fn gradient(&self, b0: f64, beta: &[f64]) -> (f64, Vec<f64>) {
        let n = self.n() as f64;
        let resid: Vec<f64> = self
            .eta(b0, beta)
            .iter()
            .zip(&self.y)
            .map(|(&e, &y)| expit(e) - y)
            .collect();
        let g0 = resid.iter().sum::<f64>() / n;
        let g = self
            .cols
            .iter()
            .map(|c| c.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / n)
            .collect();
        (g0, g)
    }

    /// Largest violation of the KKT conditions at `sol`: `|grad_0|`, then
    /// `|grad_j| - lambda` for zero coefficients and
    /// `|grad_j + lambda sign(b_j)|` for active ones.
    pub fn kkt_violation(&self, sol: &LassoSolution) -> f64 {
        let (g0, g) = self.gradient(sol.intercept, &sol.beta);
        let mut worst = g0.abs();
        for (gj, &bj) in g.iter().zip(&sol.beta) {
            let v = if bj == 0.0 {
                (gj.abs() - sol.lambda).max(0.0)
            } else {
                (gj + sol.lambda * bj.signum()).abs()
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Solves at `lambda` from a warm start.
    pub fn solve(&self, lambda: f64, warm: Option<&LassoSolution>) -> LassoSolution {
        let n = self.n();
        let nf = n as f64;
        let p = self.n_features();
        let (mut b0, mut beta) = match warm {
            Some(w) => (w.intercept, w.beta.clone()),
            None => {
                let ybar = mean(&self.y).clamp(1e-6, 1.0 - 1e-6);
                ((ybar / (1.0 - ybar)).ln(), vec![0.0; p])
            }
        };
        let mut obj = self.objective(b0, &beta, lambda);
        let mut converged = false;
        // Coordinates are (intercept, beta). The quadratic approximation is
        // held as its Gram matrix `gram` and linear term `lin`, so each
        // coordinate step costs O(p).
        let d = p + 1;
        let mut gram = vec![0.0; d * d];
        let mut lin = vec![0.0; d];
        let mut w = vec![0.0; n];
        let mut wz = vec![0.0; n];

        for _ in 0..MAX_OUTER {
            let eta = self.eta(b0, &beta);
            for i in 0..n {
                let mu = expit(eta[i]);
                w[i] = (mu * (1.0 - mu)).max(MIN_WEIGHT);
                wz[i] = w[i] * eta[i] + (self.y[i] - mu);
            }
            let col = |j: usize| -> Option<&Vec<f64>> {
                if j == 0 {
                    None
                } else {
                    Some(&self.cols[j - 1])
                }
            };
            for j in 0..d {
                lin[j] = match col(j) {
                    None => wz.iter().sum::<f64>() / nf,
                    Some(c) => c.iter().zip(&wz).map(|(x, v)| x * v).sum::<f64>() / nf,
                };
                for k in 0..=j {
                    let v = match (col(j), col(k)) {
                        (None, None) => w.iter().sum::<f64>(),
                        (Some(c), None) | (None, Some(c)) => c.iter().zip(&w).map(|(x, wi)| x * wi).sum(),
                        (Some(a), Some(b)) => a.iter().zip(b).zip(&w).map(|((x, z), wi)| x * z * wi).sum(),
                    } / nf;
                    gram[j * d + k] = v;
                    gram[k * d + j] = v;
                }
            }

            let mut theta: Vec<f64> = std::iter::once(b0).chain(beta.iter().copied()).collect();
            let mut q: Vec<f64> = (0..d)
                .map(|j| (0..d).map(|k| gram[j * d + k] * theta[k]).sum())
                .collect();
            for _ in 0..MAX_SWEEPS {
                let mut max_delta: f64 = 0.0;
                for j in 0..d {
                    let gjj = gram[j * d + j];
                    if gjj <= 0.0 {
                        continue;
                    }
                    let g = lin[j] - q[j] + gjj * theta[j];
                    let new = if j == 0 {
                        g / gjj
                    } else {
                        soft_threshold(g, lambda) / gjj
                    };
                    let delta = new - theta[j];
                    if delta != 0.0 {
                        for k in 0..d {
                            q[k] += gram[k * d + j] * delta;
                        }
                        theta[j] = new;
                        max_delta = max_delta.max(delta.abs() * gjj.sqrt());
                    }
                }
                if max_delta < INNER_TOL {
                    break;
                }
            }
            let mut nb0 = theta[0];
            let mut nbeta = theta[1..].to_vec();

            // Step halving keeps the true objective monotone.
            let mut new_obj = self.objective(nb0, &nbeta, lambda);
            let mut halvings = 0;
            while new_obj > obj + 1e-15 * obj.abs().max(1.0) && halvings < 30 {
                nb0 = 0.5 * (nb0 + b0);
                nbeta.iter_mut().zip(&beta).for_each(|(nb, b)| *nb = 0.5 * (*nb + b));
                new_obj = self.objective(nb0, &nbeta, lambda);
                halvings += 1;
            }
            let change = nbeta
                .iter()
                .zip(&beta)
                .map(|(a, b)| (a - b).abs())
                .fold((nb0 - b0).abs(), f64::max);
            b0 = nb0;
            beta = nbeta;
            obj = new_obj.min(obj);
            if change < OUTER_TOL {
                converged = true;
                break;
            }
        }
        LassoSolution {
            lambda,
            intercept: b0,
            beta,
            converged,
        }
    }

    /// Warm-started solutions along `lambdas` (which should decrease).
    pub fn path(&self, lambdas: &[f64]) -> Vec<LassoSolution> {
        let mut out: Vec<LassoSolution> = Vec::with_capacity(lambdas.len());
        for &lam in lambdas {
            let sol = self.solve(lam, out.last());
            out.push(sol);
        }
        out
    }

    /// Training deviance of a solution.
    pub fn deviance(&self, sol: &LassoSolution) -> f64 {
        binomial_deviance(&self.y, &self.eta(sol.intercept, &sol.beta), None)
    }

    /// Coefficients on the original column scale, intercept first.
    pub fn original_scale(&self, sol: &LassoSolution) -> Vec<f64> {
        let slopes: Vec<f64> = sol.beta.iter().zip(&self.scale).map(|(b, s)| b / s).collect();
        let intercept = sol.intercept - slopes.iter().zip(&self.center).map(|(b, c)| b * c).sum::<f64>();
        std::iter::once(intercept).chain(slopes).collect()
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

#[derive(Clone, Debug)]
pub struct LassoFit {
    pub glm: GlmFit,
    pub lambda: f64,
    pub lambdas: Vec<f64>,
    /// Mean held-out deviance per lambda.
    pub cv_deviance: Vec<f64>,
}

/// Lasso logistic regression on the main terms of `features`, with lambda
/// chosen by internal cross-validation.
pub fn fit_lasso(features: &Features, y: &[f64], rng: &mut RngState) -> Result<LassoFit> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::domain("lasso needs at least 2 rows"));
    }
    check_response(y, n)?;
    let design = DesignSpec::learn(DesignKind::MainTerms, features);
    let ybar = mean(y);
    if ybar == 0.0 || ybar == 1.0 || design.n_columns() == 1 {
        let spec = DesignSpec::learn_with_main(DesignKind::MainTerms, features, Vec::new());
        return Ok(LassoFit {
            glm: fit_on_design(features, y, spec)?,
            lambda: f64::NAN,
            lambdas: Vec::new(),
            cv_deviance: Vec::new(),
        });
    }

    let xfull = expand_basis(&features.x, &design)?;
    let penalized: Vec<usize> = (1..xfull.cols()).collect();
    let x = xfull.select_cols(&penalized);
    // Column k of `x` is input main term `design.keep[k + 1] - 1`.
    let binary: Vec<bool> = design.keep[1..].iter().map(|&c| features.binary[c - 1]).collect();

    let problem = LassoProblem::new(&x, &binary, y)?;
    let lambdas = problem.lambda_grid();

    let k = CV_FOLDS.min(n);
    let folds = make_folds(n, k, Some(y), rng)?;
    let mut cv_dev = vec![0.0; lambdas.len()];
    for fold in 0..k {
        let (train, valid) = folds.split(fold);
        let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let sub = LassoProblem::new(&x.select_rows(&train), &binary, &ytr)?;
        let path = sub.path(&lambdas);
        let xv = x.select_rows(&valid);
        let yv: Vec<f64> = valid.iter().map(|&i| y[i]).collect();
        for (d, sol) in cv_dev.iter_mut().zip(&path) {
            let coef = sub.original_scale(sol);
            let eta: Vec<f64> = (0..xv.rows())
                .map(|i| coef[0] + xv.row(i).iter().zip(&coef[1..]).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            *d += binomial_deviance(&yv, &eta, None);
        }
    }
    cv_dev.iter_mut().for_each(|d| *d /= n as f64);
    let best = cv_dev
        .iter()
        .enumerate()
        .fold(0, |b, (i, d)| if *d < cv_dev[b] { i } else { b });

    let path = problem.path(&lambdas[..=best]);
    let sol = &path[best];
    let coefficients = problem.original_scale(sol);
    let deviance = problem.deviance(sol);
    let p = coefficients.len();
    Ok(LassoFit {
        glm: GlmFit {
            design,
            fit: LogisticFit {
                coefficients,
                converged: sol.converged,
                iterations: 0,
                deviance,
                aliased: vec![false; p],
                separation: false,
            },
        },
        lambda: lambdas[best],
        lambdas,
        cv_deviance: cv_dev,
    })
}
