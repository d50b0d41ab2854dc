//! Weighted logistic regression by iteratively reweighted least squares.
//!
//! Each iteration solves `X'WX b = X'(W (eta - offset) + w_prior (y - mu))`
//! by Cholesky, halving the step if the deviance goes up. Iteration stops
//! when the relative deviance change drops below [`DEVIANCE_TOL`] or the
//! score sup-norm drops below [`SCORE_TOL`], after at most [`MAX_ITER`]
//! iterations. Columns aliased with earlier ones are fixed at zero. Under
//! (quasi-)separation the coefficients run away; once any exceeds
//! [`COEF_LIMIT`] in magnitude they are clamped and the fit is returned
//! flagged as not converged.

use serde::{Deserialize, Serialize};

use super::design::{expand_basis, DesignKind, DesignSpec};
use super::{check_response, Features};
use crate::error::{Error, Result};
use crate::linalg::{weighted_gram, Cholesky, Matrix, ALIAS_TOL};
use crate::{expit, softplus};

pub const DEVIANCE_TOL: f64 = 1e-10;
pub const SCORE_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 100;
pub const COEF_LIMIT: f64 = 40.0;
const SEPARATION_DEVIANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default)]
pub struct LogisticOptions<'a> {
    /// Prior (frequency) weights, all non-negative.
    pub weights: Option<&'a [f64]>,
    /// Fixed offset added to the linear predictor.
    pub offset: Option<&'a [f64]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    /// Columns excluded as linear combinations of earlier ones.
    pub aliased: Vec<bool>,
    /// Coefficients hit the clamp.
    pub separation: bool,
}

impl LogisticFit {
    /// Number of estimated (non-aliased) coefficients.
    pub fn rank(&self) -> usize {
        self.aliased.iter().filter(|a| !**a).count()
    }

    pub fn aic(&self) -> f64 {
        self.deviance + 2.0 * self.rank() as f64
    }
}

/// A logistic fit together with the design it was fitted on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub design: DesignSpec,
    pub fit: LogisticFit,
}

impl GlmFit {
    pub fn coefficients(&self) -> &[f64] {
        &self.fit.coefficients
    }

    pub fn converged(&self) -> bool {
        self.fit.converged
    }

    pub fn deviance(&self) -> f64 {
        self.fit.deviance
    }
}

fn linear_predictor(x: &Matrix, beta: &[f64], offset: Option<&[f64]>) -> Vec<f64> {
    let mut eta = x.mul_vec(beta);
    if let Some(o) = offset {
        eta.iter_mut().zip(o).for_each(|(e, o)| *e += o);
    }
    eta
}

/// Binomial deviance computed from the linear predictor.
pub fn binomial_deviance(y: &[f64], eta: &[f64], weights: Option<&[f64]>) -> f64 {
    let mut dev = 0.0;
    for (i, (&yi, &e)) in y.iter().zip(eta).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        if w == 0.0 {
            continue;
        }
        // -loglik = y softplus(-eta) + (1-y) softplus(eta); subtract the
        // saturated term for fractional responses.
        let mut term = yi * softplus(-e) + (1.0 - yi) * softplus(e);
        if yi > 0.0 && yi < 1.0 {
            term += yi * yi.ln() + (1.0 - yi) * (1.0 - yi).ln();
        }
        dev += 2.0 * w * term;
    }
    dev
}

fn score_sup_norm(x: &Matrix, y: &[f64], mu: &[f64], weights: Option<&[f64]>, aliased: &[bool]) -> f64 {
    let mut score = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        let r = weights.map_or(1.0, |w| w[i]) * (y[i] - mu[i]);
        for (s, xv) in score.iter_mut().zip(x.row(i)) {
            *s += xv * r;
        }
    }
    score
        .iter()
        .zip(aliased)
        .filter(|(_, a)| !**a)
        .fold(0.0, |m, (s, _)| m.max(s.abs()))
}

/// Maximum-likelihood logistic regression of `y` on the columns of `x`
/// exactly as given (no intercept is added).
pub fn fit_logistic(x: &Matrix, y: &[f64], opts: &LogisticOptions) -> Result<LogisticFit> {
    let n = x.rows();
    let p = x.cols();
    check_response(y, n)?;
    if let Some(w) = opts.weights {
        if w.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: w.len(),
                context: "prior weights",
            });
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::domain("prior weights must be finite and non-negative"));
        }
    }
    if let Some(o) = opts.offset {
        if o.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: o.len(),
                context: "offset",
            });
        }
        if o.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("offset must be finite"));
        }
    }
    let prior = |i: usize| opts.weights.map_or(1.0, |w| w[i]);

    // Structural aliasing from the prior-weighted Gram matrix.
    let pw: Vec<f64> = (0..n).map(prior).collect();
    let (gram0, _) = weighted_gram(x, &pw, &vec![0.0; n]);
    let aliased = Cholesky::factor(&gram0, p, ALIAS_TOL, None).aliased().to_vec();

    let mut beta = vec![0.0; p];
    let mut eta = linear_predictor(x, &beta, opts.offset);
    let mut dev = binomial_deviance(y, &eta, opts.weights);
    let mut converged = false;
    let mut separation = false;
    let mut iterations = 0;

    if p == 0 {
        return Ok(LogisticFit {
            coefficients: beta,
            converged: true,
            iterations: 0,
            deviance: dev,
            aliased,
            separation,
        });
    }

    for iter in 1..=MAX_ITER {
        iterations = iter;
        let mut ww = vec![0.0; n];
        let mut rhs_vec = vec![0.0; n];
        for i in 0..n {
            let mu = expit(eta[i]);
            let v = mu * (1.0 - mu);
            let off = opts.offset.map_or(0.0, |o| o[i]);
            ww[i] = prior(i) * v;
            rhs_vec[i] = ww[i] * (eta[i] - off) + prior(i) * (y[i] - mu);
        }
        let (gram, rhs) = weighted_gram(x, &ww, &rhs_vec);
        let chol = Cholesky::factor(&gram, p, ALIAS_TOL, Some(&aliased));
        let mut proposal = chol.solve(&rhs);
        // A column can lose rank numerically when its rows have vanishing
        // weight; keep its previous value.
        for j in 0..p {
            if chol.aliased()[j] && !aliased[j] {
                proposal[j] = beta[j];
            }
        }

        let mut new_eta = linear_predictor(x, &proposal, opts.offset);
        let mut new_dev = binomial_deviance(y, &new_eta, opts.weights);
        let mut halvings = 0;
        while !(new_dev.is_finite() && new_dev <= dev + 1e-12 * (dev.abs() + 1.0)) && halvings < 30 {
            for (b, old) in proposal.iter_mut().zip(&beta) {
                *b = 0.5 * (*b + old);
            }
            new_eta = linear_predictor(x, &proposal, opts.offset);
            new_dev = binomial_deviance(y, &new_eta, opts.weights);
            halvings += 1;
        }

        if proposal.iter().any(|b| b.abs() > COEF_LIMIT) {
            for b in proposal.iter_mut() {
                *b = b.clamp(-COEF_LIMIT, COEF_LIMIT);
            }
            beta = proposal;
            eta = linear_predictor(x, &beta, opts.offset);
            dev = binomial_deviance(y, &eta, opts.weights);
            separation = true;
            break;
        }

        let rel_change = (new_dev - dev).abs() / (new_dev.abs() + 0.1);
        beta = proposal;
        eta = new_eta;
        dev = new_dev;
        let mu: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
        let score = score_sup_norm(x, y, &mu, opts.weights, &aliased);
        if score < SCORE_TOL || rel_change < DEVIANCE_TOL {
            converged = true;
            break;
        }
    }

    // A binary response fitted to near-zero deviance is separated even when
    // the score tolerance stopped the iterations before the clamp.
    if !separation && dev < SEPARATION_DEVIANCE && y.iter().all(|&v| v == 0.0 || v == 1.0) {
        separation = true;
        converged = false;
    }

    Ok(LogisticFit {
        coefficients: beta,
        converged,
        iterations,
        deviance: dev,
        aliased,
        separation,
    })
}

/// Fitted probabilities `expit(X b + offset)`.
pub fn predict_logistic(x: &Matrix, fit: &LogisticFit, offset: Option<&[f64]>) -> Result<Vec<f64>> {
    if x.cols() != fit.coefficients.len() {
        return Err(Error::Dimension {
            expected: fit.coefficients.len(),
            got: x.cols(),
            context: "design columns for prediction",
        });
    }
    if let Some(o) = offset {
        if o.len() != x.rows() {
            return Err(Error::Dimension {
                expected: x.rows(),
                got: o.len(),
                context: "prediction offset",
            });
        }
    }
    Ok(linear_predictor(x, &fit.coefficients, offset)
        .into_iter()
        .map(expit)
        .collect())
}

/// Model-based standard errors from the inverse Fisher information at the
/// fitted coefficients (NaN for aliased columns).
pub fn standard_errors(x: &Matrix, fit: &LogisticFit, opts: &LogisticOptions) -> Vec<f64> {
    let n = x.rows();
    let eta = linear_predictor(x, &fit.coefficients, opts.offset);
    let w: Vec<f64> = (0..n)
        .map(|i| {
            let mu = expit(eta[i]);
            opts.weights.map_or(1.0, |w| w[i]) * mu * (1.0 - mu)
        })
        .collect();
    let (gram, _) = weighted_gram(x, &w, &vec![0.0; n]);
    Cholesky::factor(&gram, x.cols(), ALIAS_TOL, Some(&fit.aliased))
        .inverse_diagonal()
        .into_iter()
        .map(f64::sqrt)
        .collect()
}

/// Unpenalized GLM on a learned design.
pub fn fit_glm(features: &Features, y: &[f64], kind: DesignKind) -> Result<GlmFit> {
    let design = DesignSpec::learn(kind, features);
    fit_on_design(features, y, design)
}

pub(crate) fn fit_on_design(features: &Features, y: &[f64], design: DesignSpec) -> Result<GlmFit> {
    let x = expand_basis(&features.x, &design)?;
    let fit = fit_logistic(&x, y, &LogisticOptions::default())?;
    Ok(GlmFit { design, fit })
}

/// Generalized additive model: logistic regression on a fixed-knot natural
/// cubic spline basis for every continuous covariate.
pub fn fit_gam(features: &Features, y: &[f64]) -> Result<GlmFit> {
    fit_glm(features, y, DesignKind::SplineGam)
}

/// Predicted probabilities for new covariate rows, reusing the training
/// design (knots, dropped columns).
pub fn predict_glm(fit: &GlmFit, w_new: &Matrix, offset: Option<&[f64]>) -> Result<Vec<f64>> {
    let x = expand_basis(w_new, &fit.design)?;
    predict_logistic(&x, &fit.fit, offset)
}
