//! Targeted maximum likelihood estimation (TMLE) of the average treatment
//! effect for a binary exposure and binary outcome, together with the
//! cross-validated variant that fits only the initial outcome model
//! out-of-fold (CVTMLE[Q]).
//!
//! The crate is self-contained: nuisance models come from an internal
//! Super Learner whose candidates (IRLS logistic regression, stepwise AIC,
//! lasso, spline GAM and a probability random forest) are implemented in
//! [`learners`] and [`trees`]. The [`simulation`] module drives the Monte
//! Carlo study over the data-generating mechanism in [`dgm`].

#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod dgm;
pub mod error;
pub mod learners;
pub mod linalg;
pub mod rng;
pub mod simulation;
pub mod superlearner;
pub mod tmle;
pub mod trees;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use rng::RngState;

/// Logistic function.
#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-odds.
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
