//! Forward stepwise selection over main terms by AIC.

use super::design::{DesignKind, DesignSpec};
use super::glm::{fit_on_design, GlmFit};
use super::Features;
use crate::error::{Error, Result};

/// Starts from the intercept-only model and repeatedly adds the main term
/// that lowers AIC the most, stopping when no addition lowers it. Ties go
/// to the lowest column index.
pub fn fit_stepwise(features: &Features, y: &[f64]) -> Result<GlmFit> {
    if features.rows() < 2 {
        return Err(Error::domain("stepwise selection needs at least 2 rows"));
    }
    let mut selected: Vec<usize> = Vec::new();
    let mut best = fit_on_design(
        features,
        y,
        DesignSpec::learn_with_main(DesignKind::MainTerms, features, Vec::new()),
    )?;
    loop {
        let mut round_best: Option<GlmFit> = None;
        for j in 0..features.cols() {
            if selected.contains(&j) {
                continue;
            }
            let mut main = selected.clone();
            main.push(j);
            main.sort_unstable();
            let spec = DesignSpec::learn_with_main(DesignKind::MainTerms, features, main);
            let cand = fit_on_design(features, y, spec)?;
            if round_best.as_ref().is_none_or(|b| cand.fit.aic() < b.fit.aic()) {
                round_best = Some(cand);
            }
        }
        match round_best {
            Some(c) if c.fit.aic() < best.fit.aic() => {
                selected = c.design.main.clone();
                best = c;
            }
            _ => break,
        }
    }
    Ok(best)
}
