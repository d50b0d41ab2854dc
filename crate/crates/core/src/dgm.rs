//! Data-generating mechanism for the simulation study.
//!
//! Eight covariates: `W1, W2, W4, W5, W7, W8` are Bernoulli with
//! probabilities 0.1, 0.4, 0.7, 0.5, 0.3, 0.8 and `W3, W6` are standard
//! normal. Exposure and outcome are logistic:
//!
//! ```text
//! logit P(A=1|W)   = a0 + log5 W1 + log1.5 (W2 + W4 + W6 + W7 + W8)
//! logit P(Y=1|A,W) = -0.8 + log1.75 A + log1.5 (W1 + ... + W6) + b7 A W1
//! ```
//!
//! with `a0 = -0.45` (about half exposed) or `1.05` (high prevalence) and
//! `b7 = 0` or `2` (treatment by rare-covariate interaction).
//!
//! Draws are made one subject at a time: `W1..W8`, then `A`, then `Y`,
//! each consuming exactly one uniform.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expit;
use crate::linalg::Matrix;
use crate::rng::{derive_substream, RngState};

pub const N_COVARIATES: usize = 8;

/// Bernoulli probabilities of the binary covariates by column; `None` marks
/// the Gaussian columns `W3` and `W6`.
pub const COVARIATE_PROBS: [Option<f64>; N_COVARIATES] = [
    Some(0.1),
    Some(0.4),
    None,
    Some(0.7),
    Some(0.5),
    None,
    Some(0.3),
    Some(0.8),
];

pub const OUTCOME_INTERCEPT: f64 = -0.8;

/// Role tag used for replicate data streams.
pub(crate) const ROLE_DATA: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prevalence {
    Fifty,
    Eighty,
}

impl Prevalence {
    pub fn alpha0(self) -> f64 {
        match self {
            Prevalence::Fifty => -0.45,
            Prevalence::Eighty => 1.05,
        }
    }

    pub fn percent(self) -> u32 {
        match self {
            Prevalence::Fifty => 50,
            Prevalence::Eighty => 80,
        }
    }

    pub fn from_percent(p: u32) -> Option<Self> {
        match p {
            50 => Some(Prevalence::Fifty),
            80 => Some(Prevalence::Eighty),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extrapolation {
    None,
    High,
}

impl Extrapolation {
    pub fn beta7(self) -> f64 {
        match self {
            Extrapolation::None => 0.0,
            Extrapolation::High => 2.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Extrapolation::None => "none",
            Extrapolation::High => "high",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_obs: usize,
    pub prevalence: Prevalence,
    pub extrapolation: Extrapolation,
}

impl ScenarioConfig {
    pub fn new(n_obs: usize, prevalence: Prevalence, extrapolation: Extrapolation) -> Self {
        ScenarioConfig {
            n_obs,
            prevalence,
            extrapolation,
        }
    }

    /// Exposure coefficients for `W1..W8` (zero where a covariate is absent).
    pub fn exposure_coefficients(&self) -> [f64; N_COVARIATES] {
        let l15 = 1.5f64.ln();
        [5f64.ln(), l15, 0.0, l15, 0.0, l15, l15, l15]
    }

    /// Outcome coefficients for `W1..W8`.
    pub fn outcome_coefficients(&self) -> [f64; N_COVARIATES] {
        let l15 = 1.5f64.ln();
        [l15, l15, l15, l15, l15, l15, 0.0, 0.0]
    }

    pub fn beta_a(&self) -> f64 {
        1.75f64.ln()
    }

    /// Short identifier such as `n200_p80_xhigh`.
    pub fn id(&self) -> String {
        format!(
            "n{}_p{}_x{}",
            self.n_obs,
            self.prevalence.percent(),
            self.extrapolation.as_str()
        )
    }

    /// Stream for replicate `rep` of this scenario's sample size. Streams
    /// depend on `n_obs` only, so scenarios that share a sample size also
    /// share covariate draws.
    pub fn replicate_stream(&self, master_seed: u64, rep: u64) -> RngState {
        derive_substream(master_seed, rep, ROLE_DATA | ((self.n_obs as u64) << 8))
    }
}

/// One simulated (or user-supplied) data set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub w: Matrix,
    pub a: Vec<f64>,
    pub y: Vec<f64>,
    /// Sample-average risk difference implied by the outcome model.
    pub true_ate: f64,
    /// Generating propensity scores; diagnostics only, never given to
    /// estimators.
    pub true_ps: Vec<f64>,
}

fn draw_covariate_row(rng: &mut RngState, row: &mut [f64]) {
    for (slot, prob) in row.iter_mut().zip(COVARIATE_PROBS) {
        *slot = match prob {
            // Probabilities are compile-time constants in [0, 1].
            Some(p) => f64::from(rng.sample_bernoulli(p).expect("valid probability")),
            None => rng.sample_gaussian(),
        };
    }
}

pub fn generate_covariates(n: usize, rng: &mut RngState) -> Result<Matrix> {
    if n < 1 {
        return Err(Error::domain("sample size must be at least 1"));
    }
    let mut w = Matrix::zeros(n, N_COVARIATES);
    for i in 0..n {
        draw_covariate_row(rng, w.row_mut(i));
    }
    Ok(w)
}

pub fn exposure_probability(w: &[f64], cfg: &ScenarioConfig) -> f64 {
    let lp = cfg.prevalence.alpha0()
        + cfg
            .exposure_coefficients()
            .iter()
            .zip(w)
            .map(|(c, x)| c * x)
            .sum::<f64>();
    expit(lp)
}

pub fn outcome_probability(w: &[f64], a: f64, cfg: &ScenarioConfig) -> f64 {
    let lp = OUTCOME_INTERCEPT
        + cfg.beta_a() * a
        + cfg
            .outcome_coefficients()
            .iter()
            .zip(w)
            .map(|(c, x)| c * x)
            .sum::<f64>()
        + cfg.extrapolation.beta7() * a * w[0];
    expit(lp)
}

pub fn simulate_dataset(cfg: &ScenarioConfig, rng: &mut RngState) -> Result<Dataset> {
    let n = cfg.n_obs;
    if n < 1 {
        return Err(Error::domain("sample size must be at least 1"));
    }
    let mut w = Matrix::zeros(n, N_COVARIATES);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut ps = Vec::with_capacity(n);
    let mut rd_sum = 0.0;
    for i in 0..n {
        draw_covariate_row(rng, w.row_mut(i));
        let row = w.row(i);
        let g = exposure_probability(row, cfg);
        let ai = f64::from(rng.sample_bernoulli(g)?);
        let q = outcome_probability(row, ai, cfg);
        let yi = f64::from(rng.sample_bernoulli(q)?);
        rd_sum += outcome_probability(row, 1.0, cfg) - outcome_probability(row, 0.0, cfg);
        ps.push(g);
        a.push(ai);
        y.push(yi);
    }
    Ok(Dataset {
        w,
        a,
        y,
        true_ate: rd_sum / n as f64,
        true_ps: ps,
    })
}

/// Mean of the replicate-specific risk differences over `n_reps`
/// replicates drawn from the same streams the simulation uses.
pub fn true_ate_scenario(cfg: &ScenarioConfig, n_reps: usize, master_seed: u64) -> Result<f64> {
    if n_reps < 1 {
        return Err(Error::domain("n_reps must be at least 1"));
    }
    let mut total = 0.0;
    for rep in 0..n_reps {
        let mut rng = cfg.replicate_stream(master_seed, rep as u64);
        total += simulate_dataset(cfg, &mut rng)?.true_ate;
    }
    Ok(total / n_reps as f64)
}

/// Writes `w1..w8,a,y` for cross-checking against other implementations.
pub fn write_dataset_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (1..=ds.w.cols()).map(|j| format!("w{j}")).collect();
    writeln!(out, "{},a,y", header.join(","))?;
    for i in 0..ds.w.rows() {
        let row: Vec<String> = ds.w.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{},{},{}", row.join(","), ds.a[i], ds.y[i])?;
    }
    out.flush()?;
    Ok(())
}
