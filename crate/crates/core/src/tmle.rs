//! TMLE and CVTMLE[Q] for the average treatment effect with binary
//! exposure and outcome.
//!
//! Both estimators share every step except the initial outcome model: TMLE
//! fits it once on the full data, CVTMLE[Q] fits it on each outer training
//! split and predicts the held-out subjects. The propensity model is always
//! a full-data Super Learner fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{fit_logistic, Features, LogisticOptions};
use crate::linalg::Matrix;
use crate::rng::RngState;
use crate::superlearner::{fit_superlearner, make_folds, FoldAssignment, LearnerLibrary, SlModel};
use crate::{expit, logit};

pub const G_BOUNDS: (f64, f64) = (0.025, 0.975);
pub const Q_BOUNDS: (f64, f64) = (1e-4, 1.0 - 1e-4);
pub const Z_95: f64 = 1.96;

const TAG_G: u64 = 1;
const TAG_Q: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Tmle,
    CvtmleQ,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub method: Method,
    pub library: LearnerLibrary,
    pub k_sl: usize,
    pub k_outer: usize,
}

impl EstimatorConfig {
    pub fn new(method: Method, library: LearnerLibrary) -> Self {
        EstimatorConfig {
            method,
            library,
            k_sl: 10,
            k_outer: 5,
        }
    }
}

/// Observed data: covariates, exposure and outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedData {
    pub w: Features,
    pub a: Vec<f64>,
    pub y: Vec<f64>,
}

impl ObservedData {
    pub fn new(w: Features, a: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = w.rows();
        for (name, v) in [("exposure", &a), ("outcome", &y)] {
            if v.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: v.len(),
                    context: if name == "exposure" {
                        "exposure length"
                    } else {
                        "outcome length"
                    },
                });
            }
            if let Some(i) = v.iter().position(|&x| x != 0.0 && x != 1.0) {
                return Err(Error::Data {
                    row: i + 1,
                    message: format!("{name} value {} is not 0 or 1", v[i]),
                });
            }
        }
        Ok(ObservedData { w, a, y })
    }

    pub fn from_dataset(ds: &crate::dgm::Dataset) -> Result<Self> {
        Self::new(Features::new(ds.w.clone()), ds.a.clone(), ds.y.clone())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Reads a CSV with a header row containing `a`, `y` and at least one
    /// covariate column. Covariates keep their file order. Row numbers in
    /// errors count data rows from 1.
    pub fn from_csv(path: &std::path::Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let headers = rdr.headers()?.clone();
        let find = |name: &str| headers.iter().position(|h| h == name);
        let (ia, iy) = match (find("a"), find("y")) {
            (Some(a), Some(y)) => (a, y),
            _ => {
                return Err(Error::Data {
                    row: 0,
                    message: "header must contain columns a and y".into(),
                })
            }
        };
        let cov: Vec<usize> = (0..headers.len()).filter(|&j| j != ia && j != iy).collect();
        if cov.is_empty() {
            return Err(Error::Data {
                row: 0,
                message: "no covariate columns".into(),
            });
        }
        let (mut rows, mut a, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for (k, rec) in rdr.records().enumerate() {
            let row = k + 1;
            let rec = rec.map_err(|e| Error::Data {
                row,
                message: e.to_string(),
            })?;
            let field = |j: usize| -> Result<f64> {
                let s = rec.get(j).unwrap_or("");
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Data {
                        row,
                        message: format!("column {}: '{s}' is not a finite number", &headers[j]),
                    })
            };
            rows.push(cov.iter().map(|&j| field(j)).collect::<Result<Vec<f64>>>()?);
            a.push(field(ia)?);
            y.push(field(iy)?);
        }
        if rows.len() < 2 {
            return Err(Error::Data {
                row: rows.len(),
                message: "need at least 2 data rows".into(),
            });
        }
        Self::new(Features::new(Matrix::from_rows(&rows)?), a, y)
    }

    /// Both exposure levels and both outcome levels must occur.
    pub fn check_classes(&self) -> Result<()> {
        for (variable, v) in [("a", &self.a), ("y", &self.y)] {
            let ones = v.iter().filter(|&&x| x == 1.0).count();
            if ones == 0 || ones == v.len() {
                return Err(Error::SingleClass { variable });
            }
        }
        Ok(())
    }

    /// Covariates with the exposure prepended as column 0.
    pub fn q_features(&self) -> Features {
        self.w.prepend_column(&self.a, true)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerWeight {
    pub learner: String,
    pub weight: f64,
}

fn weights_of(sl: &SlModel) -> Vec<LearnerWeight> {
    sl.names
        .iter()
        .zip(&sl.weights)
        .map(|(n, &w)| LearnerWeight {
            learner: n.clone(),
            weight: w,
        })
        .collect()
}

/// Truncated propensity scores plus fit diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct PropensityEstimate {
    pub g1w: Vec<f64>,
    pub n_truncated: usize,
    pub weights: Vec<LearnerWeight>,
    pub learner_failures: usize,
}

pub fn truncate_g(raw: &[f64]) -> (Vec<f64>, usize) {
    let mut count = 0;
    let g = raw
        .iter()
        .map(|&p| {
            let c = p.clamp(G_BOUNDS.0, G_BOUNDS.1);
            if c != p {
                count += 1;
            }
            c
        })
        .collect();
    (g, count)
}

pub fn estimate_g(
    data: &ObservedData,
    library: &LearnerLibrary,
    k: usize,
    rng: &mut RngState,
) -> Result<PropensityEstimate> {
    if data.a.iter().all(|&a| a == data.a[0]) {
        return Err(Error::SingleClass { variable: "a" });
    }
    let sl = fit_superlearner(library, &data.w, &data.a, k, rng)?;
    let (g1w, n_truncated) = truncate_g(&sl.predict(&data.w.x)?);
    Ok(PropensityEstimate {
        g1w,
        n_truncated,
        weights: weights_of(&sl),
        learner_failures: sl.failures.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct QEstimate {
    pub q0_aw: Vec<f64>,
    pub q0_1w: Vec<f64>,
    pub q0_0w: Vec<f64>,
    pub cv_mode: bool,
    pub outer_folds: Option<FoldAssignment>,
    /// Ensemble weights, averaged over outer folds in CV mode.
    pub weights: Vec<LearnerWeight>,
    pub learner_failures: usize,
}

fn bound_q(p: f64) -> f64 {
    p.clamp(Q_BOUNDS.0, Q_BOUNDS.1)
}

fn predict_triple(sl: &SlModel, f: &Features) -> Result<[Vec<f64>; 3]> {
    let aw = sl.predict(&f.x)?;
    let one = sl.predict(&f.with_column_fixed(0, 1.0).x)?;
    let zero = sl.predict(&f.with_column_fixed(0, 0.0).x)?;
    Ok([aw, one, zero])
}

/// Initial outcome predictions at the observed exposure and under each
/// exposure level. With `cv_mode`, subject `i`'s predictions come from a
/// Super Learner trained without `i`'s outer fold.
pub fn estimate_q_initial(
    data: &ObservedData,
    library: &LearnerLibrary,
    k: usize,
    rng: &mut RngState,
    cv_mode: bool,
    k_outer: usize,
) -> Result<QEstimate> {
    let n = data.n();
    let qf = data.q_features();
    if !cv_mode {
        let sl = fit_superlearner(library, &qf, &data.y, k, rng)?;
        let [aw, one, zero] = predict_triple(&sl, &qf)?;
        return Ok(QEstimate {
            q0_aw: aw.into_iter().map(bound_q).collect(),
            q0_1w: one.into_iter().map(bound_q).collect(),
            q0_0w: zero.into_iter().map(bound_q).collect(),
            cv_mode,
            outer_folds: None,
            weights: weights_of(&sl),
            learner_failures: sl.failures.len(),
        });
    }

    let folds = make_folds(n, k_outer, Some(&data.y), rng)?;
    for v in 0..k_outer {
        let (train, _) = folds.split(v);
        let first = data.y[train[0]];
        if train.iter().all(|&i| data.y[i] == first) {
            return Err(Error::SingleClass { variable: "y" });
        }
    }
    let base = rng.split();
    let mut q = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut weight_sum = vec![0.0; library.len()];
    let mut learner_failures = 0;
    for v in 0..k_outer {
        let (train, valid) = folds.split(v);
        let ytr: Vec<f64> = train.iter().map(|&i| data.y[i]).collect();
        let sl = fit_superlearner(library, &qf.select_rows(&train), &ytr, k, &mut base.substream(v as u64))?;
        let preds = predict_triple(&sl, &qf.select_rows(&valid))?;
        for (dst, src) in q.iter_mut().zip(preds) {
            for (&i, p) in valid.iter().zip(src) {
                dst[i] = bound_q(p);
            }
        }
        weight_sum.iter_mut().zip(&sl.weights).for_each(|(s, w)| *s += w);
        learner_failures += sl.failures.len();
    }
    let [aw, one, zero] = q;
    Ok(QEstimate {
        q0_aw: aw,
        q0_1w: one,
        q0_0w: zero,
        cv_mode,
        outer_folds: Some(folds),
        weights: library
            .names()
            .into_iter()
            .zip(weight_sum)
            .map(|(name, s)| LearnerWeight {
                learner: name.to_string(),
                weight: s / k_outer as f64,
            })
            .collect(),
        learner_failures,
    })
}

/// `(H1, H0)` with `H1 = A / g` and `H0 = (1 - A) / (1 - g)`.
pub fn clever_covariates(a: &[f64], g1w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    a.iter().zip(g1w).map(|(&a, &g)| (a / g, (1.0 - a) / (1.0 - g))).unzip()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fluctuation {
    pub epsilon0: f64,
    pub epsilon1: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Intercept-free logistic regression of `y` on `(H0, H1)` with offset
/// `logit(Q0_AW)`.
pub fn fit_fluctuation(y: &[f64], q0_aw: &[f64], h1: &[f64], h0: &[f64]) -> Result<Fluctuation> {
    let x = Matrix::from_columns(&[h0.to_vec(), h1.to_vec()])?;
    let offset: Vec<f64> = q0_aw.iter().map(|&q| logit(q)).collect();
    let fit = fit_logistic(
        &x,
        y,
        &LogisticOptions {
            weights: None,
            offset: Some(&offset),
        },
    )?;
    let eps = &fit.coefficients;
    if !(eps[0].is_finite() && eps[1].is_finite()) {
        return Err(Error::Numerical("non-finite fluctuation parameter".into()));
    }
    Ok(Fluctuation {
        epsilon0: eps[0],
        epsilon1: eps[1],
        converged: fit.converged,
        iterations: fit.iterations,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdatedQ {
    pub q1_1w: Vec<f64>,
    pub q1_0w: Vec<f64>,
    pub q1_aw: Vec<f64>,
}

/// `Q1(a, W) = expit(logit Q0(a, W) + eps_a / g(a, W))`.
pub fn update_q(a: &[f64], q0_1w: &[f64], q0_0w: &[f64], g1w: &[f64], eps: &Fluctuation) -> UpdatedQ {
    let q1_1w: Vec<f64> = q0_1w
        .iter()
        .zip(g1w)
        .map(|(&q, &g)| expit(logit(q) + eps.epsilon1 / g))
        .collect();
    let q1_0w: Vec<f64> = q0_0w
        .iter()
        .zip(g1w)
        .map(|(&q, &g)| expit(logit(q) + eps.epsilon0 / (1.0 - g)))
        .collect();
    let q1_aw = a
        .iter()
        .enumerate()
        .map(|(i, &ai)| if ai == 1.0 { q1_1w[i] } else { q1_0w[i] })
        .collect();
    UpdatedQ { q1_1w, q1_0w, q1_aw }
}

pub fn compute_ate(q1_1w: &[f64], q1_0w: &[f64]) -> f64 {
    q1_1w.iter().zip(q1_0w).map(|(a, b)| a - b).sum::<f64>() / q1_1w.len() as f64
}

pub fn compute_ic(a: &[f64], y: &[f64], g1w: &[f64], q: &UpdatedQ, ate: f64) -> Vec<f64> {
    (0..a.len())
        .map(|i| {
            let h = a[i] / g1w[i] - (1.0 - a[i]) / (1.0 - g1w[i]);
            h * (y[i] - q.q1_aw[i]) + q.q1_1w[i] - q.q1_0w[i] - ate
        })
        .collect()
}

/// `se = sqrt(var(ic) / n)` with the `n - 1` variance, and `ate +- 1.96 se`.
pub fn compute_se_ci(ic: &[f64], ate: f64) -> Result<(f64, (f64, f64))> {
    let n = ic.len();
    if n < 2 {
        return Err(Error::domain("standard error needs at least 2 observations"));
    }
    let m = ic.iter().sum::<f64>() / n as f64;
    let var = ic.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    Ok((se, (ate - Z_95 * se, ate + Z_95 * se)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_truncated_g: usize,
    pub fluctuation_converged: bool,
    pub fluctuation_iterations: usize,
    pub q_weights: Vec<LearnerWeight>,
    pub g_weights: Vec<LearnerWeight>,
    pub learner_failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TmleResult {
    pub method: Method,
    pub ate: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub epsilon: Fluctuation,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub ic: Vec<f64>,
}

/// Targeting, plug-in and inference given nuisance estimates.
pub fn target(data: &ObservedData, method: Method, q: &QEstimate, g: &PropensityEstimate) -> Result<TmleResult> {
    let (h1, h0) = clever_covariates(&data.a, &g.g1w);
    let eps = fit_fluctuation(&data.y, &q.q0_aw, &h1, &h0)?;
    let updated = update_q(&data.a, &q.q0_1w, &q.q0_0w, &g.g1w, &eps);
    let ate = compute_ate(&updated.q1_1w, &updated.q1_0w);
    let ic = compute_ic(&data.a, &data.y, &g.g1w, &updated, ate);
    let (se, ci) = compute_se_ci(&ic, ate)?;
    Ok(TmleResult {
        method,
        ate,
        se,
        ci,
        epsilon: eps,
        diagnostics: Diagnostics {
            n_truncated_g: g.n_truncated,
            fluctuation_converged: eps.converged,
            fluctuation_iterations: eps.iterations,
            q_weights: q.weights.clone(),
            g_weights: g.weights.clone(),
            learner_failures: q.learner_failures + g.learner_failures,
        },
        ic,
    })
}

/// Propensity stream of an estimator stream. Methods run on the same data
/// with the same stream therefore share the propensity fit.
pub fn g_stream(rng: &RngState) -> RngState {
    rng.substream(TAG_G)
}

pub fn q_stream(rng: &RngState) -> RngState {
    rng.substream(TAG_Q)
}

/// Runs the estimator with a precomputed propensity estimate (which must
/// come from the full data).
pub fn run_with_g(
    data: &ObservedData,
    cfg: &EstimatorConfig,
    g: &PropensityEstimate,
    rng: &RngState,
) -> Result<TmleResult> {
    data.check_classes()?;
    let cv_mode = cfg.method == Method::CvtmleQ;
    let q = estimate_q_initial(data, &cfg.library, cfg.k_sl, &mut q_stream(rng), cv_mode, cfg.k_outer)?;
    target(data, cfg.method, &q, g)
}

pub fn run_estimator(data: &ObservedData, cfg: &EstimatorConfig, rng: &RngState) -> Result<TmleResult> {
    data.check_classes()?;
    let g = estimate_g(data, &cfg.library, cfg.k_sl, &mut g_stream(rng))?;
    run_with_g(data, cfg, &g, rng)
}
