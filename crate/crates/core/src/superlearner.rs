//! Cross-validated stacking over a library of binary-outcome learners.
//!
//! Cross-validated predictions for every (fold, learner) pair form the
//! matrix `Z`; meta-weights minimize the binomial negative log-likelihood
//! of `Z w` over the probability simplex; every learner is then refit on
//! the full data and the ensemble predicts `sum_l w_l f_l(x)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{fit_gam, fit_glm, fit_lasso, fit_stepwise, mean, predict_glm, DesignKind, Features, GlmFit};
use crate::linalg::Matrix;
use crate::rng::RngState;
use crate::trees::{fit_random_forest, predict_forest, ForestParams, RandomForest};

/// Clamp applied to predictions inside the meta-objective.
pub const META_CLAMP: f64 = 1e-6;
pub const META_TOL: f64 = 1e-10;
pub const META_MAX_ITER: usize = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerSpec {
    Mean,
    Glm,
    GlmInteraction,
    Stepwise,
    Lasso,
    RandomForest(ForestParams),
    Gam,
}

impl LearnerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::Mean => "mean",
            LearnerSpec::Glm => "glm",
            LearnerSpec::GlmInteraction => "glm_interaction",
            LearnerSpec::Stepwise => "stepwise",
            LearnerSpec::Lasso => "lasso",
            LearnerSpec::RandomForest(_) => "random_forest",
            LearnerSpec::Gam => "gam",
        }
    }

    pub fn fit(&self, features: &Features, y: &[f64], rng: &mut RngState) -> Result<FittedLearner> {
        Ok(match self {
            LearnerSpec::Mean => {
                crate::learners::check_response(y, features.rows())?;
                if y.is_empty() {
                    return Err(Error::domain("mean learner needs at least 1 row"));
                }
                FittedLearner::Mean(mean(y))
            }
            LearnerSpec::Glm => FittedLearner::Glm(fit_glm(features, y, DesignKind::MainTerms)?),
            LearnerSpec::GlmInteraction => FittedLearner::Glm(fit_glm(features, y, DesignKind::PolyInteractions)?),
            LearnerSpec::Stepwise => FittedLearner::Glm(fit_stepwise(features, y)?),
            LearnerSpec::Lasso => FittedLearner::Glm(fit_lasso(features, y, rng)?.glm),
            LearnerSpec::RandomForest(params) => FittedLearner::Forest(fit_random_forest(&features.x, y, params, rng)?),
            LearnerSpec::Gam => FittedLearner::Glm(fit_gam(features, y)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FittedLearner {
    Mean(f64),
    Glm(GlmFit),
    Forest(RandomForest),
}

impl FittedLearner {
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        match self {
            FittedLearner::Mean(m) => Ok(vec![*m; x.rows()]),
            FittedLearner::Glm(fit) => predict_glm(fit, x, None),
            FittedLearner::Forest(f) => predict_forest(f, x),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerLibrary {
    learners: Vec<LearnerSpec>,
}

impl LearnerLibrary {
    pub fn new(learners: Vec<LearnerSpec>) -> Result<Self> {
        if learners.is_empty() {
            return Err(Error::Config("learner library is empty".into()));
        }
        for (i, l) in learners.iter().enumerate() {
            if learners[..i].iter().any(|o| o.name() == l.name()) {
                return Err(Error::Config(format!("learner {} listed twice", l.name())));
            }
        }
        Ok(LearnerLibrary { learners })
    }

    /// Stepwise AIC, main-terms GLM and GLM with squares and interactions.
    pub fn default_preset() -> Self {
        LearnerLibrary {
            learners: vec![LearnerSpec::Stepwise, LearnerSpec::Glm, LearnerSpec::GlmInteraction],
        }
    }

    /// The default preset plus lasso, random forest and GAM.
    pub fn extended_preset() -> Self {
        let mut learners = Self::default_preset().learners;
        learners.extend([
            LearnerSpec::Lasso,
            LearnerSpec::RandomForest(ForestParams::default()),
            LearnerSpec::Gam,
        ]);
        LearnerLibrary { learners }
    }

    pub fn learners(&self) -> &[LearnerSpec] {
        &self.learners
    }

    pub fn len(&self) -> usize {
        self.learners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.learners.is_empty()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.learners.iter().map(LearnerSpec::name).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LibraryPreset {
    Default,
    Rf,
}

impl LibraryPreset {
    pub fn library(self) -> LearnerLibrary {
        match self {
            LibraryPreset::Default => LearnerLibrary::default_preset(),
            LibraryPreset::Rf => LearnerLibrary::extended_preset(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LibraryPreset::Default => "default",
            LibraryPreset::Rf => "rf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "default" => Some(LibraryPreset::Default),
            "rf" => Some(LibraryPreset::Rf),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold: Vec<usize>,
}

impl FoldAssignment {
    pub fn validation(&self, v: usize) -> Vec<usize> {
        (0..self.fold.len()).filter(|&i| self.fold[i] == v).collect()
    }

    /// `(training, validation)` row indices for fold `v`, both ascending.
    pub fn split(&self, v: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.fold.len()).partition(|&i| self.fold[i] != v)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold {
            s[f] += 1;
        }
        s
    }
}

/// Stratified fold assignment. Within each stratum level (ascending) the
/// members are shuffled, then all subjects are dealt round-robin in that
/// order, so fold sizes differ by at most one overall and each stratum is
/// spread as evenly as possible.
pub fn make_folds(n: usize, k: usize, strata: Option<&[f64]>, rng: &mut RngState) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::domain(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::domain(format!("{k} folds for {n} subjects")));
    }
    let mut order: Vec<usize> = Vec::with_capacity(n);
    match strata {
        Some(s) => {
            if s.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: s.len(),
                    context: "fold strata",
                });
            }
            let mut levels = s.to_vec();
            levels.sort_by(f64::total_cmp);
            levels.dedup();
            for level in levels {
                let mut members: Vec<usize> = (0..n).filter(|&i| s[i] == level).collect();
                rng.shuffle(&mut members);
                order.extend(members);
            }
        }
        None => {
            order.extend(0..n);
            rng.shuffle(&mut order);
        }
    }
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    Ok(FoldAssignment { k, fold })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerFailure {
    pub learner: String,
    /// Fold index, or `None` for the full-data refit.
    pub fold: Option<usize>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvPredictions {
    pub z: Matrix,
    pub failures: Vec<LearnerFailure>,
}

fn task_tag(fold: usize, learner: usize) -> u64 {
    ((fold as u64) << 16) | learner as u64
}

/// Cross-validated predictions, one column per learner. Task `(v, l)`
/// draws from substream `task_tag(v, l)` of a stream split off `rng`.
pub fn cv_risk_matrix(
    library: &LearnerLibrary,
    features: &Features,
    y: &[f64],
    folds: &FoldAssignment,
    rng: &mut RngState,
) -> Result<CvPredictions> {
    let base = rng.split();
    cv_predictions_from(library, features, y, folds, &base)
}

fn cv_predictions_from(
    library: &LearnerLibrary,
    features: &Features,
    y: &[f64],
    folds: &FoldAssignment,
    base: &RngState,
) -> Result<CvPredictions> {
    let n = features.rows();
    crate::learners::check_response(y, n)?;
    if folds.fold.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: folds.fold.len(),
            context: "fold assignment",
        });
    }
    let l_count = library.len();
    let tasks: Vec<(usize, usize)> = (0..folds.k).flat_map(|v| (0..l_count).map(move |l| (v, l))).collect();
    let outputs: Vec<(Vec<usize>, Vec<f64>, Option<LearnerFailure>)> = tasks
        .par_iter()
        .map(|&(v, l)| {
            let (train, valid) = folds.split(v);
            let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let spec = &library.learners[l];
            let mut rng = base.substream(task_tag(v, l));
            let attempt = spec
                .fit(&features.select_rows(&train), &ytr, &mut rng)
                .and_then(|f| f.predict(&features.x.select_rows(&valid)));
            match attempt {
                Ok(p) => (valid, p, None),
                Err(e) => {
                    let m = if ytr.is_empty() { 0.5 } else { mean(&ytr) };
                    let fail = LearnerFailure {
                        learner: spec.name().to_string(),
                        fold: Some(v),
                        message: e.to_string(),
                    };
                    (valid.clone(), vec![m; valid.len()], Some(fail))
                }
            }
        })
        .collect();
    let mut z = Matrix::zeros(n, l_count);
    let mut failures = Vec::new();
    for ((_, l), (valid, pred, fail)) in tasks.iter().zip(outputs) {
        for (i, p) in valid.into_iter().zip(pred) {
            z.set(i, *l, p);
        }
        failures.extend(fail);
    }
    Ok(CvPredictions { z, failures })
}

/// Mean binomial negative log-likelihood with predictions clamped to
/// `[META_CLAMP, 1 - META_CLAMP]`.
pub fn binomial_nll(p: &[f64], y: &[f64]) -> f64 {
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(META_CLAMP, 1.0 - META_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    total / p.len() as f64
}

fn clamp_matrix(z: &Matrix) -> Matrix {
    let data = z
        .as_slice()
        .iter()
        .map(|v| v.clamp(META_CLAMP, 1.0 - META_CLAMP))
        .collect();
    Matrix::from_vec(z.rows(), z.cols(), data).expect("same shape")
}

/// Simplex weights minimizing the binomial NLL of `Z w`, by
/// exponentiated gradient with an adaptive step. The result is never worse
/// than the best single column.
pub fn solve_meta_weights(z: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    let n = z.rows();
    let l = z.cols();
    crate::learners::check_response(y, n)?;
    if l == 0 {
        return Err(Error::domain("no learners to weight"));
    }
    if l == 1 {
        return Ok(vec![1.0]);
    }
    let zc = clamp_matrix(z);
    let objective = |w: &[f64]| binomial_nll(&zc.mul_vec(w), y);

    let mut w = vec![1.0 / l as f64; l];
    let mut obj = objective(&w);
    let mut step = 1.0;
    for _ in 0..META_MAX_ITER {
        let p = zc.mul_vec(&w);
        let mut grad = vec![0.0; l];
        for i in 0..n {
            let d = -(y[i] / p[i] - (1.0 - y[i]) / (1.0 - p[i])) / n as f64;
            for (g, zij) in grad.iter_mut().zip(zc.row(i)) {
                *g += d * zij;
            }
        }
        let gmin = grad.iter().copied().fold(f64::INFINITY, f64::min);
        let mut cand: Vec<f64> = w
            .iter()
            .zip(&grad)
            .map(|(wi, g)| wi * (-step * (g - gmin)).exp())
            .collect();
        let s: f64 = cand.iter().sum();
        cand.iter_mut().for_each(|c| *c /= s);
        let cand_obj = objective(&cand);
        if cand_obj <= obj {
            let change = obj - cand_obj;
            w = cand;
            obj = cand_obj;
            step *= 2.0;
            if change < META_TOL {
                break;
            }
        } else {
            step *= 0.5;
            if step < 1e-20 {
                break;
            }
        }
    }

    let vertex = (0..l)
        .map(|j| (j, binomial_nll(&zc.column(j), y)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one learner");
    if vertex.1 < obj {
        w = vec![0.0; l];
        w[vertex.0] = 1.0;
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    Ok(w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlModel {
    pub names: Vec<String>,
    pub fits: Vec<FittedLearner>,
    pub weights: Vec<f64>,
    /// Cross-validated NLL per learner.
    pub cv_risk: Vec<f64>,
    /// Cross-validated NLL of the weighted ensemble.
    pub ensemble_cv_risk: f64,
    pub folds: FoldAssignment,
    pub failures: Vec<LearnerFailure>,
}

pub fn fit_superlearner(
    library: &LearnerLibrary,
    features: &Features,
    y: &[f64],
    k: usize,
    rng: &mut RngState,
) -> Result<SlModel> {
    let n = features.rows();
    if n < k {
        return Err(Error::domain(format!("{k} folds for {n} subjects")));
    }
    let folds = make_folds(n, k, Some(y), rng)?;
    let base = rng.split();
    let cv = cv_predictions_from(library, features, y, &folds, &base)?;
    let weights = solve_meta_weights(&cv.z, y)?;
    let cv_risk = (0..library.len()).map(|j| binomial_nll(&cv.z.column(j), y)).collect();
    let ensemble_cv_risk = binomial_nll(&clamp_matrix(&cv.z).mul_vec(&weights), y);

    let mut failures = cv.failures;
    let fitted: Vec<Result<FittedLearner>> = library
        .learners
        .par_iter()
        .enumerate()
        .map(|(l, spec)| spec.fit(features, y, &mut base.substream(task_tag(k, l))))
        .collect();
    let mut fits = Vec::with_capacity(library.len());
    for (spec, f) in library.learners.iter().zip(fitted) {
        match f {
            Ok(f) => fits.push(f),
            Err(e) => {
                failures.push(LearnerFailure {
                    learner: spec.name().to_string(),
                    fold: None,
                    message: e.to_string(),
                });
                fits.push(FittedLearner::Mean(mean(y)));
            }
        }
    }
    Ok(SlModel {
        names: library.names().iter().map(|s| s.to_string()).collect(),
        fits,
        weights,
        cv_risk,
        ensemble_cv_risk,
        folds,
        failures,
    })
}

impl SlModel {
    /// Weighted ensemble prediction, clamped to the meta-objective bounds.
    /// Learners with zero weight are not evaluated.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.rows()];
        for (fit, &w) in self.fits.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(fit.predict(x)?) {
                *o += w * p;
            }
        }
        Ok(out.into_iter().map(|p| p.clamp(META_CLAMP, 1.0 - META_CLAMP)).collect())
    }
}
