//! Design matrices: main terms, second-order polynomial with pairwise
//! interactions, and a natural cubic spline basis for GAMs.
//!
//! Column order is deterministic: intercept, then per-input main terms in
//! input order, then (for `PolyInteractions`) squares of continuous inputs,
//! then products `x_i x_j` for `i < j` in lexicographic order. The spline
//! basis replaces each continuous input by its linear term followed by the
//! truncated-power natural spline terms.

use serde::{Deserialize, Serialize};

use super::Features;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    MainTerms,
    PolyInteractions,
    SplineGam,
}

/// Quantiles at which the spline knots sit: both boundaries and three
/// interior knots.
pub const KNOT_QUANTILES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Everything needed to rebuild a design on new rows: column types, the
/// main-term subset, frozen knots, and which expanded columns survived the
/// zero-variance check on the training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub binary: Vec<bool>,
    /// Input columns used as main terms (all inputs unless a selection
    /// procedure chose a subset).
    pub main: Vec<usize>,
    /// Knots per input column; empty for binary inputs or non-spline designs.
    pub knots: Vec<Vec<f64>>,
    /// Indices into the full expansion that are kept.
    pub keep: Vec<usize>,
    /// Indices of the full expansion dropped for zero training variance.
    pub dropped: Vec<usize>,
}

impl DesignSpec {
    /// Learns knots and degenerate columns from training features.
    pub fn learn(kind: DesignKind, features: &Features) -> DesignSpec {
        let main: Vec<usize> = (0..features.cols()).collect();
        Self::learn_with_main(kind, features, main)
    }

    pub fn learn_with_main(kind: DesignKind, features: &Features, main: Vec<usize>) -> DesignSpec {
        let knots = (0..features.cols())
            .map(|j| {
                if kind == DesignKind::SplineGam && !features.binary[j] && main.contains(&j) {
                    spline_knots(&features.x.column(j))
                } else {
                    Vec::new()
                }
            })
            .collect();
        let mut spec = DesignSpec {
            kind,
            binary: features.binary.clone(),
            main,
            knots,
            keep: Vec::new(),
            dropped: Vec::new(),
        };
        let full = spec.full_expansion(&features.x);
        for j in 0..full.cols() {
            if j == 0 || !constant_column(&full, j) {
                spec.keep.push(j);
            } else {
                spec.dropped.push(j);
            }
        }
        spec
    }

    pub fn n_columns(&self) -> usize {
        self.keep.len()
    }

    fn full_expansion(&self, x: &Matrix) -> Matrix {
        let n = x.rows();
        let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
        match self.kind {
            DesignKind::MainTerms => {
                for &j in &self.main {
                    cols.push(x.column(j));
                }
            }
            DesignKind::PolyInteractions => {
                let main: Vec<Vec<f64>> = self.main.iter().map(|&j| x.column(j)).collect();
                cols.extend(main.iter().cloned());
                for (k, &j) in self.main.iter().enumerate() {
                    if !self.binary[j] {
                        cols.push(main[k].iter().map(|v| v * v).collect());
                    }
                }
                for a in 0..main.len() {
                    for b in a + 1..main.len() {
                        cols.push(main[a].iter().zip(&main[b]).map(|(u, v)| u * v).collect());
                    }
                }
            }
            DesignKind::SplineGam => {
                for &j in &self.main {
                    let c = x.column(j);
                    let knots = &self.knots[j];
                    if knots.len() < 3 {
                        cols.push(c);
                        continue;
                    }
                    let basis: Vec<Vec<f64>> = c.iter().map(|&v| natural_spline_row(v, knots)).collect();
                    for b in 0..knots.len() - 1 {
                        cols.push(basis.iter().map(|r| r[b]).collect());
                    }
                }
            }
        }
        Matrix::from_columns(&cols).expect("columns share the row count")
    }
}

/// Builds the design matrix for `w` under a spec learned on training data.
pub fn expand_basis(w: &Matrix, spec: &DesignSpec) -> Result<Matrix> {
    if w.cols() != spec.binary.len() {
        return Err(Error::Dimension {
            expected: spec.binary.len(),
            got: w.cols(),
            context: "covariate columns for design",
        });
    }
    Ok(spec.full_expansion(w).select_cols(&spec.keep))
}

fn constant_column(m: &Matrix, j: usize) -> bool {
    let first = m.get(0, j);
    (1..m.rows()).all(|i| m.get(i, j) == first)
}

/// Type-7 sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn spline_knots(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut knots: Vec<f64> = KNOT_QUANTILES.iter().map(|&q| quantile_sorted(&sorted, q)).collect();
    knots.dedup();
    knots
}

/// Natural cubic spline basis with knots `k_1 < ... < k_K`: the linear term
/// followed by `d_j(x) - d_{K-1}(x)` for `j = 1..K-2`, where
/// `d_j(x) = ((x - k_j)_+^3 - (x - k_K)_+^3) / (k_K - k_j)`. The result is
/// cubic between knots, linear outside the boundary knots, and C2.
pub fn natural_spline_row(x: f64, knots: &[f64]) -> Vec<f64> {
    let k = knots.len();
    let last = knots[k - 1];
    let d = |j: usize| {
        let c = |t: f64| (x - t).max(0.0).powi(3);
        (c(knots[j]) - c(last)) / (last - knots[j])
    };
    let d_pen = d(k - 2);
    let mut row = Vec::with_capacity(k - 1);
    row.push(x);
    for j in 0..k - 2 {
        row.push(d(j) - d_pen);
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgm::generate_covariates;
    use crate::rng::RngState;

    fn dgm_features(n: usize) -> Features {
        Features::new(generate_covariates(n, &mut RngState::from_seed(99)).unwrap())
    }

    #[test]
    fn column_counts() {
        let f = dgm_features(500);
        assert_eq!(f.binary.iter().filter(|b| !**b).count(), 2);
        let main = DesignSpec::learn(DesignKind::MainTerms, &f);
        assert_eq!(expand_basis(&f.x, &main).unwrap().cols(), 9);
        let poly = DesignSpec::learn(DesignKind::PolyInteractions, &f);
        assert_eq!(poly.keep.len() + poly.dropped.len(), 39);
        // At n=500 every product column has some variation.
        assert_eq!(expand_basis(&f.x, &poly).unwrap().cols(), 39);
        let gam = DesignSpec::learn(DesignKind::SplineGam, &f);
        // 6 binary + 2 continuous x 4 spline columns + intercept.
        assert_eq!(expand_basis(&f.x, &gam).unwrap().cols(), 1 + 6 + 8);
    }

    #[test]
    fn degenerate_columns_are_dropped() {
        let x = Matrix::from_rows(&[
            vec![0.0, 1.0, 0.3],
            vec![0.0, 0.0, -1.2],
            vec![0.0, 1.0, 2.0],
            vec![0.0, 0.0, 0.1],
        ])
        .unwrap();
        let f = Features::new(x);
        let spec = DesignSpec::learn(DesignKind::PolyInteractions, &f);
        // Full: 1 + 3 main + 1 square + 3 products = 8. Column 0 of the
        // input is constant, so its main term and its two products drop.
        assert_eq!(spec.dropped, vec![1, 5, 6]);
        let m = expand_basis(&f.x, &spec).unwrap();
        assert_eq!(m.cols(), 5);
        assert!(expand_basis(&Matrix::zeros(2, 2), &spec).is_err());
    }

    #[test]
    fn knots_frozen_from_training() {
        let f = dgm_features(400);
        let spec = DesignSpec::learn(DesignKind::SplineGam, &f);
        let train = expand_basis(&f.x, &spec).unwrap();
        let first_rows = f.select_rows(&[0, 1, 2]);
        let again = expand_basis(&first_rows.x, &spec).unwrap();
        for i in 0..3 {
            assert_eq!(train.row(i), again.row(i));
        }
        assert_eq!(spec.knots[2].len(), 5);
        assert!(spec.knots[0].is_empty());
    }

    #[test]
    fn spline_is_c2_at_knots_and_linear_beyond() {
        let knots = [-2.0, -0.7, 0.1, 0.6, 2.3];
        let h = 1e-4;
        let second = |x: f64, b: usize| {
            let f = |t: f64| natural_spline_row(t, &knots)[b];
            (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
        };
        let first = |x: f64, b: usize| {
            let f = |t: f64| natural_spline_row(t, &knots)[b];
            (f(x + h) - f(x - h)) / (2.0 * h)
        };
        for b in 0..4 {
            for &k in &knots {
                // Left and right one-sided second differences agree.
                let left = second(k - 3.0 * h, b);
                let right = second(k + 3.0 * h, b);
                assert!((left - right).abs() < 1e-2, "basis {b} knot {k}: {left} vs {right}");
                let d1l = first(k - 3.0 * h, b);
                let d1r = first(k + 3.0 * h, b);
                assert!((d1l - d1r).abs() < 1e-2);
            }
            // Zero curvature outside the boundary knots (a wide step keeps
            // rounding out of the difference quotient).
            let wide = |x: f64| {
                let f = |t: f64| natural_spline_row(t, &knots)[b];
                f(x + 0.1) - 2.0 * f(x) + f(x - 0.1)
            };
            assert!(wide(-3.0).abs() < 1e-10);
            assert!(wide(4.0).abs() < 1e-10);
        }
    }
}
