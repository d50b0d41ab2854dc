//! GLM-family candidate learners for binary outcomes.
//!
//! Everything here is built on [`glm::fit_logistic`], an IRLS solver with
//! optional prior weights and offsets. The same solver runs the TMLE
//! fluctuation step.

pub mod design;
pub mod glm;
pub mod lasso;
pub mod stepwise;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use design::{expand_basis, DesignKind, DesignSpec};
pub use glm::{fit_gam, fit_glm, fit_logistic, predict_glm, GlmFit, LogisticFit, LogisticOptions};
pub use lasso::{fit_lasso, LassoFit};
pub use stepwise::fit_stepwise;

/// Covariate matrix plus a flag per column telling whether it is binary.
/// Flags are fixed when the data set is loaded and carried through row
/// subsets, so a training fold never reclassifies a column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Features {
    pub x: Matrix,
    pub binary: Vec<bool>,
}

impl Features {
    /// Wraps `x`, marking columns whose values are all 0 or 1 as binary.
    pub fn new(x: Matrix) -> Self {
        let binary = (0..x.cols())
            .map(|j| (0..x.rows()).all(|i| matches!(x.get(i, j), v if v == 0.0 || v == 1.0)))
            .collect();
        Features { x, binary }
    }

    pub fn with_types(x: Matrix, binary: Vec<bool>) -> Result<Self> {
        if binary.len() != x.cols() {
            return Err(Error::Dimension {
                expected: x.cols(),
                got: binary.len(),
                context: "column type flags",
            });
        }
        Ok(Features { x, binary })
    }

    pub fn rows(&self) -> usize {
        self.x.rows()
    }

    pub fn cols(&self) -> usize {
        self.x.cols()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Features {
        Features {
            x: self.x.select_rows(idx),
            binary: self.binary.clone(),
        }
    }

    /// New features with `column` prepended as column 0.
    pub fn prepend_column(&self, column: &[f64], binary: bool) -> Features {
        let n = self.rows();
        let p = self.cols() + 1;
        let mut x = Matrix::zeros(n, p);
        for i in 0..n {
            let r = x.row_mut(i);
            r[0] = column[i];
            r[1..].copy_from_slice(self.x.row(i));
        }
        let mut flags = Vec::with_capacity(p);
        flags.push(binary);
        flags.extend_from_slice(&self.binary);
        Features { x, binary: flags }
    }

    /// Copy with every entry of column `j` set to `value`.
    pub fn with_column_fixed(&self, j: usize, value: f64) -> Features {
        let mut out = self.clone();
        for i in 0..out.rows() {
            out.x.set(i, j, value);
        }
        out
    }
}

pub(crate) fn check_response(y: &[f64], n: usize) -> Result<()> {
    if y.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: y.len(),
            context: "response length",
        });
    }
    if let Some(i) = y.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Data {
            row: i + 1,
            message: format!("response {} outside [0, 1]", y[i]),
        });
    }
    Ok(())
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
