//! Row-major dense matrices and a Cholesky solver that drops aliased
//! columns, which is all the regression code needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: data.len(),
                context: "matrix buffer",
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    got: r.len(),
                    context: "matrix row length",
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        let cols = columns.len();
        let mut m = Matrix::zeros(rows, cols);
        for (j, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(Error::Dimension {
                    expected: rows,
                    got: c.len(),
                    context: "matrix column length",
                });
            }
            for (i, &v) in c.iter().enumerate() {
                m.data[i * cols + j] = v;
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn select_cols(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for i in 0..self.rows {
            let r = self.row(i);
            data.extend(idx.iter().map(|&j| r[j]));
        }
        Matrix {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower triangle of `X' diag(w) X` (full symmetric `p x p`, row-major) and
/// `X' r`.
pub fn weighted_gram(x: &Matrix, w: &[f64], r: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = x.cols();
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for i in 0..x.rows() {
        let xi = x.row(i);
        let wi = w[i];
        let ri = r[i];
        for (a, &xa) in xi.iter().enumerate() {
            rhs[a] += xa * ri;
            if wi == 0.0 || xa == 0.0 {
                continue;
            }
            let wxa = wi * xa;
            let g = &mut gram[a * p..a * p + a + 1];
            for (gb, &xb) in g.iter_mut().zip(xi) {
                *gb += wxa * xb;
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[b * p + a] = gram[a * p + b];
        }
    }
    (gram, rhs)
}

/// Cholesky factor of a symmetric positive semi-definite matrix, computed in
/// column order. A column whose remaining pivot falls below `tol` times its
/// diagonal is treated as aliased with earlier columns and excluded; solves
/// return 0 for it.
#[derive(Clone, Debug)]
pub struct Cholesky {
    p: usize,
    l: Vec<f64>,
    aliased: Vec<bool>,
}

pub const ALIAS_TOL: f64 = 1e-10;

impl Cholesky {
    pub fn factor(gram: &[f64], p: usize, tol: f64, forced_out: Option<&[bool]>) -> Cholesky {
        let mut l = vec![0.0; p * p];
        let mut aliased = vec![false; p];
        for j in 0..p {
            if forced_out.is_some_and(|f| f[j]) {
                aliased[j] = true;
                continue;
            }
            let diag = gram[j * p + j];
            let mut d = diag;
            for k in 0..j {
                d -= l[j * p + k] * l[j * p + k];
            }
            if diag.is_nan() || diag <= 0.0 || d <= tol * diag {
                aliased[j] = true;
                continue;
            }
            let ljj = d.sqrt();
            l[j * p + j] = ljj;
            for i in j + 1..p {
                let mut s = gram[i * p + j];
                for k in 0..j {
                    s -= l[i * p + k] * l[j * p + k];
                }
                l[i * p + j] = s / ljj;
            }
        }
        Cholesky { p, l, aliased }
    }

    pub fn aliased(&self) -> &[bool] {
        &self.aliased
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let p = self.p;
        let mut z = vec![0.0; p];
        for i in 0..p {
            if self.aliased[i] {
                continue;
            }
            let mut s = rhs[i];
            for k in 0..i {
                s -= self.l[i * p + k] * z[k];
            }
            z[i] = s / self.l[i * p + i];
        }
        let mut x = vec![0.0; p];
        for i in (0..p).rev() {
            if self.aliased[i] {
                continue;
            }
            let mut s = z[i];
            for k in i + 1..p {
                s -= self.l[k * p + i] * x[k];
            }
            x[i] = s / self.l[i * p + i];
        }
        x
    }

    /// Diagonal of the (generalized) inverse; aliased entries are NaN.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        (0..self.p)
            .map(|j| {
                if self.aliased[j] {
                    return f64::NAN;
                }
                let mut e = vec![0.0; self.p];
                e[j] = 1.0;
                self.solve(&e)[j]
            })
            .collect()
    }
}
