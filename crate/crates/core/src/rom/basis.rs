//! Dense reduced bases stored row-major, so that restricting to a DOF set
//! is a row gather.

use crate::error::{Error, Result};
use crate::pod::InnerProduct;

#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    n: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Basis {
    /// The basis with the given columns, all of length `n`.
    pub fn from_columns(n: usize, columns: &[Vec<f64>]) -> Result<Basis> {
        if let Some(c) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::mismatch("basis vector", n, c.len()));
        }
        let cols = columns.len();
        let mut data = vec![0.0; n * cols];
        for (j, c) in columns.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                data[i * cols + j] = *v;
            }
        }
        Ok(Basis { n, cols, data })
    }

    pub fn identity(n: usize) -> Basis {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Basis { n, cols: n, data }
    }

    pub(crate) fn from_row_major(n: usize, cols: usize, data: Vec<f64>) -> Result<Basis> {
        if data.len() != n * cols {
            return Err(Error::mismatch("basis entries", n * cols, data.len()));
        }
        Ok(Basis { n, cols, data })
    }

    /// Full dimension `n`.
    pub fn nrows(&self) -> usize {
        self.n
    }

    /// Reduced dimension `N`.
    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub(crate) fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.data[i * self.cols + j]).collect()
    }

    /// `V x̄`; every entry is [`row_dot`] of a row, as in restricted evaluation.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.cols, "reduced coordinates");
        (0..self.n).map(|i| row_dot(self.row(i), coeffs)).collect()
    }

    /// `VᵀW v`, the coefficients of the `W`-orthogonal projection.
    pub fn project(&self, w: &InnerProduct, v: &[f64]) -> Vec<f64> {
        let wv = w.apply(v);
        let mut out = vec![0.0; self.cols];
        for (i, x) in wv.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(self.row(i)) {
                *o += b * x;
            }
        }
        out
    }

    /// `max |VᵀWV − I|`.
    pub fn orthonormality_defect(&self, w: &InnerProduct) -> f64 {
        let cols: Vec<Vec<f64>> = (0..self.cols).map(|j| self.column(j)).collect();
        let mut worst = 0.0f64;
        for (j, c) in cols.iter().enumerate() {
            let wc = w.apply(c);
            for (k, d) in cols.iter().enumerate() {
                let g: f64 = d.iter().zip(&wc).map(|(a, b)| a * b).sum();
                worst = worst.max((g - if j == k { 1.0 } else { 0.0 }).abs());
            }
        }
        worst
    }
}

/// The dot product used for every basis reconstruction.
#[inline]
pub fn row_dot(row: &[f64], coeffs: &[f64]) -> f64 {
    row.iter().zip(coeffs).map(|(a, b)| a * b).sum()
}
