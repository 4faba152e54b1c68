//! Sparse direct factorizations backed by `faer`.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu};
use faer::{MatMut, Side};

use super::Preconditioner;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

fn check_square(m: &CsrMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::mismatch("square matrix columns", m.nrows(), m.ncols()));
    }
    Ok(())
}

/// Rejects factorizations that produce non-finite or inaccurate solutions
/// for the probe `A·1`.
fn probe(m: &CsrMatrix, solve: impl Fn(&mut [f64])) -> Result<()> {
    let n = m.nrows();
    if n == 0 {
        return Ok(());
    }
    let ones = vec![1.0; n];
    let b = m.mul_vec(&ones);
    let mut x = b.clone();
    solve(&mut x);
    let r = super::residual_norm(m, &x, &b);
    let scale = super::norm(&b).max(f64::MIN_POSITIVE);
    if !x.iter().all(|v| v.is_finite()) || !(r <= 1e-6 * scale) {
        return Err(Error::Singular(format!(
            "factorization of a {n}×{n} matrix is numerically singular"
        )));
    }
    Ok(())
}

/// Sparse LU with partial pivoting.
pub struct SparseLu {
    n: usize,
    lu: Lu<usize, f64>,
}

impl SparseLu {
    pub fn new(m: &CsrMatrix) -> Result<SparseLu> {
        check_square(m)?;
        let lu = m
            .to_faer()
            .sp_lu()
            .map_err(|e| Error::Singular(format!("sparse LU failed: {e:?}")))?;
        let f = SparseLu { n: m.nrows(), lu };
        probe(m, |x| f.solve_in_place(x))?;
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        if self.n > 0 {
            self.lu.solve_in_place(MatMut::from_column_major_slice_mut(x, self.n, 1));
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

impl Preconditioner for SparseLu {
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
        self.solve_in_place(z);
    }
}

/// Sparse Cholesky `A = LLᵀ` of a symmetric positive definite matrix.
pub struct SparseCholesky {
    n: usize,
    llt: Llt<usize, f64>,
}

impl SparseCholesky {
    pub fn new(m: &CsrMatrix) -> Result<SparseCholesky> {
        check_square(m)?;
        let llt = m
            .to_faer()
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Singular(format!("sparse Cholesky failed: {e:?}")))?;
        let f = SparseCholesky { n: m.nrows(), llt };
        probe(m, |x| f.solve_in_place(x))?;
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        if self.n > 0 {
            self.llt.solve_in_place(MatMut::from_column_major_slice_mut(x, self.n, 1));
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

impl Preconditioner for SparseCholesky {
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
        self.solve_in_place(z);
    }
}
