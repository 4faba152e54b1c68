//! Threshold incomplete LU factorization with dual dropping on an
//! approximate-minimum-degree reordering.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::amd;
use faer::sparse::SymbolicSparseColMatRef;

use super::Preconditioner;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IlutOptions {
    /// Each row of `L` and of `U` keeps at most `fill_factor · nnz(aᵢ)` entries.
    pub fill_factor: f64,
    /// Entries below `drop_tol · ‖aᵢ‖₂` are dropped.
    pub drop_tol: f64,
    /// Pivots below `pivot_shift · ‖aᵢ‖₂` in magnitude are replaced by that value.
    pub pivot_shift: f64,
    /// Reorder with AMD on the pattern of `A + Aᵀ` before factorizing.
    pub reorder: bool,
}

impl Default for IlutOptions {
    fn default() -> Self {
        IlutOptions {
            fill_factor: 80.0,
            drop_tol: 1e-12,
            pivot_shift: 1e-12,
            reorder: true,
        }
    }
}

/// `P A Pᵀ ≈ L U` with unit lower triangular `L`.
#[derive(Debug, Clone)]
pub struct Ilut {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    l_ptr: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    u_ptr: Vec<usize>,
    u_idx: Vec<usize>,
    u_val: Vec<f64>,
    diag: Vec<f64>,
    shifted_pivots: usize,
}

fn amd_order(m: &CsrMatrix) -> Result<Vec<usize>> {
    let n = m.nrows();
    // The CSR arrays of A are the CSC arrays of Aᵀ; AMD orders on A + Aᵀ either way.
    let sym = SymbolicSparseColMatRef::new_checked(n, n, m.indptr(), None, m.indices());
    let mut perm = vec![0usize; n];
    let mut perm_inv = vec![0usize; n];
    let req = amd::order_maybe_unsorted_scratch::<usize>(n, m.nnz());
    let mut buf = MemBuffer::new(req);
    amd::order_maybe_unsorted(
        &mut perm,
        &mut perm_inv,
        sym,
        amd::Control::default(),
        MemStack::new(&mut buf),
    )
    .map_err(|e| Error::Singular(format!("AMD ordering failed: {e:?}")))?;
    Ok(perm)
}

impl Ilut {
    pub fn new(m: &CsrMatrix, opts: IlutOptions) -> Result<Ilut> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::mismatch("square matrix columns", n, m.ncols()));
        }
        let perm = if opts.reorder && n > 0 {
            amd_order(m)?
        } else {
            (0..n).collect()
        };
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        let mut f = Ilut {
            n,
            perm,
            l_ptr: vec![0],
            l_idx: Vec::new(),
            l_val: Vec::new(),
            u_ptr: vec![0],
            u_idx: Vec::new(),
            u_val: Vec::new(),
            diag: vec![0.0; n],
            shifted_pivots: 0,
        };

        let mut w = vec![0.0; n];
        let mut in_row = vec![false; n];
        let mut pattern: Vec<usize> = Vec::new();
        let mut heap: BinaryHeap<Reverse<usize>> = BinaryHeap::new();
        let mut lower: Vec<(usize, f64)> = Vec::new();
        let mut upper: Vec<(usize, f64)> = Vec::new();

        for i in 0..n {
            let (cols, vals) = m.row(f.perm[i]);
            let row_norm = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
            let tol = opts.drop_tol * row_norm;
            let lfil = ((opts.fill_factor * cols.len() as f64).ceil() as usize).max(1);
            for (&c, &v) in cols.iter().zip(vals) {
                let j = inv[c];
                if !in_row[j] {
                    in_row[j] = true;
                    pattern.push(j);
                    if j < i {
                        heap.push(Reverse(j));
                    }
                }
                w[j] += v;
            }
            while let Some(Reverse(k)) = heap.pop() {
                let lik = w[k] / f.diag[k];
                if lik.abs() < tol {
                    w[k] = 0.0;
                    continue;
                }
                w[k] = lik;
                for p in f.u_ptr[k]..f.u_ptr[k + 1] {
                    let j = f.u_idx[p];
                    if !in_row[j] {
                        in_row[j] = true;
                        pattern.push(j);
                        if j < i {
                            heap.push(Reverse(j));
                        }
                    }
                    w[j] -= lik * f.u_val[p];
                }
            }

            lower.clear();
            upper.clear();
            let mut pivot = 0.0;
            for &j in &pattern {
                let v = w[j];
                if j == i {
                    pivot = v;
                } else if v != 0.0 && v.abs() >= tol {
                    if j < i {
                        lower.push((j, v));
                    } else {
                        upper.push((j, v));
                    }
                }
                w[j] = 0.0;
                in_row[j] = false;
            }
            pattern.clear();
            for part in [&mut lower, &mut upper] {
                if part.len() > lfil {
                    part.select_nth_unstable_by(lfil - 1, |a, b| b.1.abs().total_cmp(&a.1.abs()));
                    part.truncate(lfil);
                }
                part.sort_unstable_by_key(|e| e.0);
            }
            let floor = opts.pivot_shift * row_norm.max(f64::MIN_POSITIVE);
            if !(pivot.abs() >= floor) {
                pivot = if pivot < 0.0 { -floor } else { floor };
                f.shifted_pivots += 1;
            }
            f.diag[i] = pivot;
            for &(j, v) in lower.iter() {
                f.l_idx.push(j);
                f.l_val.push(v);
            }
            f.l_ptr.push(f.l_idx.len());
            for &(j, v) in upper.iter() {
                f.u_idx.push(j);
                f.u_val.push(v);
            }
            f.u_ptr.push(f.u_idx.len());
        }
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries of `L` and `U` including the diagonal.
    pub fn nnz(&self) -> usize {
        self.l_idx.len() + self.u_idx.len() + self.n
    }

    /// Number of pivots that were shifted away from zero.
    pub fn shifted_pivots(&self) -> usize {
        self.shifted_pivots
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.n];
        self.precondition(b, &mut z);
        z
    }
}

impl Preconditioner for Ilut {
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&old| r[old]).collect();
        for i in 0..n {
            let mut s = y[i];
            for p in self.l_ptr[i]..self.l_ptr[i + 1] {
                s -= self.l_val[p] * y[self.l_idx[p]];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for p in self.u_ptr[i]..self.u_ptr[i + 1] {
                s -= self.u_val[p] * y[self.u_idx[p]];
            }
            y[i] = s / self.diag[i];
        }
        for (new, &old) in self.perm.iter().enumerate() {
            z[old] = y[new];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_is_inverted_exactly() {
        let d = CsrMatrix::diagonal_matrix(&[2.0, -4.0, 0.5]);
        let f = Ilut::new(&d, IlutOptions::default()).unwrap();
        assert_eq!(f.solve(&[1.0, 1.0, 1.0]), vec![0.5, -0.25, 2.0]);
    }

    #[test]
    fn tridiagonal_is_factorized_exactly() {
        let n = 40;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0 + i as f64 * 0.01));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.3));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &t);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        for reorder in [false, true] {
            let f = Ilut::new(&a, IlutOptions { reorder, ..Default::default() }).unwrap();
            let x = f.solve(&b);
            assert!(super::super::residual_norm(&a, &x, &b) <= 1e-12 * super::super::norm(&b));
        }
    }

    #[test]
    fn generous_fill_gives_exact_lu_of_random_sparse() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 60;
        let mut t: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 8.0)).collect();
        for _ in 0..4 * n {
            t.push((rng.random_range(0..n), rng.random_range(0..n), rng.random_range(-1.0..1.0)));
        }
        let a = CsrMatrix::from_triplets(n, n, &t);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let opts = IlutOptions { fill_factor: 1000.0, drop_tol: 0.0, ..Default::default() };
        let x = Ilut::new(&a, opts).unwrap().solve(&b);
        assert!(super::super::residual_norm(&a, &x, &b) <= 1e-12 * super::super::norm(&b));
        // tight fill gives an approximation only
        let loose = Ilut::new(&a, IlutOptions { fill_factor: 0.2, ..Default::default() }).unwrap();
        assert!(loose.nnz() < Ilut::new(&a, opts).unwrap().nnz());
    }

    #[test]
    fn zero_pivot_is_shifted() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let f = Ilut::new(&a, IlutOptions { reorder: false, ..Default::default() }).unwrap();
        assert_eq!(f.shifted_pivots(), 1);
        assert!(f.solve(&[1.0, 1.0]).iter().all(|v| v.is_finite()));
    }
}
