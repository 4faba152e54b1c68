//! Linear solvers: sparse direct factorizations, incomplete LU, restarted
//! GMRES, preconditioned CG and the block solvers of the orientation and
//! Stokes stages.

mod direct;
mod ilu;
mod krylov;
mod schur;

pub use direct::{SparseCholesky, SparseLu};
pub use ilu::{Ilut, IlutOptions};
pub use krylov::{cg, gmres, KrylovOptions, SolveOutcome};
pub use schur::{OfieldSchur, StokesDirect, StokesSchur, StokesSolution};

use crate::sparse::CsrMatrix;

/// A square linear map `x ↦ Ax`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    /// `y = A x`; `y` is overwritten.
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        assert_eq!(self.nrows(), self.ncols(), "operator must be square");
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y);
    }
}

/// Wraps a closure as a [`LinearOperator`].
pub struct FnOperator<F: Fn(&[f64], &mut [f64])> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64])> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
}

/// Approximate inverse `z ≈ A⁻¹ r`. Application is deterministic.
pub trait Preconditioner {
    fn precondition(&self, r: &[f64], z: &mut [f64]);
}

/// The identity preconditioner.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Preconditioner for Identity {
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `‖Ax − b‖₂`
pub fn residual_norm(op: &impl LinearOperator, x: &[f64], b: &[f64]) -> f64 {
    let mut y = vec![0.0; b.len()];
    op.apply(x, &mut y);
    y.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}
