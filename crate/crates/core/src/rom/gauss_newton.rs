//! Gauss-Newton with backtracking for `min ½‖ρ(x)‖₂²`.

use std::rc::Rc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::norm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussNewtonOptions {
    /// Stop once `‖ρ‖ ≤ atol` or `‖Jᵀρ‖ ≤ atol·max(1, ‖J‖_F‖ρ‖)`.
    pub atol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Accept `λ` once `½‖ρ(x+λδ)‖² ≤ ½‖ρ(x)‖² − armijo·λ‖Jδ‖²`.
    pub armijo: f64,
}

impl Default for GaussNewtonOptions {
    fn default() -> Self {
        GaussNewtonOptions {
            atol: 1e-10,
            max_iter: 20,
            max_halvings: 10,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussNewtonOutcome {
    pub x: Vec<f64>,
    /// Number of accepted updates.
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Relative model decrease `‖Jδ‖²/‖ρ‖²` below which a failed line search
/// counts as convergence: the residual's round-off hides any further gain.
const STAGNATION: f64 = 1e-10;

/// Relative step `‖δ‖/(1+‖x‖)` below which a failed line search counts as
/// convergence: such an update is invisible in the reconstructed state.
const STEP_TOL: f64 = 1e-9;

enum Factor {
    /// Thin `Q` and `R` of a full-rank `J`.
    Qr(DMatrix<f64>, DMatrix<f64>),
    Svd(nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>, f64),
}

/// A factorized Jacobian for repeated least-squares solves: Householder QR,
/// or a truncated SVD when `R` is numerically rank deficient.
pub struct LeastSquares {
    j: DMatrix<f64>,
    factor: Option<Factor>,
}

impl LeastSquares {
    pub fn new(j: DMatrix<f64>) -> LeastSquares {
        let (m, n) = j.shape();
        if n == 0 {
            return LeastSquares { j, factor: None };
        }
        if m >= n {
            let qr = j.clone().qr();
            let r = qr.r();
            let dmax = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
            if dmax > 0.0 && (0..n).all(|i| r[(i, i)].abs() > 1e-12 * dmax) {
                let factor = Some(Factor::Qr(qr.q(), r));
                return LeastSquares { j, factor };
            }
        }
        let svd = j.clone().svd(true, true);
        let cut = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
        LeastSquares { j, factor: Some(Factor::Svd(svd, cut)) }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.j
    }

    /// Minimum-norm minimizer of `‖Jδ − b‖₂`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = DVector::from_column_slice(b);
        match &self.factor {
            None => Vec::new(),
            Some(Factor::Qr(q, r)) => {
                let qtb = q.tr_mul(&rhs);
                r.solve_upper_triangular(&qtb).expect("nonzero diagonal").as_slice().to_vec()
            }
            Some(Factor::Svd(svd, cut)) => svd.solve(&rhs, *cut).expect("SVD computed with U and V").as_slice().to_vec(),
        }
    }
}

/// A Jacobian that can produce least-squares steps. Plain matrices are
/// factorized per call; a shared [`LeastSquares`] is reused as is.
pub trait Linearization {
    fn matrix(&self) -> &DMatrix<f64>;
    fn step(&self, b: &[f64]) -> Vec<f64>;
}

impl Linearization for DMatrix<f64> {
    fn matrix(&self) -> &DMatrix<f64> {
        self
    }

    fn step(&self, b: &[f64]) -> Vec<f64> {
        least_squares(self, b)
    }
}

impl Linearization for Rc<LeastSquares> {
    fn matrix(&self) -> &DMatrix<f64> {
        &self.j
    }

    fn step(&self, b: &[f64]) -> Vec<f64> {
        self.solve(b)
    }
}

/// Least-squares solution of `J δ = b`; see [`LeastSquares`].
pub fn least_squares(j: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    LeastSquares::new(j.clone()).solve(b)
}

fn stationarity(j: &DMatrix<f64>, rho: &[f64]) -> (f64, f64) {
    let g = j.transpose() * DVector::from_column_slice(rho);
    (g.norm(), j.norm() * norm(rho))
}

/// Minimizes `‖ρ(x)‖₂` from `x0`. `jacobian(x)` returns `∂ρ/∂x` (`M×N`).
/// When `max_iter` is exhausted the error reports the best residual norm.
pub fn gauss_newton<L: Linearization>(
    mut residual: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    mut jacobian: impl FnMut(&[f64]) -> Result<L>,
    x0: &[f64],
    opts: &GaussNewtonOptions,
) -> Result<GaussNewtonOutcome> {
    let mut x = x0.to_vec();
    let mut rho = residual(&x)?;
    let mut rn = norm(&rho);
    let mut iterations = 0;
    let done = |x: Vec<f64>, iterations, rn| Ok(GaussNewtonOutcome { x, iterations, residual_norm: rn });
    loop {
        if !rn.is_finite() {
            return Err(Error::NotConverged { solver: "Gauss-Newton", iterations, residual: rn });
        }
        if rn <= opts.atol {
            return done(x, iterations, rn);
        }
        let j = jacobian(&x)?;
        let (g, scale) = stationarity(j.matrix(), &rho);
        if g <= opts.atol * scale.max(1.0) {
            return done(x, iterations, rn);
        }
        if iterations == opts.max_iter {
            return Err(Error::NotConverged { solver: "Gauss-Newton", iterations, residual: rn });
        }
        let minus: Vec<f64> = rho.iter().map(|v| -v).collect();
        let delta = j.step(&minus);
        let jd = j.matrix() * DVector::from_column_slice(&delta);
        let predicted = jd.norm_squared();
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + lambda * d).collect();
            let rt = residual(&trial)?;
            let nt = norm(&rt);
            if 0.5 * nt * nt <= 0.5 * rn * rn - opts.armijo * lambda * predicted {
                accepted = Some((trial, rt, nt));
                break;
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((xt, rt, nt)) => {
                x = xt;
                rho = rt;
                rn = nt;
                iterations += 1;
            }
            // no decrease left at round-off level: x is the minimizer
            None if predicted <= STAGNATION * rn * rn || norm(&delta) <= STEP_TOL * (1.0 + norm(&x)) => {
                return done(x, iterations, rn)
            }
            None => {
                return Err(Error::NotConverged { solver: "Gauss-Newton line search", iterations, residual: rn })
            }
        }
    }
}
