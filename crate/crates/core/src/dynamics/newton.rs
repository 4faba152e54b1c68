//! Newton's method with backtracking on the residual norm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::norm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonOptions {
    pub atol: f64,
    pub rtol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Sufficient decrease: accept `λ` once `‖r(x+λδ)‖ ≤ (1 − armijo·λ)‖r(x)‖`.
    pub armijo: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            atol: 1e-10,
            rtol: 1e-12,
            max_iter: 20,
            max_halvings: 10,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    /// Number of Newton steps taken.
    pub iterations: usize,
    /// `‖r‖` at every iterate, including the final one.
    pub residual_norms: Vec<f64>,
    /// Residual vectors at the iterates a step was taken from, if captured.
    pub residuals: Vec<Vec<f64>>,
}

/// Solves `r(x) = 0`. `solve(x, r)` must return the Newton step `δ` with
/// `J(x) δ = −r`. On failure the error carries the smallest residual norm
/// reached.
pub fn newton_backtracking(
    mut residual: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    mut solve: impl FnMut(&[f64], &[f64]) -> Result<Vec<f64>>,
    x0: &[f64],
    opts: &NewtonOptions,
    capture: bool,
) -> Result<NewtonOutcome> {
    let mut x = x0.to_vec();
    let mut r = residual(&x)?;
    let mut rn = norm(&r);
    let tol = opts.atol.max(opts.rtol * rn);
    let mut out = NewtonOutcome {
        x: Vec::new(),
        iterations: 0,
        residual_norms: vec![rn],
        residuals: Vec::new(),
    };
    let fail = |iterations, residual| Error::NotConverged {
        solver: "Newton",
        iterations,
        residual,
    };
    while !(rn <= tol) {
        if out.iterations == opts.max_iter || !rn.is_finite() {
            return Err(fail(out.iterations, rn));
        }
        let delta = solve(&x, &r)?;
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + lambda * d).collect();
            let rt = residual(&trial)?;
            let nt = norm(&rt);
            if nt <= (1.0 - opts.armijo * lambda) * rn {
                accepted = Some((trial, rt, nt));
                break;
            }
            lambda *= 0.5;
        }
        let Some((xn, rnew, nn)) = accepted else {
            return Err(fail(out.iterations, rn));
        };
        if capture {
            out.residuals.push(std::mem::replace(&mut r, rnew));
        } else {
            r = rnew;
        }
        x = xn;
        rn = nn;
        out.iterations += 1;
        out.residual_norms.push(rn);
    }
    out.x = x;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_residual_converges_in_one_step() {
        // r(x) = Ax − b with A = diag(2, 4)
        let out = newton_backtracking(
            |x| Ok(vec![2.0 * x[0] - 2.0, 4.0 * x[1] - 8.0]),
            |_, r| Ok(vec![-r[0] / 2.0, -r[1] / 4.0]),
            &[0.0, 0.0],
            &NewtonOptions::default(),
            true,
        )
        .unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.x, vec![1.0, 2.0]);
        assert_eq!(out.residuals, vec![vec![-2.0, -8.0]]);
    }

    #[test]
    fn scalar_cubic() {
        let out = newton_backtracking(
            |x| Ok(vec![x[0].powi(3) - 1.0]),
            |x, r| Ok(vec![-r[0] / (3.0 * x[0] * x[0])]),
            &[2.0],
            &NewtonOptions::default(),
            false,
        )
        .unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-12);
        assert!(out.iterations <= 10);
        assert!(out.residual_norms.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn backtracking_rescues_overshooting_steps() {
        // arctan: full Newton steps diverge from x = 3
        let out = newton_backtracking(
            |x| Ok(vec![x[0].atan()]),
            |x, r| Ok(vec![-r[0] * (1.0 + x[0] * x[0])]),
            &[3.0],
            &NewtonOptions::default(),
            false,
        )
        .unwrap();
        assert!(out.x[0].abs() < 1e-10);
        assert!(out.residual_norms.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn failure_is_reported() {
        // no real root: r(x) = x² + 1
        let err = newton_backtracking(
            |x| Ok(vec![x[0] * x[0] + 1.0]),
            |x, r| Ok(vec![-r[0] / (2.0 * x[0])]),
            &[0.5],
            &NewtonOptions::default(),
            false,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotConverged { solver: "Newton", .. }));
    }
}
