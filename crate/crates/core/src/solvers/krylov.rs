//! Restarted GMRES and preconditioned conjugate gradients.

use super::{dot, norm, LinearOperator, Preconditioner};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KrylovOptions {
    /// Stop once `‖b − Ax‖ ≤ rtol·‖b‖`.
    pub rtol: f64,
    /// GMRES restart length.
    pub restart: usize,
    /// GMRES: number of restart cycles. CG: `max_restarts · restart` iterations.
    pub max_restarts: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        KrylovOptions {
            rtol: 1e-10,
            restart: 100,
            max_restarts: 10,
        }
    }
}

/// Result of an iterative solve. On failure `x` is the best iterate found.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Recomputed `‖b − Ax‖ / ‖b‖` (absolute when `b = 0`).
    pub residual: f64,
    pub converged: bool,
}

impl SolveOutcome {
    pub fn into_result(self, solver: &'static str) -> Result<SolveOutcome> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                solver,
                iterations: self.iterations,
                residual: self.residual,
            })
        }
    }
}

fn true_residual(op: &impl LinearOperator, x: &[f64], b: &[f64], r: &mut [f64]) -> f64 {
    op.apply(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    norm(r)
}

/// Right-preconditioned restarted GMRES: solves `A M⁻¹ y = b`, `x = M⁻¹ y`.
pub fn gmres(
    op: &impl LinearOperator,
    b: &[f64],
    x0: Option<&[f64]>,
    precond: Option<&dyn Preconditioner>,
    opts: &KrylovOptions,
) -> SolveOutcome {
    let n = op.dim();
    assert_eq!(b.len(), n, "right-hand side length");
    let mut x = x0.map_or_else(|| vec![0.0; n], |v| v.to_vec());
    let bnorm = norm(b);
    let scale = if bnorm > 0.0 { bnorm } else { 1.0 };
    let target = opts.rtol * bnorm;
    let m = opts.restart.max(1);
    let mut r = vec![0.0; n];
    let mut beta = true_residual(op, &x, b, &mut r);
    let mut iterations = 0;
    if beta <= target {
        return SolveOutcome {
            x,
            iterations,
            residual: beta / scale,
            converged: true,
        };
    }
    let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut z = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut h = vec![vec![0.0; m]; m + 1];
    let (mut cs, mut sn, mut g) = (vec![0.0; m], vec![0.0; m], vec![0.0; m + 1]);
    for _cycle in 0..opts.max_restarts.max(1) {
        v.clear();
        v.push(r.iter().map(|ri| ri / beta).collect());
        g.iter_mut().for_each(|x| *x = 0.0);
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            match precond {
                Some(p) => p.precondition(&v[k], &mut z),
                None => z.copy_from_slice(&v[k]),
            }
            op.apply(&z, &mut w);
            // modified Gram-Schmidt
            for (j, vj) in v.iter().enumerate() {
                let hj = dot(&w, vj);
                h[j][k] = hj;
                w.iter_mut().zip(vj).for_each(|(wi, vi)| *wi -= hj * vi);
            }
            let hn = norm(&w);
            h[k + 1][k] = hn;
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let rho = h[k][k].hypot(h[k + 1][k]);
            if rho == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = h[k][k] / rho;
                sn[k] = h[k + 1][k] / rho;
            }
            h[k][k] = rho;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            iterations += 1;
            k_used = k + 1;
            if g[k + 1].abs() <= target || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|wi| wi / hn).collect());
        }
        // back substitution for y, then x += M⁻¹ V y
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        let mut update = vec![0.0; n];
        for (yj, vj) in y.iter().zip(&v) {
            update.iter_mut().zip(vj).for_each(|(u, vi)| *u += yj * vi);
        }
        match precond {
            Some(p) => p.precondition(&update, &mut z),
            None => z.copy_from_slice(&update),
        }
        x.iter_mut().zip(&z).for_each(|(xi, zi)| *xi += zi);
        beta = true_residual(op, &x, b, &mut r);
        if beta <= target {
            return SolveOutcome {
                x,
                iterations,
                residual: beta / scale,
                converged: true,
            };
        }
        if !beta.is_finite() {
            break;
        }
    }
    SolveOutcome {
        x,
        iterations,
        residual: beta / scale,
        converged: false,
    }
}

/// Preconditioned conjugate gradients for symmetric positive definite `A`.
pub fn cg(
    op: &impl LinearOperator,
    b: &[f64],
    x0: Option<&[f64]>,
    precond: Option<&dyn Preconditioner>,
    opts: &KrylovOptions,
) -> SolveOutcome {
    let n = op.dim();
    assert_eq!(b.len(), n, "right-hand side length");
    let mut x = x0.map_or_else(|| vec![0.0; n], |v| v.to_vec());
    let bnorm = norm(b);
    let scale = if bnorm > 0.0 { bnorm } else { 1.0 };
    let target = opts.rtol * bnorm;
    let max_iter = opts.restart.max(1) * opts.max_restarts.max(1);
    let mut r = vec![0.0; n];
    let mut rnorm = true_residual(op, &x, b, &mut r);
    let mut z = vec![0.0; n];
    let apply_p = |r: &[f64], z: &mut [f64]| match precond {
        Some(p) => p.precondition(r, z),
        None => z.copy_from_slice(r),
    };
    apply_p(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    let mut best = (rnorm, x.clone());
    while rnorm > target && iterations < max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= alpha * api);
        iterations += 1;
        rnorm = norm(&r);
        if rnorm <= target {
            // confirm with the true residual
            rnorm = true_residual(op, &x, b, &mut r);
        }
        if rnorm < best.0 {
            best = (rnorm, x.clone());
        }
        apply_p(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    let (_, xb) = best;
    let res = true_residual(op, &xb, b, &mut r);
    SolveOutcome {
        x: xb,
        iterations,
        residual: res / scale,
        converged: res <= target,
    }
}
