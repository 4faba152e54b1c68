//! Discrete empirical interpolation: greedy DOF selection and the
//! interpolation operator `C(ZᵀC)⁻¹Zᵀ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A column whose interpolation residual is below this fraction of its
/// max-norm is treated as linearly dependent on the previous columns.
const RANK_TOL: f64 = 1e-10;

/// Greedy interpolation DOFs for the columns of `c` (each of length `n`).
///
/// DOF `j` maximizes the residual of interpolating column `j` by columns
/// `0..j` at DOFs `0..j`. Ties resolve to the smallest index.
pub fn deim_select(c: &[Vec<f64>]) -> Result<Vec<usize>> {
    let Some(n) = c.first().map(Vec::len) else {
        return Ok(Vec::new());
    };
    if let Some(bad) = c.iter().position(|v| v.len() != n) {
        return Err(Error::mismatch("collateral basis column", n, c[bad].len()));
    }
    let mut dofs: Vec<usize> = Vec::with_capacity(c.len());
    for (j, col) in c.iter().enumerate() {
        let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !scale.is_finite() || scale == 0.0 {
            return Err(Error::RankDeficient { column: j });
        }
        let res = if j == 0 {
            col.clone()
        } else {
            let coef = interpolation_coefficients(&c[..j], &dofs, |m| col[dofs[m]])
                .ok_or(Error::RankDeficient { column: j })?;
            let mut r = col.clone();
            for (k, a) in coef.iter().enumerate() {
                for (ri, ci) in r.iter_mut().zip(&c[k]) {
                    *ri -= a * ci;
                }
            }
            r
        };
        let (arg, max) = argmax_abs(&res);
        if max <= RANK_TOL * scale {
            return Err(Error::RankDeficient { column: j });
        }
        debug_assert!(!dofs.contains(&arg));
        dofs.push(arg);
    }
    Ok(dofs)
}

fn argmax_abs(v: &[f64]) -> (usize, f64) {
    let mut best = (0, -1.0);
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best.1 {
            best = (i, x.abs());
        }
    }
    best
}

/// `(ZᵀC)`, the `M×M` matrix of the columns sampled at the DOFs.
fn sampled(c: &[Vec<f64>], dofs: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(dofs.len(), c.len(), |i, j| c[j][dofs[i]])
}

fn interpolation_coefficients(
    c: &[Vec<f64>],
    dofs: &[usize],
    values: impl Fn(usize) -> f64,
) -> Option<DVector<f64>> {
    let b = DVector::from_fn(dofs.len(), |i, _| values(i));
    sampled(c, dofs).lu().solve(&b)
}

/// Collateral basis `C`, interpolation DOFs `Z` and `(ZᵀC)⁻¹`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeimInterpolant {
    basis: Vec<Vec<f64>>,
    dofs: Vec<usize>,
    /// `(ZᵀC)⁻¹`, row-major.
    inverse: Vec<f64>,
    /// `R(ZᵀC)⁻¹` with `CᵀC = RᵀR`, row-major: `‖C(ZᵀC)⁻¹r_Z‖₂` in `M` numbers.
    norm_map: Vec<f64>,
}

/// `R(ZᵀC)⁻¹` for the upper Cholesky factor `R` of the Gram matrix `CᵀC`.
fn norm_map(basis: &[Vec<f64>], inverse: &[f64]) -> Result<Vec<f64>> {
    let m = basis.len();
    let gram = DMatrix::from_fn(m, m, |i, j| basis[i].iter().zip(&basis[j]).map(|(a, b)| a * b).sum::<f64>());
    let chol = gram.cholesky().ok_or_else(|| Error::Singular("Gram matrix of the collateral basis".into()))?;
    let map = chol.l().transpose() * DMatrix::from_row_slice(m, m, inverse);
    Ok((0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| map[(i, j)]).collect())
}

impl DeimInterpolant {
    /// Selects DOFs greedily and inverts `ZᵀC`.
    pub fn new(basis: Vec<Vec<f64>>) -> Result<DeimInterpolant> {
        let dofs = deim_select(&basis)?;
        Self::with_dofs(basis, dofs)
    }

    /// Uses the given DOFs; they must be distinct and make `ZᵀC` invertible.
    pub fn with_dofs(basis: Vec<Vec<f64>>, dofs: Vec<usize>) -> Result<DeimInterpolant> {
        let m = basis.len();
        if dofs.len() != m {
            return Err(Error::mismatch("interpolation DOFs", m, dofs.len()));
        }
        let n = basis.first().map_or(0, Vec::len);
        let mut seen = dofs.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != m || seen.last().is_some_and(|&d| d >= n) {
            return Err(Error::Config("interpolation DOFs must be distinct and in range".into()));
        }
        let inv = sampled(&basis, &dofs)
            .try_inverse()
            .ok_or_else(|| Error::Singular("sampled collateral basis ZᵀC".into()))?;
        let inverse: Vec<f64> = (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| inv[(i, j)]).collect();
        let norm_map = norm_map(&basis, &inverse)?;
        Ok(DeimInterpolant { basis, dofs, inverse, norm_map })
    }

    pub(crate) fn from_parts(basis: Vec<Vec<f64>>, dofs: Vec<usize>, inverse: Vec<f64>) -> Result<Self> {
        let m = basis.len();
        if dofs.len() != m || inverse.len() != m * m {
            return Err(Error::Format("inconsistent interpolant sizes".into()));
        }
        let norm_map = norm_map(&basis, &inverse)?;
        Ok(DeimInterpolant { basis, dofs, inverse, norm_map })
    }

    /// Number of interpolation DOFs `M`.
    pub fn len(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }

    pub fn dofs(&self) -> &[usize] {
        &self.dofs
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub(crate) fn inverse(&self) -> &[f64] {
        &self.inverse
    }

    pub(crate) fn norm_map(&self) -> &[f64] {
        &self.norm_map
    }

    /// A vector with the Euclidean norm of the interpolant,
    /// `‖R(ZᵀC)⁻¹ r_Z‖₂ = ‖C(ZᵀC)⁻¹ r_Z‖₂`.
    pub fn norm_coordinates(&self, r_at_dofs: &[f64]) -> Vec<f64> {
        let m = self.len();
        assert_eq!(r_at_dofs.len(), m, "values must match the interpolation DOFs");
        (0..m)
            .map(|i| self.norm_map[i * m..(i + 1) * m].iter().zip(r_at_dofs).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Coefficients `(ZᵀC)⁻¹ r_Z` of the interpolant in the basis `C`.
    pub fn coefficients(&self, r_at_dofs: &[f64]) -> Vec<f64> {
        let m = self.len();
        assert_eq!(r_at_dofs.len(), m, "values must match the interpolation DOFs");
        (0..m)
            .map(|i| {
                let row = &self.inverse[i * m..(i + 1) * m];
                row.iter().zip(r_at_dofs).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// The full interpolant `C(ZᵀC)⁻¹ r_Z`.
    pub fn interpolate(&self, r_at_dofs: &[f64]) -> Vec<f64> {
        let coef = self.coefficients(r_at_dofs);
        let n = self.basis.first().map_or(0, Vec::len);
        let mut out = vec![0.0; n];
        for (a, col) in coef.iter().zip(&self.basis) {
            for (o, c) in out.iter_mut().zip(col) {
                *o += a * c;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    fn random_basis(n: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    /// Dense greedy: re-solves the full least-squares-free interpolation
    /// problem from scratch with explicit matrices at every step.
    fn brute_force_greedy(c: &[Vec<f64>]) -> Vec<usize> {
        let n = c[0].len();
        let mut dofs = Vec::new();
        for j in 0..c.len() {
            let mut best = (0, -1.0);
            for i in 0..n {
                let r = if j == 0 {
                    c[0][i]
                } else {
                    let a = DMatrix::from_fn(j, j, |p, q| c[q][dofs[p]]);
                    let b = DVector::from_fn(j, |p, _| c[j][dofs[p]]);
                    let x = a.full_piv_lu().solve(&b).unwrap();
                    c[j][i] - (0..j).map(|q| x[q] * c[q][i]).sum::<f64>()
                };
                if r.abs() > best.1 {
                    best = (i, r.abs());
                }
            }
            dofs.push(best.0);
        }
        dofs
    }

    #[test]
    fn norm_coordinates_carry_the_interpolant_norm() {
        for seed in 0..5 {
            let c = random_basis(30, 6, 100 + seed);
            let it = DeimInterpolant::new(c).unwrap();
            let r: Vec<f64> = random_basis(6, 1, 200 + seed).remove(0);
            let full = it.interpolate(&r);
            let direct = full.iter().map(|v| v * v).sum::<f64>().sqrt();
            let short = it.norm_coordinates(&r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((direct - short).abs() <= 1e-12 * direct, "{direct} vs {short}");
        }
    }

    #[test]
    fn unit_vectors_pick_their_support() {
        assert_eq!(deim_select(&[unit(10, 7)]).unwrap(), vec![7]);
        let mut d = deim_select(&[unit(5, 1), unit(5, 2)]).unwrap();
        d.sort();
        assert_eq!(d, vec![1, 2]);
    }

    #[test]
    fn greedy_matches_dense_oracle() {
        for seed in 0..5 {
            let c = random_basis(20, 3, seed);
            assert_eq!(deim_select(&c).unwrap(), brute_force_greedy(&c));
        }
    }

    #[test]
    fn dependent_column_is_reported() {
        let a = random_basis(12, 2, 3);
        let dep: Vec<f64> = a[0].iter().zip(&a[1]).map(|(x, y)| 2.0 * x - y).collect();
        let c = vec![a[0].clone(), a[1].clone(), dep];
        match deim_select(&c) {
            Err(Error::RankDeficient { column }) => assert_eq!(column, 2),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        assert!(matches!(
            deim_select(&[vec![0.0; 4]]),
            Err(Error::RankDeficient { column: 0 })
        ));
    }

    #[test]
    fn span_members_are_reproduced() {
        let c = random_basis(30, 4, 11);
        let interp = DeimInterpolant::new(c.clone()).unwrap();
        let r: Vec<f64> = (0..30).map(|i| 0.5 * c[0][i] - 2.0 * c[3][i] + c[2][i]).collect();
        let at: Vec<f64> = interp.dofs().iter().map(|&d| r[d]).collect();
        let rec = interp.interpolate(&at);
        for (a, b) in rec.iter().zip(&r) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!(interp.interpolate(&[0.0; 4]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn off_dof_error_matches_dense_oracle() {
        let c = random_basis(25, 5, 2);
        let interp = DeimInterpolant::new(c.clone()).unwrap();
        let r = random_basis(25, 1, 99).remove(0);
        let z = interp.dofs().to_vec();
        let at: Vec<f64> = z.iter().map(|&d| r[d]).collect();
        let rec = interp.interpolate(&at);
        // oracle: explicit matrices
        let cm = DMatrix::from_fn(25, 5, |i, j| c[j][i]);
        let pt = DMatrix::from_fn(5, 25, |i, j| if z[i] == j { 1.0 } else { 0.0 });
        let oracle = &cm * (&pt * &cm).try_inverse().unwrap() * (&pt * DVector::from_vec(r.clone()));
        for i in 0..25 {
            assert!((rec[i] - oracle[i]).abs() <= 1e-12 * (1.0 + oracle[i].abs()));
        }
        for &d in &z {
            assert!((rec[d] - r[d]).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn interpolant_is_exact_at_dofs(seed in 0u64..1000, m in 1usize..6) {
            let c = random_basis(40, m, seed);
            let interp = DeimInterpolant::new(c).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let r: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
            let at: Vec<f64> = interp.dofs().iter().map(|&d| r[d]).collect();
            let rec = interp.interpolate(&at);
            let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            for &d in interp.dofs() {
                prop_assert!((rec[d] - r[d]).abs() <= 1e-12 * rn);
            }
            let mut d = interp.dofs().to_vec();
            d.sort();
            d.dedup();
            prop_assert_eq!(d.len(), m);
        }
    }
}
