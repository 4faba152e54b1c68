//! Block solvers for the orientation and Stokes stage systems.

use super::{cg, dot, gmres, FnOperator, KrylovOptions, SparseCholesky, SparseLu};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Solves `[[J₁₁, cM], [G, M]] x = b` through the Schur complement
/// `S = J₁₁ − cG`, which needs no inverse of `M`.
pub struct OfieldSchur {
    mass: SparseCholesky,
    n: usize,
}

impl OfieldSchur {
    /// Factorizes the (vector) mass matrix `M` once.
    pub fn new(mass: &CsrMatrix) -> Result<OfieldSchur> {
        Ok(OfieldSchur {
            mass: SparseCholesky::new(mass)?,
            n: mass.nrows(),
        })
    }

    /// Returns the solution and the GMRES iteration count of the Schur solve.
    pub fn solve(
        &self,
        j11: &CsrMatrix,
        g: &CsrMatrix,
        c: f64,
        b: &[f64],
        opts: &KrylovOptions,
    ) -> Result<(Vec<f64>, usize)> {
        let n = self.n;
        if b.len() != 2 * n {
            return Err(Error::mismatch("orientation right-hand side", 2 * n, b.len()));
        }
        let (b1, b2) = b.split_at(n);
        // right factor: b₁ − J₁₂J₂₂⁻¹b₂ = b₁ − c·b₂
        let rhs: Vec<f64> = b1.iter().zip(b2).map(|(x, y)| x - c * y).collect();
        let s = CsrMatrix::lincomb(&[(1.0, j11), (-c, g)]);
        let out = gmres(&s, &rhs, None, None, opts).into_result("orientation Schur GMRES")?;
        let x1 = out.x;
        let mut x2 = b2.to_vec();
        g.matvec_add(-1.0, &x1, &mut x2);
        self.mass.solve_in_place(&mut x2);
        Ok(([x1, x2].concat(), out.iterations))
    }
}

#[derive(Debug, Clone)]
pub struct StokesSolution {
    pub u: Vec<f64>,
    /// Pressure with zero mass-weighted mean.
    pub p: Vec<f64>,
    /// CG iterations (0 for the direct solver).
    pub iterations: usize,
}

/// Shared setup of the saddle-point solvers: pressure DOF 0 is pinned, and
/// the result is shifted to zero mean, which leaves `Bᵀp` unchanged since
/// `Bᵀ1 = 0`.
struct Pinned {
    nu: usize,
    np: usize,
    b_red: CsrMatrix,
    mass_ones: Vec<f64>,
    total_mass: f64,
}

impl Pinned {
    fn new(a: &CsrMatrix, b: &CsrMatrix, mp: &CsrMatrix) -> Result<Pinned> {
        let (nu, np) = (a.nrows(), b.nrows());
        if b.ncols() != nu {
            return Err(Error::mismatch("divergence matrix columns", nu, b.ncols()));
        }
        if mp.nrows() != np || mp.ncols() != np {
            return Err(Error::mismatch("pressure mass dimension", np, mp.nrows()));
        }
        if np == 0 {
            return Err(Error::InvalidMesh("empty pressure space".into()));
        }
        let rows: Vec<usize> = (1..np).collect();
        let cols: Vec<usize> = (0..nu).collect();
        let mass_ones = mp.mul_vec(&vec![1.0; np]);
        Ok(Pinned {
            nu,
            np,
            b_red: b.select(&rows, &cols),
            total_mass: mass_ones.iter().sum(),
            mass_ones,
        })
    }

    fn check(&self, f: &[f64], g: &[f64]) -> Result<()> {
        if f.len() != self.nu {
            return Err(Error::mismatch("momentum right-hand side", self.nu, f.len()));
        }
        if g.len() != self.np {
            return Err(Error::mismatch("continuity right-hand side", self.np, g.len()));
        }
        Ok(())
    }

    fn finish(&self, p_red: &[f64]) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.np);
        p.push(0.0);
        p.extend_from_slice(p_red);
        self.center(p)
    }

    fn center(&self, mut p: Vec<f64>) -> Vec<f64> {
        let mean = dot(&self.mass_ones, &p) / self.total_mass;
        p.iter_mut().for_each(|x| *x -= mean);
        p
    }
}

/// `[[A, Bᵀ], [B, 0]] (u, p) = (f, g)` by pressure-mass preconditioned CG on
/// the Schur complement `B A⁻¹ Bᵀ`. Needs `Σ gᵢ = 0`. The Schur complement
/// is singular with kernel `span{1}`; the right-hand side is consistent
/// because `1ᵀB = 0`, so CG runs on the full pressure space.
pub struct StokesSchur {
    pinned: Pinned,
    b: CsrMatrix,
    a: SparseCholesky,
    mp: SparseCholesky,
}

impl StokesSchur {
    pub fn new(a: &CsrMatrix, b: &CsrMatrix, mp: &CsrMatrix) -> Result<StokesSchur> {
        let pinned = Pinned::new(a, b, mp)?;
        Ok(StokesSchur {
            a: SparseCholesky::new(a)?,
            mp: SparseCholesky::new(mp)?,
            b: b.clone(),
            pinned,
        })
    }

    pub fn solve(&self, f: &[f64], g: &[f64], opts: &KrylovOptions) -> Result<StokesSolution> {
        let pn = &self.pinned;
        pn.check(f, g)?;
        let b = &self.b;
        let mut rhs = g.iter().map(|x| -x).collect::<Vec<_>>();
        let ainv_f = self.a.solve(f);
        b.matvec_add(1.0, &ainv_f, &mut rhs);
        let schur = FnOperator {
            n: pn.np,
            f: |x: &[f64], y: &mut [f64]| {
                let mut t = vec![0.0; pn.nu];
                b.transpose_matvec_add(1.0, x, &mut t);
                self.a.solve_in_place(&mut t);
                b.matvec(&t, y);
            },
        };
        let out = cg(&schur, &rhs, None, Some(&self.mp), opts).into_result("Stokes Schur CG")?;
        let mut t = f.to_vec();
        b.transpose_matvec_add(-1.0, &out.x, &mut t);
        self.a.solve_in_place(&mut t);
        Ok(StokesSolution {
            u: t,
            p: pn.center(out.x),
            iterations: out.iterations,
        })
    }
}

/// Sparse LU of the pinned saddle-point matrix, factorized once.
pub struct StokesDirect {
    pinned: Pinned,
    lu: SparseLu,
}

impl StokesDirect {
    pub fn new(a: &CsrMatrix, b: &CsrMatrix, mp: &CsrMatrix) -> Result<StokesDirect> {
        let pinned = Pinned::new(a, b, mp)?;
        let bt = pinned.b_red.transpose();
        let k = CsrMatrix::block(&[vec![Some(a), Some(&bt)], vec![Some(&pinned.b_red), None]])?;
        Ok(StokesDirect {
            lu: SparseLu::new(&k)?,
            pinned,
        })
    }

    pub fn solve(&self, f: &[f64], g: &[f64]) -> Result<StokesSolution> {
        let pn = &self.pinned;
        pn.check(f, g)?;
        let mut x = [f, &g[1..]].concat();
        self.lu.solve_in_place(&mut x);
        let p = pn.finish(&x[pn.nu..]);
        x.truncate(pn.nu);
        Ok(StokesSolution {
            u: x,
            p,
            iterations: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_mass, assemble_stokes, Discretization};
    use crate::mesh::{CellKind, Mesh, Rect};
    use crate::solvers::norm;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_sparse(n: usize, rng: &mut ChaCha8Rng, diag: f64) -> CsrMatrix {
        let mut t: Vec<_> = (0..n).map(|i| (i, i, diag)).collect();
        for _ in 0..3 * n {
            t.push((rng.random_range(0..n), rng.random_range(0..n), rng.random_range(-0.5..0.5)));
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> CsrMatrix {
        let r = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        CsrMatrix::from_dense(&(&r * r.transpose() + DMatrix::identity(n, n)))
    }

    #[test]
    fn ofield_schur_solves_block_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let n = 12;
        let m = random_spd(n, &mut rng);
        let j11 = CsrMatrix::lincomb(&[(1.0, &m), (0.1, &random_sparse(n, &mut rng, 0.0))]);
        let g = random_sparse(n, &mut rng, -1.0);
        let c = 0.3;
        let b: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (x, _) = OfieldSchur::new(&m).unwrap().solve(&j11, &g, c, &b, &KrylovOptions::default()).unwrap();
        let cm = m.scaled(c);
        let j = CsrMatrix::block(&[vec![Some(&j11), Some(&cm)], vec![Some(&g), Some(&m)]]).unwrap();
        assert!(crate::solvers::residual_norm(&j, &x, &b) <= 1e-9 * norm(&b));
    }

    #[test]
    fn ofield_zero_coupling_is_block_triangular() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let n = 8;
        let m = random_spd(n, &mut rng);
        let g = random_sparse(n, &mut rng, 1.0);
        let b: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (x, _) = OfieldSchur::new(&m).unwrap().solve(&m, &g, 0.0, &b, &KrylovOptions::default()).unwrap();
        let md = m.to_dense();
        let x1 = md.clone().lu().solve(&DVector::from_column_slice(&b[..n])).unwrap();
        let rhs2 = DVector::from_column_slice(&b[n..]) - g.to_dense() * &x1;
        let x2 = md.lu().solve(&rhs2).unwrap();
        let want: Vec<f64> = x1.iter().chain(x2.iter()).copied().collect();
        assert!(x.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn ofield_factorization_identity() {
        // J = [[I, cI], [0, I]] · [[S, 0], [0, M]] · [[I, 0], [M⁻¹G, I]] on an 8-DOF instance
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let n = 4;
        let m = random_spd(n, &mut rng).to_dense();
        let j11 = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let c = 0.7;
        let id = DMatrix::<f64>::identity(n, n);
        let s = &j11 - &g * c;
        let mut left = DMatrix::identity(2 * n, 2 * n);
        left.view_mut((0, n), (n, n)).copy_from(&(&id * c));
        let mut mid = DMatrix::zeros(2 * n, 2 * n);
        mid.view_mut((0, 0), (n, n)).copy_from(&s);
        mid.view_mut((n, n), (n, n)).copy_from(&m);
        let mut right = DMatrix::identity(2 * n, 2 * n);
        right.view_mut((n, 0), (n, n)).copy_from(&(m.clone().try_inverse().unwrap() * &g));
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        j.view_mut((0, 0), (n, n)).copy_from(&j11);
        j.view_mut((0, n), (n, n)).copy_from(&(&m * c));
        j.view_mut((n, 0), (n, n)).copy_from(&g);
        j.view_mut((n, n), (n, n)).copy_from(&m);
        assert!((left * mid * right - j).abs().max() < 1e-12);
    }

    fn stokes_system(nx: usize) -> (Discretization, CsrMatrix, CsrMatrix, CsrMatrix) {
        let mesh = Arc::new(Mesh::build(nx, nx, Rect::square(1.0), CellKind::Simplicial).unwrap());
        let dz = Discretization::new(mesh).unwrap();
        let n = dz.n_scalar();
        let z = vec![0.0; n];
        let ops = assemble_stokes(dz.scalar_space(), dz.velocity_space(), &z, &z, &vec![0.0; 2 * n], &vec![0.0; 2 * n], 1.1, 1.0).unwrap();
        let mp = assemble_mass(dz.scalar_space());
        (dz, ops.a, ops.b, mp)
    }

    #[test]
    fn stokes_zero_rhs_gives_zero() {
        let (_, a, b, mp) = stokes_system(4);
        let s = StokesSchur::new(&a, &b, &mp).unwrap();
        let out = s.solve(&vec![0.0; a.nrows()], &vec![0.0; b.nrows()], &KrylovOptions::default()).unwrap();
        assert!(out.u.iter().all(|v| *v == 0.0) && out.p.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stokes_solvers_agree_and_satisfy_residual_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let (_, a, b, mp) = stokes_system(6);
        let f: Vec<f64> = (0..a.nrows()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = vec![0.0; b.nrows()];
        let it = StokesSchur::new(&a, &b, &mp).unwrap().solve(&f, &g, &KrylovOptions::default()).unwrap();
        let di = StokesDirect::new(&a, &b, &mp).unwrap().solve(&f, &g).unwrap();
        for sol in [&it, &di] {
            let mut r = a.mul_vec(&sol.u);
            b.transpose_matvec_add(1.0, &sol.p, &mut r);
            r.iter_mut().zip(&f).for_each(|(x, y)| *x -= y);
            assert!(norm(&r) <= 1e-9 * norm(&f));
            assert!(norm(&b.mul_vec(&sol.u)) <= 1e-9 * norm(&f));
            assert!(dot(&mp.mul_vec(&vec![1.0; b.nrows()]), &sol.p).abs() < 1e-12);
        }
        let du: f64 = it.u.iter().zip(&di.u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(du < 1e-8);
    }

    /// Manufactured solution: `u = curl ψ` with `ψ = x²(1−x)²y²(1−y)²` and
    /// `p = x − ½`. With `+∫ p div v` on the left the strong form is
    /// `−½Δu − ∇p = f`; the force enters as `∫ f·v`.
    #[test]
    fn stokes_manufactured_solution() {
        let mut errors = Vec::new();
        for nx in [4, 8] {
            let (dz, a, b, mp) = stokes_system(nx);
            let v = dz.velocity_space();
            let psi_d = |t: f64| 2.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
            let q = |t: f64| (t * (1.0 - t)).powi(2);
            let q3 = |t: f64| 24.0 * t - 12.0;
            let q2 = |t: f64| 2.0 - 12.0 * t + 12.0 * t * t;
            let exact = |x: [f64; 2]| [q(x[0]) * psi_d(x[1]), -psi_d(x[0]) * q(x[1])];
            // −½Δu − ∇p, with u₁ = ψ_y, u₂ = −ψ_x
            let force = |x: [f64; 2]| {
                let (s, t) = (x[0], x[1]);
                let lap_u1 = q2(s) * psi_d(t) + q(s) * q3(t);
                let lap_u2 = -(q3(s) * q(t) + psi_d(s) * q2(t));
                [-0.5 * lap_u1 - 1.0, -0.5 * lap_u2]
            };
            // load vector by interpolating f in the velocity space and applying the mass matrix
            let fi = v.interpolate_vector(force);
            let n2 = v.dof_count();
            let vm = dz.velocity_mass();
            let mut rhs = vm.mul_vec(&fi.values()[..n2]);
            rhs.extend(vm.mul_vec(&fi.values()[n2..]));
            let sol = StokesSchur::new(&a, &b, &mp).unwrap().solve(&rhs, &vec![0.0; b.nrows()], &KrylovOptions::default()).unwrap();
            let ue = v.interpolate_vector(exact);
            let diff: Vec<f64> = sol.u.iter().zip(ue.values()).map(|(x, y)| x - y).collect();
            let err = (dot(&diff[..n2], &vm.mul_vec(&diff[..n2])) + dot(&diff[n2..], &vm.mul_vec(&diff[n2..]))).sqrt();
            errors.push(err);
        }
        assert!(errors[1] < errors[0] / 3.0, "errors {errors:?}");
        assert!(errors[1] < 2e-3);
    }
}
