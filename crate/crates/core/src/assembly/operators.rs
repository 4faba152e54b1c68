//! Stand-alone assembly of the individual finite element operators.
//!
//! Scalar fields live on an order-`p` space, velocities on a vector-valued
//! order-`p+1` Dirichlet space. Vector coefficients are component-major.

use std::sync::Arc;

use crate::element::{ElementTables, Tabulation};
use crate::error::{Error, Result};
use crate::fespace::{FunctionSpace, CONSTRAINED};
use crate::sparse::{AssemblyPattern, CsrMatrix, ElementLayout};

#[inline]
pub(crate) fn gather(idx: &[usize], v: &[f64], out: &mut [f64]) {
    for (o, &i) in out.iter_mut().zip(idx) {
        *o = if i == CONSTRAINED { 0.0 } else { v[i] };
    }
}

pub(crate) fn check_len(what: &'static str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::mismatch(what, expected, v.len()));
    }
    Ok(())
}

fn check_same_mesh(a: &FunctionSpace, b: &FunctionSpace) -> Result<()> {
    if !Arc::ptr_eq(a.mesh(), b.mesh()) {
        return Err(Error::SpaceMismatch("spaces are defined on different meshes".into()));
    }
    if b.order() != a.order() + 1 {
        return Err(Error::SpaceMismatch(format!(
            "velocity order {} must exceed scalar order {} by one",
            b.order(),
            a.order()
        )));
    }
    Ok(())
}

fn tab<'a>(tables: &'a ElementTables, space: &FunctionSpace, e: usize) -> &'a Tabulation {
    tables.get(space.order(), space.mesh().geometry_class(e))
}

/// `W'(φ)` for `W(φ) = ¼(φ²−1)²`.
#[inline]
pub fn double_well_d1(phi: f64) -> f64 {
    phi * phi * phi - phi
}

#[inline]
pub fn double_well_d2(phi: f64) -> f64 {
    3.0 * phi * phi - 1.0
}

#[inline]
pub fn double_well(phi: f64) -> f64 {
    0.25 * (phi * phi - 1.0).powi(2)
}

/// `∫ φᵢ φⱼ`
pub fn assemble_mass(space: &FunctionSpace) -> CsrMatrix {
    let tables = ElementTables::new(space.mesh());
    let layout = ElementLayout::new(space, 1);
    AssemblyPattern::new(&layout, &layout).assemble(|e, local| {
        mass_local(tab(&tables, space, e), 1.0, local, local_stride(space))
    })
}

/// `∫ ∇φᵢ · ∇φⱼ`
pub fn assemble_stiffness(space: &FunctionSpace) -> CsrMatrix {
    let tables = ElementTables::new(space.mesh());
    let layout = ElementLayout::new(space, 1);
    AssemblyPattern::new(&layout, &layout).assemble(|e, local| {
        stiffness_local(tab(&tables, space, e), 1.0, local, local_stride(space))
    })
}

fn local_stride(space: &FunctionSpace) -> usize {
    space.local_count()
}

/// Adds `alpha ∫ vₐ v_b` into the leading `n × n` block of a row-major
/// matrix with row stride `stride`. Symmetric by construction.
#[inline]
pub(crate) fn mass_local(t: &Tabulation, alpha: f64, local: &mut [f64], stride: usize) {
    weighted_mass_local(t, alpha, |_| 1.0, local, stride)
}

#[inline]
pub(crate) fn weighted_mass_local(
    t: &Tabulation,
    alpha: f64,
    weight: impl Fn(usize) -> f64,
    local: &mut [f64],
    stride: usize,
) {
    let n = t.n_loc;
    for q in 0..t.num_points() {
        let wq = alpha * t.weights[q] * weight(q);
        let v = t.values(q);
        for a in 0..n {
            let va = wq * v[a];
            for b in a..n {
                let s = va * v[b];
                local[a * stride + b] += s;
                if b != a {
                    local[b * stride + a] += s;
                }
            }
        }
    }
}

#[inline]
pub(crate) fn stiffness_local(t: &Tabulation, alpha: f64, local: &mut [f64], stride: usize) {
    let n = t.n_loc;
    for q in 0..t.num_points() {
        let wq = alpha * t.weights[q];
        let g = t.grads(q);
        for a in 0..n {
            for b in a..n {
                let s = wq * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                local[a * stride + b] += s;
                if b != a {
                    local[b * stride + a] += s;
                }
            }
        }
    }
}

/// Velocity and velocity gradient `∇u[a][b] = ∂u_a/∂x_b` at a quadrature point.
#[inline]
pub(crate) fn velocity_at(t2: &Tabulation, q: usize, lu: &[f64]) -> ([f64; 2], [[f64; 2]; 2]) {
    let n2 = t2.n_loc;
    let (ux, uy) = (&lu[..n2], &lu[n2..2 * n2]);
    ([t2.eval(q, ux), t2.eval(q, uy)], [t2.eval_grad(q, ux), t2.eval_grad(q, uy)])
}

/// `B(u)ᵢⱼ = ∫ (u·∇φᵢ) φⱼ` on the scalar space.
pub fn assemble_convection_pfield(
    space: &FunctionSpace,
    velocity_space: &FunctionSpace,
    u: &[f64],
) -> Result<CsrMatrix> {
    check_same_mesh(space, velocity_space)?;
    check_len("velocity coefficients", u, 2 * velocity_space.dof_count())?;
    let tables = ElementTables::new(space.mesh());
    let layout = ElementLayout::new(space, 1);
    let vlayout = ElementLayout::new(velocity_space, 2);
    let mut lu = vec![0.0; vlayout.local_len()];
    Ok(AssemblyPattern::new(&layout, &layout).assemble(|e, local| {
        gather(vlayout.element(e), u, &mut lu);
        let t = tab(&tables, space, e);
        let t2 = tab(&tables, velocity_space, e);
        convection_local(t, t2, &lu, 1.0, local, t.n_loc);
    }))
}

/// Adds `alpha ∫ (u·∇vₐ) v_b`.
#[inline]
pub(crate) fn convection_local(
    t: &Tabulation,
    t2: &Tabulation,
    lu: &[f64],
    alpha: f64,
    local: &mut [f64],
    stride: usize,
) {
    let n = t.n_loc;
    for q in 0..t.num_points() {
        let (uq, _) = velocity_at(t2, q, lu);
        let wq = alpha * t.weights[q];
        let v = t.values(q);
        let g = t.grads(q);
        for a in 0..n {
            let adv = wq * (uq[0] * g[a][0] + uq[1] * g[a][1]);
            for b in 0..n {
                local[a * stride + b] += adv * v[b];
            }
        }
    }
}

/// Nonlinear phase-field vectors `f(φ, μ)`, `g(φ)` and `a(d)`.
#[derive(Debug, Clone)]
pub struct PfieldNonlinears {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub a: Vec<f64>,
}

/// `fᵢ = ∫ W''(φ) μ φᵢ`, `gᵢ = ∫ W'(φ) φᵢ`, `aᵢ = ∫ |d|² φᵢ`.
pub fn assemble_pfield_nonlinears(
    space: &FunctionSpace,
    phi: &[f64],
    mu: &[f64],
    d: &[f64],
) -> Result<PfieldNonlinears> {
    let n = space.dof_count();
    check_len("phase field", phi, n)?;
    check_len("chemical potential", mu, n)?;
    check_len("orientation field", d, 2 * n)?;
    let tables = ElementTables::new(space.mesh());
    let layout = ElementLayout::new(space, 1);
    let dlayout = ElementLayout::new(space, 2);
    let nl = space.local_count();
    let (mut lp, mut lm, mut ld) = (vec![0.0; nl], vec![0.0; nl], vec![0.0; 2 * nl]);
    let mut gather_all = |e: usize| {
        gather(layout.element(e), phi, &mut lp);
        gather(layout.element(e), mu, &mut lm);
        gather(dlayout.element(e), d, &mut ld);
        (lp.clone(), lm.clone(), ld.clone())
    };
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut a = vec![0.0; n];
    for e in 0..space.mesh().num_elements() {
        let (lp, lm, ld) = gather_all(e);
        let t = tab(&tables, space, e);
        let dofs = layout.element(e);
        for q in 0..t.num_points() {
            let (p, m) = (t.eval(q, &lp), t.eval(q, &lm));
            let (dx, dy) = (t.eval(q, &ld[..nl]), t.eval(q, &ld[nl..]));
            let w = t.weights[q];
            let (fq, gq, aq) = (
                w * double_well_d2(p) * m,
                w * double_well_d1(p),
                w * (dx * dx + dy * dy),
            );
            for (k, &i) in dofs.iter().enumerate() {
                let v = t.values(q)[k];
                f[i] += fq * v;
                g[i] += gq * v;
                a[i] += aq * v;
            }
        }
    }
    Ok(PfieldNonlinears { f, g, a })
}

/// `(D_φ f)ᵢⱼ = ∫ 6φμ φᵢφⱼ` and `(D_μ f)ᵢⱼ = (D_φ g)ᵢⱼ = ∫ (3φ²−1) φᵢφⱼ`.
pub fn assemble_pfield_jacobian_blocks(
    space: &FunctionSpace,
    phi: &[f64],
    mu: &[f64],
) -> Result<(CsrMatrix, CsrMatrix)> {
    let n = space.dof_count();
    check_len("phase field", phi, n)?;
    check_len("chemical potential", mu, n)?;
    let tables = ElementTables::new(space.mesh());
    let layout = ElementLayout::new(space, 1);
    let pattern = AssemblyPattern::new(&layout, &layout);
    let nl = space.local_count();
    let (mut lp, mut lm) = (vec![0.0; nl], vec![0.0; nl]);
    let dphi_f = pattern.assemble(|e, local| {
        gather(layout.element(e), phi, &mut lp);
        gather(layout.element(e), mu, &mut lm);
        let t = tab(&tables, space, e);
        weighted_mass_local(t, 6.0, |q| t.eval(q, &lp) * t.eval(q, &lm), local, nl);
    });
    let dmu_f = pattern.assemble(|e, local| {
        gather(layout.element(e), phi, &mut lp);
        let t = tab(&tables, space, e);
        weighted_mass_local(t, 1.0, |q| double_well_d2(t.eval(q, &lp)), local, nl);
    });
    Ok((dphi_f, dmu_f))
}

/// Orientation-field operators on the vector-valued order-`p` space.
#[derive(Debug, Clone)]
pub struct OfieldOperators {
    /// `M_of`
    pub mass: CsrMatrix,
    /// `E_of`
    pub stiffness: CsrMatrix,
    /// `B_of(u)`
    pub convection: CsrMatrix,
    /// `C(φ)`
    pub coupling: CsrMatrix,
    /// `f_of(d)`
    pub nonlinear: Vec<f64>,
    /// `D_d f_of(d)`
    pub nonlinear_jacobian: CsrMatrix,
}

pub fn assemble_ofield_operators(
    space: &FunctionSpace,
    velocity_space: &FunctionSpace,
    u: &[f64],
    phi: &[f64],
    d: &[f64],
    xi: f64,
) -> Result<OfieldOperators> {
    check_same_mesh(space, velocity_space)?;
    let n = space.dof_count();
    check_len("velocity coefficients", u, 2 * velocity_space.dof_count())?;
    check_len("phase field", phi, n)?;
    check_len("orientation field", d, 2 * n)?;
    let tables = ElementTables::new(space.mesh());
    let slayout = ElementLayout::new(space, 1);
    let layout = ElementLayout::new(space, 2);
    let vlayout = ElementLayout::new(velocity_space, 2);
    let pattern = AssemblyPattern::new(&layout, &layout);
    let nl = space.local_count();
    let m = 2 * nl;
    let classes = |e| {
        (
            tab(&tables, space, e),
            tab(&tables, velocity_space, e),
        )
    };

    let mass = pattern.assemble(|e, local| {
        let (t, _) = classes(e);
        for c in 0..2 {
            mass_local(t, 1.0, &mut local[c * nl * m + c * nl..], m);
        }
    });
    let stiffness = pattern.assemble(|e, local| {
        let (t, _) = classes(e);
        for c in 0..2 {
            stiffness_local(t, 1.0, &mut local[c * nl * m + c * nl..], m);
        }
    });
    let mut lu = vec![0.0; vlayout.local_len()];
    let convection = pattern.assemble(|e, local| {
        gather(vlayout.element(e), u, &mut lu);
        let (t, t2) = classes(e);
        ofield_convection_local(t, t2, &lu, xi, 1.0, local, m);
    });
    let mut lp = vec![0.0; nl];
    let coupling = pattern.assemble(|e, local| {
        gather(slayout.element(e), phi, &mut lp);
        let (t, _) = classes(e);
        for c in 0..2 {
            weighted_mass_local(t, 1.0, |q| t.eval(q, &lp), &mut local[c * nl * m + c * nl..], m);
        }
    });
    let mut ld = vec![0.0; m];
    let nonlinear_jacobian = pattern.assemble(|e, local| {
        gather(layout.element(e), d, &mut ld);
        let (t, _) = classes(e);
        ofield_nonlinear_jacobian_local(t, &ld, 1.0, local, m);
    });
    let nonlinear = layout.assemble_vector(|e, local| {
        let mut ld = vec![0.0; m];
        gather(layout.element(e), d, &mut ld);
        let (t, _) = classes(e);
        for q in 0..t.num_points() {
            let dq = [t.eval(q, &ld[..nl]), t.eval(q, &ld[nl..])];
            let s = t.weights[q] * (dq[0] * dq[0] + dq[1] * dq[1]);
            for (a, v) in t.values(q).iter().enumerate() {
                local[a] += s * dq[0] * v;
                local[nl + a] += s * dq[1] * v;
            }
        }
    });
    Ok(OfieldOperators {
        mass,
        stiffness,
        convection,
        coupling,
        nonlinear,
        nonlinear_jacobian,
    })
}

/// Adds `alpha ∫ ((∇φⱼ)u + (Ω(u) − ξD(u))φⱼ)·φᵢ` for the vector-valued
/// basis `φ_(c,a) = e_c vₐ`, with `Ω = ½(∇uᵀ − ∇u)` and `D = ½(∇uᵀ + ∇u)`.
#[inline]
pub(crate) fn ofield_convection_local(
    t: &Tabulation,
    t2: &Tabulation,
    lu: &[f64],
    xi: f64,
    alpha: f64,
    local: &mut [f64],
    stride: usize,
) {
    let nl = t.n_loc;
    for q in 0..t.num_points() {
        let (uq, gu) = velocity_at(t2, q, lu);
        let rot = rotation_strain(&gu, xi);
        let wq = alpha * t.weights[q];
        let v = t.values(q);
        let g = t.grads(q);
        for a in 0..nl {
            let wa = wq * v[a];
            for b in 0..nl {
                let adv = wa * (uq[0] * g[b][0] + uq[1] * g[b][1]);
                let vb = wa * v[b];
                for c in 0..2 {
                    let row = (c * nl + a) * stride;
                    local[row + c * nl + b] += adv;
                    for cc in 0..2 {
                        local[row + cc * nl + b] += rot[c][cc] * vb;
                    }
                }
            }
        }
    }
}

/// `Ω(u) − ξD(u)` from `∇u[a][b] = ∂u_a/∂x_b`.
#[inline]
pub(crate) fn rotation_strain(gu: &[[f64; 2]; 2], xi: f64) -> [[f64; 2]; 2] {
    let mut r = [[0.0; 2]; 2];
    for (a, row) in r.iter_mut().enumerate() {
        for (b, x) in row.iter_mut().enumerate() {
            // (∇uᵀ)[a][b] = gu[b][a]
            let omega = 0.5 * (gu[b][a] - gu[a][b]);
            let strain = 0.5 * (gu[b][a] + gu[a][b]);
            *x = omega - xi * strain;
        }
    }
    r
}

/// Adds `alpha ∫ 2(d·φⱼ)(d·φᵢ) + |d|² φⱼ·φᵢ`.
#[inline]
pub(crate) fn ofield_nonlinear_jacobian_local(
    t: &Tabulation,
    ld: &[f64],
    alpha: f64,
    local: &mut [f64],
    stride: usize,
) {
    let nl = t.n_loc;
    for q in 0..t.num_points() {
        let dq = [t.eval(q, &ld[..nl]), t.eval(q, &ld[nl..2 * nl])];
        let d2 = dq[0] * dq[0] + dq[1] * dq[1];
        let wq = alpha * t.weights[q];
        let v = t.values(q);
        for a in 0..nl {
            for b in 0..nl {
                let vv = wq * v[a] * v[b];
                for c in 0..2 {
                    for cc in 0..2 {
                        let mut s = 2.0 * dq[c] * dq[cc];
                        if c == cc {
                            s += d2;
                        }
                        local[(c * nl + a) * stride + cc * nl + b] += s * vv;
                    }
                }
            }
        }
    }
}

/// Stokes operators: `A`, `B` and the force vector.
#[derive(Debug, Clone)]
pub struct StokesOperators {
    /// `Aᵢⱼ = ½ ∫ ∇ψᵢ : ∇ψⱼ`
    pub a: CsrMatrix,
    /// `Bᵢⱼ = ∫ φᵢ div ψⱼ`
    pub b: CsrMatrix,
    pub rhs: Vec<f64>,
}

/// Stresses and force densities entering the Stokes right-hand side at one
/// quadrature point: returns `(f, σ)` with `rhs = ∫ f·ψ − ∫ σ : ∇ψ`.
#[inline]
pub(crate) fn stokes_forcing(
    phi: f64,
    grad_phi: [f64; 2],
    phinat: f64,
    d: [f64; 2],
    grad_d: [[f64; 2]; 2],
    dnat: [f64; 2],
    xi: f64,
    fa: f64,
) -> ([f64; 2], [[f64; 2]; 2]) {
    let mut f = [0.0; 2];
    for c in 0..2 {
        f[c] = phinat * grad_phi[c] + grad_d[0][c] * dnat[0] + grad_d[1][c] * dnat[1];
    }
    let active = 0.5 * (phi + 1.0) / fa;
    let mut sigma = [[0.0; 2]; 2];
    for c in 0..2 {
        for b in 0..2 {
            sigma[c][b] = active * d[c] * d[b]
                + 0.5 * (dnat[c] * d[b] - d[c] * dnat[b])
                + 0.5 * xi * (dnat[c] * d[b] + d[c] * dnat[b]);
        }
    }
    (f, sigma)
}

#[allow(clippy::too_many_arguments)]
pub fn assemble_stokes(
    space: &FunctionSpace,
    velocity_space: &FunctionSpace,
    phi: &[f64],
    phinat: &[f64],
    d: &[f64],
    dnat: &[f64],
    xi: f64,
    fa: f64,
) -> Result<StokesOperators> {
    check_same_mesh(space, velocity_space)?;
    let n = space.dof_count();
    check_len("phase field", phi, n)?;
    check_len("phase field potential", phinat, n)?;
    check_len("orientation field", d, 2 * n)?;
    check_len("orientation potential", dnat, 2 * n)?;
    let tables = ElementTables::new(space.mesh());
    let slayout = ElementLayout::new(space, 1);
    let dlayout = ElementLayout::new(space, 2);
    let vlayout = ElementLayout::new(velocity_space, 2);
    let nl = space.local_count();
    let n2 = velocity_space.local_count();
    let m2 = 2 * n2;
    let t_of = |e| {
        (
            tab(&tables, space, e),
            tab(&tables, velocity_space, e),
        )
    };
    let a = AssemblyPattern::new(&vlayout, &vlayout).assemble(|e, local| {
        let (_, t2) = t_of(e);
        for c in 0..2 {
            stiffness_local(t2, 0.5, &mut local[c * n2 * m2 + c * n2..], m2);
        }
    });
    let b = AssemblyPattern::new(&slayout, &vlayout).assemble(|e, local| {
        let (t, t2) = t_of(e);
        divergence_local(t, t2, 1.0, local, m2);
    });
    let (mut lp, mut lpn, mut ld, mut ldn) =
        (vec![0.0; nl], vec![0.0; nl], vec![0.0; 2 * nl], vec![0.0; 2 * nl]);
    let rhs = vlayout.assemble_vector(|e, local| {
        gather(slayout.element(e), phi, &mut lp);
        gather(slayout.element(e), phinat, &mut lpn);
        gather(dlayout.element(e), d, &mut ld);
        gather(dlayout.element(e), dnat, &mut ldn);
        let (t, t2) = t_of(e);
        for q in 0..t.num_points() {
            let (f, sigma) = stokes_forcing(
                t.eval(q, &lp),
                t.eval_grad(q, &lp),
                t.eval(q, &lpn),
                [t.eval(q, &ld[..nl]), t.eval(q, &ld[nl..])],
                [t.eval_grad(q, &ld[..nl]), t.eval_grad(q, &ld[nl..])],
                [t.eval(q, &ldn[..nl]), t.eval(q, &ldn[nl..])],
                xi,
                fa,
            );
            let w = t2.weights[q];
            let (v, g) = (t2.values(q), t2.grads(q));
            for c in 0..2 {
                for a in 0..n2 {
                    local[c * n2 + a] +=
                        w * (f[c] * v[a] - sigma[c][0] * g[a][0] - sigma[c][1] * g[a][1]);
                }
            }
        }
    });
    Ok(StokesOperators { a, b, rhs })
}

/// Adds `alpha ∫ vᵢ ∂_c ψ_b` at row `i`, column `c·n2 + b`.
#[inline]
pub(crate) fn divergence_local(
    t: &Tabulation,
    t2: &Tabulation,
    alpha: f64,
    local: &mut [f64],
    stride: usize,
) {
    let n2 = t2.n_loc;
    for q in 0..t.num_points() {
        let wq = alpha * t.weights[q];
        let v = t.values(q);
        let g2 = t2.grads(q);
        for (i, vi) in v.iter().enumerate() {
            for c in 0..2 {
                for b in 0..n2 {
                    local[i * stride + c * n2 + b] += wq * vi * g2[b][c];
                }
            }
        }
    }
}
