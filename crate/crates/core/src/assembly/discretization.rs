//! The discrete cell model: spaces, constant operators and the element
//! kernels of the three splitting stages.
//!
//! Stage vectors are stacked component-major:
//! phase field `[φ, φ♮, μ]`, orientation `[d_x, d_y, d♮_x, d♮_y]`,
//! Stokes `[u_x, u_y, p]` with `u` on the Dirichlet-constrained velocity space.
//!
//! Every residual and Jacobian, full or restricted, is accumulated from the
//! same element kernels, in ascending element order.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::operators::{
    assemble_mass, assemble_stiffness, divergence_local, double_well, double_well_d1,
    double_well_d2, gather, mass_local, ofield_convection_local, ofield_nonlinear_jacobian_local,
    rotation_strain, stiffness_local, stokes_forcing, velocity_at, weighted_mass_local,
};
use crate::element::{ElementTables, Tabulation};
use crate::error::{Error, Result};
use crate::fespace::FunctionSpace;
use crate::mesh::Mesh;
use crate::params::ModelParameters;
use crate::sparse::{AssemblyPattern, CsrMatrix, ElementLayout};

/// The three coupled subsystems, in splitting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    PhaseField,
    Orientation,
    Stokes,
}

impl Field {
    pub const ALL: [Field; 3] = [Field::PhaseField, Field::Orientation, Field::Stokes];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::PhaseField => "phase_field",
            Field::Orientation => "orientation",
            Field::Stokes => "stokes",
        }
    }
}

impl std::fmt::Display for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Field {
    type Err = Error;

    fn from_str(s: &str) -> Result<Field> {
        match s {
            "phase_field" | "pfield" | "phi" => Ok(Field::PhaseField),
            "orientation" | "ofield" | "d" => Ok(Field::Orientation),
            "stokes" | "u" => Ok(Field::Stokes),
            _ => Err(Error::Config(format!("unknown field `{s}`"))),
        }
    }
}

/// Stage vectors a stage residual reads besides its own unknowns.
///
/// Phase field: `pf = x_φᵏ`, `of = x_oᵏ`, `st = x_sᵏ`.
/// Orientation: `pf = x_φᵏ⁺¹`, `of = x_oᵏ`, `st = x_sᵏ`.
/// Stokes: `pf = x_φᵏ⁺¹`, `of = x_oᵏ⁺¹`; `st` is unused.
#[derive(Debug, Clone, Copy)]
pub struct Sources<'a> {
    pub pf: &'a [f64],
    pub of: &'a [f64],
    pub st: &'a [f64],
}

impl Field {
    /// Which of `(pf, of, st)` the stage reads.
    pub fn sources_used(self) -> [bool; 3] {
        match self {
            Field::PhaseField | Field::Orientation => [true, true, true],
            Field::Stokes => [true, true, false],
        }
    }
}

/// Gathered element-local values of the own unknowns and the sources.
#[derive(Debug, Clone)]
pub struct LocalValues {
    pub x: Vec<f64>,
    pub pf: Vec<f64>,
    pub of: Vec<f64>,
    pub st: Vec<f64>,
}

pub struct Discretization {
    mesh: Arc<Mesh>,
    scalar: FunctionSpace,
    velocity: FunctionSpace,
    tables: ElementTables,
    layouts: [ElementLayout; 3],
    patterns: [AssemblyPattern; 3],
    mass: CsrMatrix,
    stiffness: CsrMatrix,
    velocity_mass: CsrMatrix,
}

impl std::fmt::Debug for Discretization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Discretization")
            .field("elements", &self.mesh.num_elements())
            .field("n_phi", &self.dim(Field::PhaseField))
            .field("n_o", &self.dim(Field::Orientation))
            .field("n_s", &self.dim(Field::Stokes))
            .finish()
    }
}

impl Discretization {
    /// Taylor-Hood discretization with scalar order 1 and velocity order 2.
    pub fn new(mesh: Arc<Mesh>) -> Result<Discretization> {
        let scalar = FunctionSpace::new(mesh.clone(), 1, false)?;
        let velocity = FunctionSpace::new(mesh.clone(), 2, true)?;
        let tables = ElementTables::new(&mesh);
        let s1 = ElementLayout::new(&scalar, 1);
        let u = ElementLayout::new(&velocity, 2);
        let layouts = [
            ElementLayout::new(&scalar, 3),
            ElementLayout::new(&scalar, 4),
            ElementLayout::concat(&[&u, &s1]),
        ];
        let patterns = [0, 1, 2].map(|k| AssemblyPattern::new(&layouts[k], &layouts[k]));
        let mass = assemble_mass(&scalar);
        let stiffness = assemble_stiffness(&scalar);
        let velocity_mass = assemble_mass(&velocity);
        Ok(Discretization {
            mesh,
            scalar,
            velocity,
            tables,
            layouts,
            patterns,
            mass,
            stiffness,
            velocity_mass,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn scalar_space(&self) -> &FunctionSpace {
        &self.scalar
    }

    pub fn velocity_space(&self) -> &FunctionSpace {
        &self.velocity
    }

    /// `n_h^p`
    pub fn n_scalar(&self) -> usize {
        self.scalar.dof_count()
    }

    /// `n_{h,0}^{p+1}`
    pub fn n_velocity(&self) -> usize {
        self.velocity.dof_count()
    }

    pub fn dim(&self, field: Field) -> usize {
        self.layouts[field.index()].dim()
    }

    pub fn layout(&self, field: Field) -> &ElementLayout {
        &self.layouts[field.index()]
    }

    pub fn num_elements(&self) -> usize {
        self.mesh.num_elements()
    }

    /// Scalar mass matrix `M`.
    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    /// Scalar stiffness matrix `E`.
    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// Scalar mass matrix of the constrained velocity space.
    pub fn velocity_mass(&self) -> &CsrMatrix {
        &self.velocity_mass
    }

    /// Block-diagonal matrix with the given diagonal blocks.
    pub fn block_diagonal(blocks: &[&CsrMatrix]) -> CsrMatrix {
        let rows: Vec<Vec<Option<&CsrMatrix>>> = (0..blocks.len())
            .map(|i| (0..blocks.len()).map(|j| (i == j).then_some(blocks[i])).collect())
            .collect();
        CsrMatrix::block(&rows).expect("square diagonal blocks")
    }

    /// Weight matrix inducing the `L²` inner product on a stage vector.
    pub fn weight_matrix(&self, field: Field) -> CsrMatrix {
        let m = &self.mass;
        match field {
            Field::PhaseField => Self::block_diagonal(&[m, m, m]),
            Field::Orientation => Self::block_diagonal(&[m, m, m, m]),
            Field::Stokes => {
                let v = &self.velocity_mass;
                Self::block_diagonal(&[v, v, m])
            }
        }
    }

    /// Range of component `c` of a stage vector.
    pub fn component_range(&self, field: Field, c: usize) -> std::ops::Range<usize> {
        let (n1, n2) = (self.n_scalar(), self.n_velocity());
        match field {
            Field::PhaseField | Field::Orientation => c * n1..(c + 1) * n1,
            Field::Stokes => match c {
                0 | 1 => c * n2..(c + 1) * n2,
                _ => 2 * n2..2 * n2 + n1,
            },
        }
    }

    fn tab(&self, order: usize, e: usize) -> &Tabulation {
        self.tables.get(order, self.mesh.geometry_class(e))
    }

    pub fn new_local_values(&self, field: Field) -> LocalValues {
        LocalValues {
            x: vec![0.0; self.layout(field).local_len()],
            pf: vec![0.0; self.layouts[0].local_len()],
            of: vec![0.0; self.layouts[1].local_len()],
            st: vec![0.0; self.layouts[2].local_len()],
        }
    }

    pub fn check_inputs(&self, field: Field, x: &[f64], src: &Sources) -> Result<()> {
        if x.len() != self.dim(field) {
            return Err(Error::mismatch("stage unknowns", self.dim(field), x.len()));
        }
        let used = field.sources_used();
        for (k, (v, what)) in [(src.pf, "phase field source"), (src.of, "orientation source"), (src.st, "Stokes source")]
            .into_iter()
            .enumerate()
        {
            if used[k] && v.len() != self.layouts[k].dim() {
                return Err(Error::mismatch(what, self.layouts[k].dim(), v.len()));
            }
        }
        Ok(())
    }

    /// Gathers element `e`'s local values of `x` and the used sources.
    pub fn gather_local(&self, field: Field, e: usize, x: &[f64], src: &Sources, lv: &mut LocalValues) {
        gather(self.layout(field).element(e), x, &mut lv.x);
        let used = field.sources_used();
        if used[0] {
            gather(self.layouts[0].element(e), src.pf, &mut lv.pf);
        }
        if used[1] {
            gather(self.layouts[1].element(e), src.of, &mut lv.of);
        }
        if used[2] {
            gather(self.layouts[2].element(e), src.st, &mut lv.st);
        }
    }

    /// Element residual `r_e` added into `local`.
    pub fn element_residual(
        &self,
        field: Field,
        e: usize,
        lv: &LocalValues,
        params: &ModelParameters,
        dt: f64,
        local: &mut [f64],
    ) {
        match field {
            Field::PhaseField => self.pfield_residual_local(e, lv, params, dt, local),
            Field::Orientation => self.ofield_residual_local(e, lv, params, dt, local),
            Field::Stokes => self.stokes_residual_local(e, lv, params, local),
        }
    }

    /// Element Jacobian `∂r_e/∂x_e` (row-major) added into `local`.
    pub fn element_jacobian(
        &self,
        field: Field,
        e: usize,
        lv: &LocalValues,
        params: &ModelParameters,
        dt: f64,
        local: &mut [f64],
    ) {
        match field {
            Field::PhaseField => self.pfield_jacobian_local(e, lv, params, dt, local),
            Field::Orientation => self.ofield_jacobian_local(e, lv, params, dt, local),
            Field::Stokes => self.stokes_jacobian_local(e, local),
        }
    }

    /// Full stage residual.
    pub fn residual(
        &self,
        field: Field,
        x: &[f64],
        src: &Sources,
        params: &ModelParameters,
        dt: f64,
    ) -> Result<Vec<f64>> {
        self.check_inputs(field, x, src)?;
        let mut lv = self.new_local_values(field);
        Ok(self.layout(field).assemble_vector(|e, local| {
            self.gather_local(field, e, x, src, &mut lv);
            self.element_residual(field, e, &lv, params, dt, local);
        }))
    }

    /// Adds the contributions of `elements` (ascending) to `out`. Inputs only
    /// need valid entries at the DOFs of those elements.
    #[allow(clippy::too_many_arguments)]
    pub fn residual_on(
        &self,
        field: Field,
        elements: &[usize],
        x: &[f64],
        src: &Sources,
        params: &ModelParameters,
        dt: f64,
        out: &mut [f64],
    ) {
        let mut lv = self.new_local_values(field);
        self.layout(field).assemble_vector_on(
            elements,
            |e, local| {
                self.gather_local(field, e, x, src, &mut lv);
                self.element_residual(field, e, &lv, params, dt, local);
            },
            out,
        );
    }

    /// Full stage Jacobian `∂r/∂x`.
    pub fn jacobian(
        &self,
        field: Field,
        x: &[f64],
        src: &Sources,
        params: &ModelParameters,
        dt: f64,
    ) -> Result<CsrMatrix> {
        self.check_inputs(field, x, src)?;
        let mut lv = self.new_local_values(field);
        Ok(self.patterns[field.index()].assemble(|e, local| {
            self.gather_local(field, e, x, src, &mut lv);
            self.element_jacobian(field, e, &lv, params, dt, local);
        }))
    }

    // Phase field: x = [φ, φ♮, μ].
    fn pfield_residual_local(
        &self,
        e: usize,
        lv: &LocalValues,
        p: &ModelParameters,
        dt: f64,
        r: &mut [f64],
    ) {
        let t = self.tab(1, e);
        let t2 = self.tab(2, e);
        let nl = t.n_loc;
        let (phi, phinat, mu) = (&lv.x[..nl], &lv.x[nl..2 * nl], &lv.x[2 * nl..3 * nl]);
        let phi_old = &lv.pf[..nl];
        let (dx, dy) = (&lv.of[..nl], &lv.of[nl..2 * nl]);
        let u = &lv.st[..2 * t2.n_loc];
        let (eps, be, ca) = (p.epsilon, p.be, p.ca);
        let bend = 1.0 / (be * eps * eps);
        let align = p.c1 / (2.0 * p.pa);
        for q in 0..t.num_points() {
            let w = t.weights[q];
            let (ph, gph) = (t.eval(q, phi), t.eval_grad(q, phi));
            let gpn = t.eval_grad(q, phinat);
            let pn = t.eval(q, phinat);
            let (m, gm) = (t.eval(q, mu), t.eval_grad(q, mu));
            let ph_old = t.eval(q, phi_old);
            let d2 = t.eval(q, dx).powi(2) + t.eval(q, dy).powi(2);
            let (uq, _) = velocity_at(t2, q, u);
            let s1 = w * (ph - ph_old);
            let s2 = w * (double_well_d2(ph) * m * bend + pn + m / ca + align * d2);
            let s3 = w * (double_well_d1(ph) / eps + m);
            let v = t.values(q);
            let g = t.grads(q);
            for a in 0..nl {
                let adv = uq[0] * g[a][0] + uq[1] * g[a][1];
                r[a] += s1 * v[a] - w * dt * adv * ph
                    + w * dt * p.gamma * (gpn[0] * g[a][0] + gpn[1] * g[a][1]);
                r[nl + a] += s2 * v[a] + w / be * (gm[0] * g[a][0] + gm[1] * g[a][1]);
                r[2 * nl + a] += s3 * v[a] + w * eps * (gph[0] * g[a][0] + gph[1] * g[a][1]);
            }
        }
    }

    fn pfield_jacobian_local(
        &self,
        e: usize,
        lv: &LocalValues,
        p: &ModelParameters,
        dt: f64,
        jac: &mut [f64],
    ) {
        let t = self.tab(1, e);
        let t2 = self.tab(2, e);
        let nl = t.n_loc;
        let m = 3 * nl;
        let (phi, mu) = (&lv.x[..nl], &lv.x[2 * nl..3 * nl]);
        let u = &lv.st[..2 * t2.n_loc];
        let eps = p.epsilon;
        let bend = 1.0 / (p.be * eps * eps);
        let blk = |r: usize, c: usize| r * nl * m + c * nl;
        // row 1: [M − Δt B(u), Δtγ E, 0]
        mass_local(t, 1.0, &mut jac[blk(0, 0)..], m);
        super::operators::convection_local(t, t2, u, -dt, &mut jac[blk(0, 0)..], m);
        stiffness_local(t, dt * p.gamma, &mut jac[blk(0, 1)..], m);
        // row 2: [D_φf/(Beε²), M, M/Ca + E/Be + D_μf/(Beε²)]
        weighted_mass_local(
            t,
            6.0 * bend,
            |q| t.eval(q, phi) * t.eval(q, mu),
            &mut jac[blk(1, 0)..],
            m,
        );
        mass_local(t, 1.0, &mut jac[blk(1, 1)..], m);
        weighted_mass_local(
            t,
            1.0,
            |q| double_well_d2(t.eval(q, phi)) * bend + 1.0 / p.ca,
            &mut jac[blk(1, 2)..],
            m,
        );
        stiffness_local(t, 1.0 / p.be, &mut jac[blk(1, 2)..], m);
        // row 3: [εE + D_φg/ε, 0, M]
        stiffness_local(t, eps, &mut jac[blk(2, 0)..], m);
        weighted_mass_local(
            t,
            1.0 / eps,
            |q| double_well_d2(t.eval(q, phi)),
            &mut jac[blk(2, 0)..],
            m,
        );
        mass_local(t, 1.0, &mut jac[blk(2, 2)..], m);
    }

    // Orientation: x = [d, d♮] with two components each.
    fn ofield_residual_local(
        &self,
        e: usize,
        lv: &LocalValues,
        p: &ModelParameters,
        dt: f64,
        r: &mut [f64],
    ) {
        let t = self.tab(1, e);
        let t2 = self.tab(2, e);
        let nl = t.n_loc;
        let u = &lv.st[..2 * t2.n_loc];
        let phi = &lv.pf[..nl];
        let comp = |c: usize| c * nl..(c + 1) * nl;
        let c1pa = p.c1 / p.pa;
        for q in 0..t.num_points() {
            let w = t.weights[q];
            let mut d = [0.0; 2];
            let mut gd = [[0.0; 2]; 2];
            let mut dn = [0.0; 2];
            let mut dold = [0.0; 2];
            for c in 0..2 {
                d[c] = t.eval(q, &lv.x[comp(c)]);
                gd[c] = t.eval_grad(q, &lv.x[comp(c)]);
                dn[c] = t.eval(q, &lv.x[comp(2 + c)]);
                dold[c] = t.eval(q, &lv.of[comp(c)]);
            }
            let ph = t.eval(q, phi);
            let (uq, gu) = velocity_at(t2, q, u);
            let rot = rotation_strain(&gu, p.xi);
            let d2 = d[0] * d[0] + d[1] * d[1];
            let v = t.values(q);
            let g = t.grads(q);
            for c in 0..2 {
                let transport = uq[0] * gd[c][0] + uq[1] * gd[c][1] + rot[c][0] * d[0] + rot[c][1] * d[1];
                let s1 = w * (d[c] - dold[c] + dt * transport + dt / p.kappa * dn[c]);
                let s2 = w * (dn[c] + c1pa * ph * d[c] - c1pa * d2 * d[c]);
                for a in 0..nl {
                    r[c * nl + a] += s1 * v[a];
                    r[(2 + c) * nl + a] +=
                        s2 * v[a] - w / p.pa * (gd[c][0] * g[a][0] + gd[c][1] * g[a][1]);
                }
            }
        }
    }

    fn ofield_jacobian_local(
        &self,
        e: usize,
        lv: &LocalValues,
        p: &ModelParameters,
        dt: f64,
        jac: &mut [f64],
    ) {
        let t = self.tab(1, e);
        let t2 = self.tab(2, e);
        let nl = t.n_loc;
        let m = 4 * nl;
        let u = &lv.st[..2 * t2.n_loc];
        let phi = &lv.pf[..nl];
        let c1pa = p.c1 / p.pa;
        let blk = |r: usize, c: usize| r * nl * m + c * nl;
        // [[M + ΔtB, (Δt/κ)M], [G, M]]
        ofield_convection_local(t, t2, u, p.xi, dt, jac, m);
        for c in 0..2 {
            mass_local(t, 1.0, &mut jac[blk(c, c)..], m);
            mass_local(t, dt / p.kappa, &mut jac[blk(c, 2 + c)..], m);
            mass_local(t, 1.0, &mut jac[blk(2 + c, 2 + c)..], m);
            // G = (c₁/Pa)C(φ) − (1/Pa)E − (c₁/Pa)D_d f
            weighted_mass_local(t, c1pa, |q| t.eval(q, phi), &mut jac[blk(2 + c, c)..], m);
            stiffness_local(t, -1.0 / p.pa, &mut jac[blk(2 + c, c)..], m);
        }
        ofield_nonlinear_jacobian_local(t, &lv.x[..2 * nl], -c1pa, &mut jac[blk(2, 0)..], m);
    }

    // Stokes: x = [u_x, u_y, p].
    fn stokes_residual_local(&self, e: usize, lv: &LocalValues, p: &ModelParameters, r: &mut [f64]) {
        let t = self.tab(1, e);
        let t2 = self.tab(2, e);
        let (nl, n2) = (t.n_loc, t2.n_loc);
        let u = &lv.x[..2 * n2];
        let pr = &lv.x[2 * n2..2 * n2 + nl];
        let (phi, phinat) = (&lv.pf[..nl], &lv.pf[nl..2 * nl]);
        let d = &lv.of[..2 * nl];
        let dn = &lv.of[2 * nl..4 * nl];
        for q in 0..t.num_points() {
            let w = t.weights[q];
            let (_, gu) = velocity_at(t2, q, u);
            let pq = t.eval(q, pr);
            let (f, sigma) = stokes_forcing(
                t.eval(q, phi),
                t.eval_grad(q, phi),
                t.eval(q, phinat),
                [t.eval(q, &d[..nl]), t.eval(q, &d[nl..])],
                [t.eval_grad(q, &d[..nl]), t.eval_grad(q, &d[nl..])],
                [t.eval(q, &dn[..nl]), t.eval(q, &dn[nl..])],
                p.xi,
                p.fa,
            );
            let (v2, g2) = (t2.values(q), t2.grads(q));
            for c in 0..2 {
                for a in 0..n2 {
                    let visc = 0.5 * (gu[c][0] * g2[a][0] + gu[c][1] * g2[a][1]);
                    let force = f[c] * v2[a] - sigma[c][0] * g2[a][0] - sigma[c][1] * g2[a][1];
                    r[c * n2 + a] += w * (visc + pq * g2[a][c] - force);
                }
            }
            let div = w * (gu[0][0] + gu[1][1]);
            for (i, vi) in t.values(q).iter().enumerate() {
                r[2 * n2 + i] += div * vi;
            }
        }
    }

    fn stokes_jacobian_local(&self, e: usize, jac: &mut [f64]) {
        let t = self.tab(1, e);
        let t2 = self.tab(2, e);
        let (nl, n2) = (t.n_loc, t2.n_loc);
        let m = 2 * n2 + nl;
        for c in 0..2 {
            stiffness_local(t2, 0.5, &mut jac[c * n2 * m + c * n2..], m);
        }
        let mut b = vec![0.0; nl * 2 * n2];
        divergence_local(t, t2, 1.0, &mut b, 2 * n2);
        for i in 0..nl {
            for j in 0..2 * n2 {
                let v = b[i * 2 * n2 + j];
                jac[(2 * n2 + i) * m + j] += v;
                jac[j * m + 2 * n2 + i] += v;
            }
        }
    }

    /// Integrals `(∫ ε/2|∇φ|² + W(φ)/ε, ∫ μ²/(2ε), ∫ ½∇d:∇d + (c₁/4)|d|²(|d|² − 2φ))`.
    pub fn energy_integrals(
        &self,
        phi: &[f64],
        mu: &[f64],
        d: &[f64],
        params: &ModelParameters,
    ) -> Result<[f64; 3]> {
        let n = self.n_scalar();
        for (v, len, what) in [(phi, n, "phase field"), (mu, n, "chemical potential"), (d, 2 * n, "orientation field")] {
            if v.len() != len {
                return Err(Error::mismatch(what, len, v.len()));
            }
        }
        let s1 = &self.layouts[0];
        let scalar = ElementLayout::new(&self.scalar, 1);
        let dl = ElementLayout::new(&self.scalar, 2);
        let nl = s1.local_len() / 3;
        let (mut lp, mut lm, mut ld) = (vec![0.0; nl], vec![0.0; nl], vec![0.0; 2 * nl]);
        let eps = params.epsilon;
        let mut out = [0.0; 3];
        for e in 0..self.num_elements() {
            gather(scalar.element(e), phi, &mut lp);
            gather(scalar.element(e), mu, &mut lm);
            gather(dl.element(e), d, &mut ld);
            let t = self.tab(1, e);
            for q in 0..t.num_points() {
                let w = t.weights[q];
                let ph = t.eval(q, &lp);
                let gp = t.eval_grad(q, &lp);
                let m = t.eval(q, &lm);
                let dq = [t.eval(q, &ld[..nl]), t.eval(q, &ld[nl..])];
                let gd = [t.eval_grad(q, &ld[..nl]), t.eval_grad(q, &ld[nl..])];
                let d2 = dq[0] * dq[0] + dq[1] * dq[1];
                out[0] += w * (0.5 * eps * (gp[0] * gp[0] + gp[1] * gp[1]) + double_well(ph) / eps);
                out[1] += w * m * m / (2.0 * eps);
                let gdd = gd[0][0].powi(2) + gd[0][1].powi(2) + gd[1][0].powi(2) + gd[1][1].powi(2);
                out[2] += w * (0.5 * gdd + 0.25 * params.c1 * d2 * (d2 - 2.0 * ph));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::operators::{
        assemble_convection_pfield, assemble_ofield_operators, assemble_pfield_jacobian_blocks,
        assemble_pfield_nonlinears, assemble_stokes,
    };
    use crate::mesh::{CellKind, Rect};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disc(nx: usize, kind: CellKind) -> Discretization {
        Discretization::new(Arc::new(Mesh::build(nx, nx, Rect::square(nx as f64), kind).unwrap()))
            .unwrap()
    }

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    struct Case {
        x: [Vec<f64>; 3],
        src: [Vec<f64>; 3],
        params: ModelParameters,
    }

    fn case(dz: &Discretization, rng: &mut ChaCha8Rng) -> Case {
        let dims = Field::ALL.map(|f| dz.dim(f));
        Case {
            x: dims.map(|n| random(n, rng)),
            src: dims.map(|n| random(n, rng)),
            params: ModelParameters {
                epsilon: 0.7,
                ca: 0.8,
                pa: 1.3,
                be: 1.2,
                fa: 0.9,
                ..Default::default()
            },
        }
    }

    impl Case {
        fn sources(&self) -> Sources<'_> {
            Sources {
                pf: &self.src[0],
                of: &self.src[1],
                st: &self.src[2],
            }
        }
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
    }

    fn add(acc: &mut [f64], alpha: f64, v: &[f64]) {
        acc.iter_mut().zip(v).for_each(|(a, b)| *a += alpha * b);
    }

    /// The element kernels against the matrix form built from the stand-alone operators.
    #[test]
    fn stage_residuals_match_operator_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dt = 0.05;
        for kind in [CellKind::Simplicial, CellKind::Rectangular] {
            let dz = disc(4, kind);
            let c = case(&dz, &mut rng);
            let p = c.params;
            let (n, n2) = (dz.n_scalar(), dz.n_velocity());
            let (s, v) = (dz.scalar_space(), dz.velocity_space());
            let (m, e) = (dz.mass(), dz.stiffness());

            // phase field
            let x = &c.x[0];
            let (phi, phinat, mu) = (&x[..n], &x[n..2 * n], &x[2 * n..]);
            let u_old = &c.src[2][..2 * n2];
            let d_old = &c.src[1][..2 * n];
            let b = assemble_convection_pfield(s, v, u_old).unwrap();
            let nl = assemble_pfield_nonlinears(s, phi, mu, d_old).unwrap();
            let mut r1 = m.mul_vec(phi);
            add(&mut r1, -dt, &b.mul_vec(phi));
            add(&mut r1, dt * p.gamma, &e.mul_vec(phinat));
            add(&mut r1, -1.0, &m.mul_vec(&c.src[0][..n]));
            let mut r2 = nl.f.iter().map(|f| f / (p.be * p.epsilon.powi(2))).collect::<Vec<_>>();
            add(&mut r2, 1.0, &m.mul_vec(phinat));
            add(&mut r2, 1.0 / p.ca, &m.mul_vec(mu));
            add(&mut r2, 1.0 / p.be, &e.mul_vec(mu));
            add(&mut r2, p.c1 / (2.0 * p.pa), &nl.a);
            let mut r3 = nl.g.iter().map(|g| g / p.epsilon).collect::<Vec<_>>();
            add(&mut r3, p.epsilon, &e.mul_vec(phi));
            add(&mut r3, 1.0, &m.mul_vec(mu));
            let want = [r1, r2, r3].concat();
            let got = dz.residual(Field::PhaseField, x, &c.sources(), &p, dt).unwrap();
            assert!(max_rel(&got, &want) < 1e-12);

            // orientation
            let x = &c.x[1];
            let (d, dn) = (&x[..2 * n], &x[2 * n..]);
            let ops = assemble_ofield_operators(s, v, u_old, &c.src[0][..n], d, p.xi).unwrap();
            let mut r1 = ops.mass.mul_vec(d);
            add(&mut r1, dt, &ops.convection.mul_vec(d));
            add(&mut r1, dt / p.kappa, &ops.mass.mul_vec(dn));
            add(&mut r1, -1.0, &ops.mass.mul_vec(d_old));
            let mut r2 = ops.mass.mul_vec(dn);
            add(&mut r2, p.c1 / p.pa, &ops.coupling.mul_vec(d));
            add(&mut r2, -p.c1 / p.pa, &ops.nonlinear);
            add(&mut r2, -1.0 / p.pa, &ops.stiffness.mul_vec(d));
            let want = [r1, r2].concat();
            let got = dz.residual(Field::Orientation, x, &c.sources(), &p, dt).unwrap();
            assert!(max_rel(&got, &want) < 1e-12);

            // Stokes
            let x = &c.x[2];
            let (pf, of) = (&c.src[0], &c.src[1]);
            let st = assemble_stokes(
                s,
                v,
                &pf[..n],
                &pf[n..2 * n],
                &of[..2 * n],
                &of[2 * n..],
                p.xi,
                p.fa,
            )
            .unwrap();
            let (u, pr) = (&x[..2 * n2], &x[2 * n2..]);
            let mut ru = st.a.mul_vec(u);
            st.b.transpose_matvec_add(1.0, pr, &mut ru);
            add(&mut ru, -1.0, &st.rhs);
            let want = [ru, st.b.mul_vec(u)].concat();
            let got = dz.residual(Field::Stokes, x, &c.sources(), &p, dt).unwrap();
            assert!(max_rel(&got, &want) < 1e-12);
        }
    }

    #[test]
    fn stage_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dt = 0.05;
        let dz = disc(8, CellKind::Simplicial);
        let c = case(&dz, &mut rng);
        for field in Field::ALL {
            let k = field.index();
            let x = &c.x[k];
            let jac = dz.jacobian(field, x, &c.sources(), &c.params, dt).unwrap();
            let scale = jac.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let h = 1e-6;
            for _ in 0..12 {
                let j = rng.random_range(0..x.len());
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let rp = dz.residual(field, &xp, &c.sources(), &c.params, dt).unwrap();
                let rm = dz.residual(field, &xm, &c.sources(), &c.params, dt).unwrap();
                for i in 0..x.len() {
                    let fd = (rp[i] - rm[i]) / (2.0 * h);
                    assert!(
                        (fd - jac.get(i, j)).abs() <= 1e-6 * scale,
                        "{field} ({i},{j}): fd {fd} vs {}",
                        jac.get(i, j)
                    );
                }
            }
        }
    }

    #[test]
    fn pfield_jacobian_blocks_match_operators() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dz = disc(4, CellKind::Rectangular);
        let c = case(&dz, &mut rng);
        let p = c.params;
        let n = dz.n_scalar();
        let x = &c.x[0];
        let jac = dz.jacobian(Field::PhaseField, x, &c.sources(), &p, 0.1).unwrap();
        let (dpf, dmf) = assemble_pfield_jacobian_blocks(dz.scalar_space(), &x[..n], &x[2 * n..]).unwrap();
        let bend = 1.0 / (p.be * p.epsilon.powi(2));
        let r: Vec<usize> = (n..2 * n).collect();
        let c0: Vec<usize> = (0..n).collect();
        let c2: Vec<usize> = (2 * n..3 * n).collect();
        let want21 = dpf.scaled(bend).to_dense();
        let want23 = CsrMatrix::lincomb(&[(bend, &dmf), (1.0 / p.ca, dz.mass()), (1.0 / p.be, dz.stiffness())]);
        let d21 = jac.select(&r, &c0).to_dense() - want21;
        let d23 = jac.select(&r, &c2).to_dense() - want23.to_dense();
        assert!(d21.abs().max() < 1e-12 && d23.abs().max() < 1e-12);
    }

    #[test]
    fn stationary_pure_phase_has_zero_residual() {
        let dz = disc(5, CellKind::Simplicial);
        let p = ModelParameters::default();
        let n = dz.n_scalar();
        for sign in [1.0, -1.0] {
            let mut pf = vec![0.0; 3 * n];
            pf[..n].fill(sign);
            let of = vec![0.0; 4 * n];
            let st = vec![0.0; dz.dim(Field::Stokes)];
            let src = Sources { pf: &pf, of: &of, st: &st };
            let r = dz.residual(Field::PhaseField, &pf, &src, &p, 1e-3).unwrap();
            assert!(r.iter().all(|v| v.abs() < 1e-14));
            let r = dz.residual(Field::Orientation, &of, &src, &p, 1e-3).unwrap();
            assert!(r.iter().all(|v| *v == 0.0));
            let r = dz.residual(Field::Stokes, &st, &src, &p, 1e-3).unwrap();
            assert!(r.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn stokes_residual_is_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dz = disc(4, CellKind::Simplicial);
        let c = case(&dz, &mut rng);
        let n = dz.dim(Field::Stokes);
        let (x, y) = (random(n, &mut rng), random(n, &mut rng));
        let (alpha, beta) = (0.3, 1.9);
        let r = |v: &[f64]| dz.residual(Field::Stokes, v, &c.sources(), &c.params, 0.0).unwrap();
        let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
        let affine = r(&vec![0.0; n]);
        let (rz, rx, ry) = (r(&z), r(&x), r(&y));
        for i in 0..n {
            let lhs = rz[i] - alpha * rx[i] - beta * ry[i];
            assert!((lhs - (1.0 - alpha - beta) * affine[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn restricted_accumulation_is_bit_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dz = disc(6, CellKind::Simplicial);
        let c = case(&dz, &mut rng);
        let star = dz.scalar_space().dof_elements();
        let dof = 3 * 7 + 3; // interior vertex
        let elements = &star[dof];
        for field in [Field::PhaseField, Field::Orientation] {
            let full = dz.residual(field, &c.x[field.index()], &c.sources(), &c.params, 0.1).unwrap();
            let mut part = vec![0.0; full.len()];
            dz.residual_on(field, elements, &c.x[field.index()], &c.sources(), &c.params, 0.1, &mut part);
            assert_eq!(part[dof].to_bits(), full[dof].to_bits());
        }
    }

    #[test]
    fn energy_special_values() {
        let dz = disc(4, CellKind::Simplicial);
        let p = ModelParameters::default();
        let n = dz.n_scalar();
        let area = 16.0;
        let ones = vec![1.0; n];
        let zeros = vec![0.0; n];
        let mut d = vec![0.0; 2 * n];
        let e = dz.energy_integrals(&ones, &zeros, &d, &p).unwrap();
        assert_eq!(e, [0.0, 0.0, 0.0]);
        let e = dz.energy_integrals(&zeros, &zeros, &d, &p).unwrap();
        assert!((e[0] - area / (4.0 * p.epsilon)).abs() < 1e-12);
        d[..n].fill(1.0);
        let e = dz.energy_integrals(&ones, &zeros, &d, &p).unwrap();
        assert!((e[2] + p.c1 * area / 4.0).abs() < 1e-12);
    }

    #[test]
    fn stage_dimensions() {
        let dz = disc(3, CellKind::Simplicial);
        assert_eq!(dz.dim(Field::PhaseField), 3 * 16);
        assert_eq!(dz.dim(Field::Orientation), 4 * 16);
        // P2 interior nodes on 3x3 cells: 7x7 grid minus boundary = 25
        assert_eq!(dz.n_velocity(), 25);
        assert_eq!(dz.dim(Field::Stokes), 2 * 25 + 16);
        let w = dz.weight_matrix(Field::Stokes);
        assert!(w.is_symmetric());
        assert_eq!(w.nrows(), dz.dim(Field::Stokes));
    }
}
