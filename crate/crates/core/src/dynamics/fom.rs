//! The full-order model: semi-implicit splitting with one nonlinear solve
//! per stage, in the order phase field, orientation, Stokes.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::newton::{newton_backtracking, NewtonOptions};
use crate::assembly::{assemble_pfield_nonlinears, Discretization, Field, Sources};
use crate::error::{Error, Result};
use crate::params::ModelParameters;
use crate::solvers::{
    dot, gmres, norm, Ilut, IlutOptions, KrylovOptions, OfieldSchur, SparseCholesky, SparseLu,
    StokesDirect, StokesSchur,
};
use crate::sparse::CsrMatrix;

/// Stacked stage vectors `x_φ`, `x_o`, `x_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub pf: Vec<f64>,
    pub of: Vec<f64>,
    pub st: Vec<f64>,
}

impl State {
    pub fn zeros(dz: &Discretization) -> State {
        State {
            pf: vec![0.0; dz.dim(Field::PhaseField)],
            of: vec![0.0; dz.dim(Field::Orientation)],
            st: vec![0.0; dz.dim(Field::Stokes)],
        }
    }

    /// Interpolated `φ₀`, `d₀`; the potentials, velocity and pressure start at zero.
    pub fn initial(
        dz: &Discretization,
        phi0: impl Fn([f64; 2]) -> f64,
        d0: impl Fn([f64; 2]) -> [f64; 2],
    ) -> State {
        let mut s = State::zeros(dz);
        let n = dz.n_scalar();
        let space = dz.scalar_space();
        s.pf[..n].copy_from_slice(space.interpolate(phi0).values());
        s.of[..2 * n].copy_from_slice(space.interpolate_vector(d0).values());
        s
    }

    pub fn field(&self, field: Field) -> &[f64] {
        match field {
            Field::PhaseField => &self.pf,
            Field::Orientation => &self.of,
            Field::Stokes => &self.st,
        }
    }

    pub fn field_mut(&mut self, field: Field) -> &mut Vec<f64> {
        match field {
            Field::PhaseField => &mut self.pf,
            Field::Orientation => &mut self.of,
            Field::Stokes => &mut self.st,
        }
    }

    pub fn check(&self, dz: &Discretization) -> Result<()> {
        for f in Field::ALL {
            if self.field(f).len() != dz.dim(f) {
                return Err(Error::mismatch("state vector", dz.dim(f), self.field(f).len()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PfieldSolver {
    /// GMRES preconditioned by an incomplete LU of the time-independent `Ĵ_pf`.
    IluGmres,
    /// Sparse LU of the Jacobian in every Newton iteration.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfieldSolver {
    /// Schur complement with unpreconditioned GMRES.
    SchurGmres,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StokesSolver {
    /// Pressure-mass preconditioned CG on the pressure Schur complement.
    SchurCg,
    /// Sparse LU of the saddle-point matrix, factorized once.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub newton: NewtonOptions,
    pub krylov: KrylovOptions,
    pub ilut: IlutOptions,
    pub pfield: PfieldSolver,
    pub ofield: OfieldSolver,
    pub stokes: StokesSolver,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            newton: NewtonOptions::default(),
            krylov: KrylovOptions::default(),
            ilut: IlutOptions::default(),
            pfield: PfieldSolver::IluGmres,
            ofield: OfieldSolver::SchurGmres,
            stokes: StokesSolver::SchurCg,
        }
    }
}

/// Accumulated work of one stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageStats {
    pub steps: usize,
    pub newton_iterations: usize,
    pub linear_solves: usize,
    pub linear_iterations: usize,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
}

impl StageStats {
    pub fn mean_linear_iterations(&self) -> f64 {
        if self.linear_solves == 0 {
            0.0
        } else {
            self.linear_iterations as f64 / self.linear_solves as f64
        }
    }

    pub fn mean_solve_seconds(&self) -> f64 {
        if self.linear_solves == 0 {
            0.0
        } else {
            self.solve_seconds / self.linear_solves as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Newton residuals `r^{k,r}` for `r = 0..iterations`, if captured.
    pub residuals: Vec<Vec<f64>>,
}

enum StokesBackend {
    Schur(StokesSchur),
    Direct(StokesDirect),
}

/// `Ĵ_pf`: the phase-field Jacobian with `u = 0` and `φ = ±1` in the
/// nonlinear blocks, so `D_μf ≈ 2M` and `D_φf ≈ 0`.
pub fn pfield_preconditioner_matrix(
    dz: &Discretization,
    p: &ModelParameters,
    dt: f64,
) -> CsrMatrix {
    let (m, e) = (dz.mass(), dz.stiffness());
    let eps = p.epsilon;
    let a12 = e.scaled(dt * p.gamma);
    let a23 = CsrMatrix::lincomb(&[(1.0 / p.ca + 2.0 / (p.be * eps * eps), m), (1.0 / p.be, e)]);
    let a31 = CsrMatrix::lincomb(&[(eps, e), (2.0 / eps, m)]);
    CsrMatrix::block(&[
        vec![Some(m), Some(&a12), None],
        vec![None, Some(m), Some(&a23)],
        vec![Some(&a31), None, Some(m)],
    ])
    .expect("conforming blocks")
}

/// Solver for one parameter `η` and time step `Δt`. Time-independent
/// factorizations are computed once at construction.
pub struct FomSolver {
    dz: Arc<Discretization>,
    params: ModelParameters,
    dt: f64,
    config: SolverConfig,
    pf_pre: Option<Ilut>,
    pf_factorizations: usize,
    of_schur: OfieldSchur,
    stokes: StokesBackend,
    stokes_a: CsrMatrix,
    scalar_mass: SparseCholesky,
    mass_vector: Vec<f64>,
    stats: [StageStats; 3],
}

impl FomSolver {
    pub fn new(
        dz: Arc<Discretization>,
        params: ModelParameters,
        dt: f64,
        config: SolverConfig,
    ) -> Result<FomSolver> {
        params.validate()?;
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
        }
        let mut stats: [StageStats; 3] = Default::default();
        let n = dz.n_scalar();
        let n2 = dz.n_velocity();

        let t = Instant::now();
        let (pf_pre, pf_factorizations) = match config.pfield {
            PfieldSolver::IluGmres => {
                let jhat = pfield_preconditioner_matrix(&dz, &params, dt);
                (Some(Ilut::new(&jhat, config.ilut)?), 1)
            }
            PfieldSolver::Direct => (None, 0),
        };
        stats[0].setup_seconds = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let m = dz.mass();
        let of_schur = OfieldSchur::new(&Discretization::block_diagonal(&[m, m]))?;
        stats[1].setup_seconds = t.elapsed().as_secs_f64();

        let t = Instant::now();
        // the Stokes Jacobian is constant: [[A, Bᵀ], [B, 0]]
        let zeros = State::zeros(&dz);
        let src = Sources { pf: &zeros.pf, of: &zeros.of, st: &[] };
        let j = dz.jacobian(Field::Stokes, &zeros.st, &src, &params, dt)?;
        let urange: Vec<usize> = (0..2 * n2).collect();
        let prange: Vec<usize> = (2 * n2..2 * n2 + n).collect();
        let a = j.select(&urange, &urange);
        let b = j.select(&prange, &urange);
        let stokes = match config.stokes {
            StokesSolver::SchurCg => StokesBackend::Schur(StokesSchur::new(&a, &b, m)?),
            StokesSolver::Direct => StokesBackend::Direct(StokesDirect::new(&a, &b, m)?),
        };
        stats[2].setup_seconds = t.elapsed().as_secs_f64();

        Ok(FomSolver {
            scalar_mass: SparseCholesky::new(m)?,
            mass_vector: m.mul_vec(&vec![1.0; n]),
            dz,
            params,
            dt,
            config,
            pf_pre,
            pf_factorizations,
            of_schur,
            stokes,
            stokes_a: a,
            stats,
        })
    }

    pub fn discretization(&self) -> &Arc<Discretization> {
        &self.dz
    }

    pub fn params(&self) -> &ModelParameters {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Number of factorizations of `Ĵ_pf` since construction.
    pub fn preconditioner_factorizations(&self) -> usize {
        self.pf_factorizations
    }

    pub fn stats(&self, field: Field) -> &StageStats {
        &self.stats[field.index()]
    }

    pub fn reset_stats(&mut self) {
        for s in &mut self.stats {
            let setup = s.setup_seconds;
            *s = StageStats {
                setup_seconds: setup,
                ..Default::default()
            };
        }
    }

    /// The stage's Newton step `δ` with `J(x)δ = −r`.
    fn linear_step(&mut self, field: Field, x: &[f64], src: &Sources, r: &[f64]) -> Result<Vec<f64>> {
        let dz = self.dz.clone();
        let jac = dz.jacobian(field, x, src, &self.params, self.dt)?;
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let t = Instant::now();
        let (delta, iterations) = match field {
            Field::PhaseField => match &self.pf_pre {
                Some(pre) => {
                    let out = gmres(&jac, &rhs, None, Some(pre), &self.config.krylov)
                        .into_result("phase field GMRES")?;
                    (out.x, out.iterations)
                }
                None => (SparseLu::new(&jac)?.solve(&rhs), 0),
            },
            Field::Orientation => {
                let n2 = 2 * dz.n_scalar();
                let (top, bottom): (Vec<usize>, Vec<usize>) = ((0..n2).collect(), (n2..2 * n2).collect());
                match self.config.ofield {
                    OfieldSolver::SchurGmres => {
                        let j11 = jac.select(&top, &top);
                        let g = jac.select(&bottom, &top);
                        let c = self.dt / self.params.kappa;
                        self.of_schur.solve(&j11, &g, c, &rhs, &self.config.krylov)?
                    }
                    OfieldSolver::Direct => (SparseLu::new(&jac)?.solve(&rhs), 0),
                }
            }
            Field::Stokes => unreachable!("the Stokes stage is affine"),
        };
        let s = &mut self.stats[field.index()];
        s.solve_seconds += t.elapsed().as_secs_f64();
        s.linear_solves += 1;
        s.linear_iterations += iterations;
        Ok(delta)
    }

    fn stokes_solve(&mut self, r: &[f64]) -> Result<Vec<f64>> {
        let nu = 2 * self.dz.n_velocity();
        let f: Vec<f64> = r[..nu].iter().map(|v| -v).collect();
        let g: Vec<f64> = r[nu..].iter().map(|v| -v).collect();
        let t = Instant::now();
        let sol = match &self.stokes {
            StokesBackend::Schur(s) => s.solve(&f, &g, &self.config.krylov)?,
            StokesBackend::Direct(s) => s.solve(&f, &g)?,
        };
        let s = &mut self.stats[2];
        s.solve_seconds += t.elapsed().as_secs_f64();
        s.linear_solves += 1;
        s.linear_iterations += sol.iterations;
        Ok([sol.u, sol.p].concat())
    }

    /// Solves one stage from the initial guess `x0` with the given sources.
    pub fn solve_stage(
        &mut self,
        field: Field,
        x0: &[f64],
        src: &Sources,
        capture: bool,
    ) -> Result<StageOutcome> {
        let dz = self.dz.clone();
        dz.check_inputs(field, x0, src)?;
        let (params, dt) = (self.params, self.dt);
        let out = if field == Field::Stokes {
            // affine: a single Newton step from x0 is exact
            let r = dz.residual(field, x0, src, &params, dt)?;
            let delta = self.stokes_solve(&r)?;
            StageOutcome {
                x: x0.iter().zip(&delta).map(|(a, b)| a + b).collect(),
                iterations: 1,
                residuals: if capture { vec![r] } else { Vec::new() },
            }
        } else {
            let opts = self.config.newton;
            let this = std::cell::RefCell::new(&mut *self);
            let res = newton_backtracking(
                |x| dz.residual(field, x, src, &params, dt),
                |x, r| this.borrow_mut().linear_step(field, x, src, r),
                x0,
                &opts,
                capture,
            )?;
            StageOutcome {
                x: res.x,
                iterations: res.iterations,
                residuals: res.residuals,
            }
        };
        let s = &mut self.stats[field.index()];
        s.steps += 1;
        s.newton_iterations += out.iterations;
        Ok(out)
    }

    /// One splitting step `k → k+1`.
    pub fn step(&mut self, state: &State, capture: bool, k: usize) -> Result<StepReport> {
        let wrap = |stage: &'static str| move |e: Error| Error::StageFailed {
            stage,
            step: k,
            source: Box::new(e),
        };
        let src = Sources { pf: &state.pf, of: &state.of, st: &state.st };
        let pf = self
            .solve_stage(Field::PhaseField, &state.pf, &src, capture)
            .map_err(wrap("phase field"))?;
        let src = Sources { pf: &pf.x, of: &state.of, st: &state.st };
        let of = self
            .solve_stage(Field::Orientation, &state.of, &src, capture)
            .map_err(wrap("orientation"))?;
        let src = Sources { pf: &pf.x, of: &of.x, st: &[] };
        let st = self
            .solve_stage(Field::Stokes, &state.st, &src, capture)
            .map_err(wrap("stokes"))?;
        Ok(StepReport {
            iterations: [pf.iterations, of.iterations, st.iterations],
            residuals: [pf.residuals, of.residuals, st.residuals],
            state: State { pf: pf.x, of: of.x, st: st.x },
        })
    }

    /// `∫ φ`
    pub fn phase_mass(&self, state: &State) -> f64 {
        dot(&self.mass_vector, &state.pf[..self.dz.n_scalar()])
    }

    /// Free energy `E_S + E_d` (the kinetic energy vanishes for Stokes flow).
    pub fn free_energy(&self, state: &State) -> Result<Energy> {
        free_energy_with(&self.dz, &self.scalar_mass, state, &self.params)
    }

    /// `sup |u|` over the velocity nodes.
    pub fn max_velocity(&self, state: &State) -> f64 {
        let n2 = self.dz.n_velocity();
        (0..n2)
            .map(|i| state.st[i].hypot(state.st[n2 + i]))
            .fold(0.0, f64::max)
    }

    /// Viscous dissipation `uᵀAu`.
    pub fn dissipation(&self, state: &State) -> f64 {
        let u = &state.st[..2 * self.dz.n_velocity()];
        dot(u, &self.stokes_a.mul_vec(u))
    }

    /// Euclidean norms of the three stage residuals at `next` given `prev`.
    pub fn stage_residual_norms(&self, prev: &State, next: &State) -> Result<[f64; 3]> {
        let (p, dt) = (&self.params, self.dt);
        let dz = &self.dz;
        let r0 = dz.residual(Field::PhaseField, &next.pf, &Sources { pf: &prev.pf, of: &prev.of, st: &prev.st }, p, dt)?;
        let r1 = dz.residual(Field::Orientation, &next.of, &Sources { pf: &next.pf, of: &prev.of, st: &prev.st }, p, dt)?;
        let r2 = dz.residual(Field::Stokes, &next.st, &Sources { pf: &next.pf, of: &next.of, st: &[] }, p, dt)?;
        Ok([norm(&r0), norm(&r1), norm(&r2)])
    }
}

/// Free energy parts, already weighted by the dimensionless numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Energy {
    /// `(1/Ca) ∫ ε/2|∇φ|² + W(φ)/ε`
    pub surface: f64,
    /// `(1/Be) ∫ μ²/(2ε)` with the discrete `μ = M⁻¹(−εEφ − g(φ)/ε)`
    pub bending: f64,
    /// `(1/Pa) ∫ ½∇d:∇d + (c₁/4)|d|²(|d|² − 2φ)`
    pub filament: f64,
    pub total: f64,
}

fn free_energy_with(
    dz: &Discretization,
    mass: &SparseCholesky,
    state: &State,
    p: &ModelParameters,
) -> Result<Energy> {
    state.check(dz)?;
    let n = dz.n_scalar();
    let phi = &state.pf[..n];
    let d = &state.of[..2 * n];
    let nl = assemble_pfield_nonlinears(dz.scalar_space(), phi, &vec![0.0; n], d)?;
    let mut mu = dz.stiffness().mul_vec(phi);
    for (m, g) in mu.iter_mut().zip(&nl.g) {
        *m = -p.epsilon * *m - g / p.epsilon;
    }
    mass.solve_in_place(&mut mu);
    let [s, b, f] = dz.energy_integrals(phi, &mu, d, p)?;
    let (surface, bending, filament) = (s / p.ca, b / p.be, f / p.pa);
    Ok(Energy {
        surface,
        bending,
        filament,
        total: surface + bending + filament,
    })
}

/// Free energy of a state; see [`FomSolver::free_energy`].
pub fn compute_free_energy(dz: &Discretization, state: &State, p: &ModelParameters) -> Result<Energy> {
    free_energy_with(dz, &SparseCholesky::new(dz.mass())?, state, p)
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub state: State,
    pub iterations: [usize; 3],
    pub residuals: [Vec<Vec<f64>>; 3],
}

/// States `k = 0..=K` with per-step iteration counts and, if captured, the
/// Newton residual snapshots of every field.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub iterations: Vec<[usize; 3]>,
    pub residuals: [Vec<Vec<f64>>; 3],
    /// Set if a stage failed; the trajectory is then truncated.
    pub failure: Option<String>,
}

impl Trajectory {
    pub fn num_steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn snapshots(&self, field: Field) -> impl Iterator<Item = &[f64]> {
        self.states.iter().map(move |s| s.field(field))
    }

    pub fn into_result(self) -> Result<Trajectory> {
        match &self.failure {
            Some(msg) => Err(Error::StageFailed {
                stage: "simulation",
                step: self.num_steps(),
                source: Box::new(Error::Config(msg.clone())),
            }),
            None => Ok(self),
        }
    }
}

/// Shifts the pressure block of a Stokes vector to zero mean. Pressure is
/// only determined up to a constant; the full-order solvers return this
/// representative.
pub fn center_pressure(dz: &Discretization, st: &mut [f64]) {
    let ones = vec![1.0; dz.n_scalar()];
    let m1 = dz.mass().mul_vec(&ones);
    let p = &mut st[2 * dz.n_velocity()..];
    let mean = dot(&m1, p) / m1.iter().sum::<f64>();
    p.iter_mut().for_each(|v| *v -= mean);
}

/// Number of steps `K = ⌈T/Δt⌉`, robust to round-off in `T/Δt`.
pub fn num_steps(t_end: f64, dt: f64) -> usize {
    let q = t_end / dt;
    let r = q.round();
    if (q - r).abs() <= 1e-9 * r.max(1.0) {
        r as usize
    } else {
        q.ceil() as usize
    }
}

/// Runs `steps` splitting steps from `initial`; `observe` sees every new state.
pub fn run_fom(
    solver: &mut FomSolver,
    initial: State,
    steps: usize,
    capture: bool,
    mut observe: impl FnMut(usize, &State),
) -> Trajectory {
    let mut traj = Trajectory {
        states: vec![initial],
        iterations: Vec::with_capacity(steps),
        residuals: Default::default(),
        failure: None,
    };
    observe(0, &traj.states[0]);
    for k in 0..steps {
        match solver.step(traj.states.last().unwrap(), capture, k) {
            Ok(rep) => {
                observe(k + 1, &rep.state);
                traj.iterations.push(rep.iterations);
                for (acc, r) in traj.residuals.iter_mut().zip(rep.residuals) {
                    acc.extend(r);
                }
                traj.states.push(rep.state);
            }
            Err(e) => {
                log::warn!("simulation stopped: {e}");
                traj.failure = Some(e.to_string());
                break;
            }
        }
    }
    traj
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{CellKind, Mesh, Rect};

    fn circle_setup(nx: usize, side: f64) -> (Arc<Discretization>, State, ModelParameters) {
        let mesh = Arc::new(Mesh::build(nx, nx, Rect::square(side), CellKind::Simplicial).unwrap());
        let dz = Arc::new(Discretization::new(mesh).unwrap());
        let p = ModelParameters::default();
        let c = side / 2.0;
        let radius = side / 6.0;
        let eps = p.epsilon;
        let phi0 = move |x: [f64; 2]| {
            let r = radius - ((x[0] - c).powi(2) + (x[1] - c).powi(2)).sqrt();
            (r / (2f64.sqrt() * eps)).tanh()
        };
        let s = State::initial(&dz, phi0, |x| [(phi0(x) + 1.0) / 2.0, 0.0]);
        (dz, s, p)
    }

    #[test]
    fn uniform_pure_phase_is_a_fixed_point() {
        let mesh = Arc::new(Mesh::build(5, 5, Rect::square(5.0), CellKind::Simplicial).unwrap());
        let dz = Arc::new(Discretization::new(mesh).unwrap());
        let s = State::initial(&dz, |_| 1.0, |_| [0.0, 0.0]);
        let mut solver = FomSolver::new(dz, ModelParameters::default(), 1e-3, SolverConfig::default()).unwrap();
        let rep = solver.step(&s, false, 0).unwrap();
        for f in Field::ALL {
            let diff = rep.state.field(f).iter().zip(s.field(f)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-10, "{f}: {diff}");
        }
        assert_eq!(rep.iterations, [0, 0, 1]);
    }

    #[test]
    fn circle_steps_converge_conserve_mass_and_use_updated_fields() {
        let (dz, s0, p) = circle_setup(16, 12.0);
        let mut solver = FomSolver::new(dz.clone(), p, 1e-3, SolverConfig::default()).unwrap();
        let m0 = solver.phase_mass(&s0);
        let traj = run_fom(&mut solver, s0.clone(), 5, true, |_, _| {});
        assert!(traj.failure.is_none());
        assert_eq!(traj.states.len(), 6);
        for (k, it) in traj.iterations.iter().enumerate() {
            assert!(it[0] >= 1 && it[0] <= 8, "step {k}: {it:?}");
            assert_eq!(it[2], 1);
        }
        let expected: usize = traj.iterations.iter().map(|it| it[0]).sum();
        assert_eq!(traj.residuals[0].len(), expected);
        assert_eq!(traj.residuals[2].len(), 5);
        let m1 = solver.phase_mass(traj.states.last().unwrap());
        assert!(((m1 - m0) / m0).abs() < 1e-10);
        assert_eq!(solver.preconditioner_factorizations(), 1);

        // each stage residual vanishes at the computed state with the
        // splitting's source fields, and not with the stale phase field
        let (prev, next) = (&traj.states[0], &traj.states[1]);
        let norms = solver.stage_residual_norms(prev, next).unwrap();
        assert!(norms[0] < 1e-9 && norms[1] < 1e-9, "{norms:?}");
        assert!(norms[2] <= 1e-9 * norm(&traj.residuals[2][0]), "{norms:?}");
        let stale = dz
            .residual(Field::Orientation, &next.of, &Sources { pf: &prev.pf, of: &prev.of, st: &prev.st }, &p, 1e-3)
            .unwrap();
        assert!(norm(&stale) > 1e3 * norms[1]);
    }

    #[test]
    fn direct_and_iterative_solvers_agree() {
        let (dz, s0, p) = circle_setup(8, 12.0);
        let direct = SolverConfig {
            pfield: PfieldSolver::Direct,
            ofield: OfieldSolver::Direct,
            stokes: StokesSolver::Direct,
            ..Default::default()
        };
        let mut a = FomSolver::new(dz.clone(), p, 1e-3, SolverConfig::default()).unwrap();
        let mut b = FomSolver::new(dz, p, 1e-3, direct).unwrap();
        let ra = a.step(&s0, false, 0).unwrap().state;
        let rb = b.step(&s0, false, 0).unwrap().state;
        for f in Field::ALL {
            let d = ra.field(f).iter().zip(rb.field(f)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(d < 1e-8, "{f}: {d}");
        }
    }

    #[test]
    fn energy_special_values() {
        let mesh = Arc::new(Mesh::build(4, 4, Rect::square(4.0), CellKind::Rectangular).unwrap());
        let dz = Discretization::new(mesh).unwrap();
        let p = ModelParameters { ca: 0.5, pa: 2.0, ..Default::default() };
        let area = 16.0;
        let e = compute_free_energy(&dz, &State::initial(&dz, |_| 1.0, |_| [0.0, 0.0]), &p).unwrap();
        assert!(e.total.abs() < 1e-20);
        let e = compute_free_energy(&dz, &State::initial(&dz, |_| 0.0, |_| [0.0, 0.0]), &p).unwrap();
        assert!((e.surface - area / (4.0 * p.ca * p.epsilon)).abs() < 1e-12);
        assert!(e.bending.abs() < 1e-20);
        let e = compute_free_energy(&dz, &State::initial(&dz, |_| 1.0, |_| [1.0, 0.0]), &p).unwrap();
        assert!((e.filament + p.c1 * area / (4.0 * p.pa)).abs() < 1e-12);
    }

    #[test]
    fn step_count_rounding() {
        assert_eq!(num_steps(0.2, 1e-3), 200);
        assert_eq!(num_steps(0.0, 1e-3), 0);
        assert_eq!(num_steps(0.0105, 1e-3), 11);
    }
}
