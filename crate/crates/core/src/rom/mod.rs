//! Reduced models: per field, the stage residual is minimized over the span
//! of a reduced basis, optionally hyper-reduced by DEIM so that only the
//! element patches of the interpolation DOFs are ever assembled.
//!
//! For a DEIM-reduced stage the objective is `‖(ZᵀC)⁻¹Zᵀ r(V x̄)‖₂`, which
//! equals the `W`-norm of the interpolated residual because `C` is
//! `W`-orthonormal. Without DEIM it is `‖r(V x̄)‖₂` over all DOFs.

mod basis;
mod deim;
mod gauss_newton;
mod restricted;

use std::borrow::Cow;
use std::cell::RefCell;
use std::rc::Rc;
use std::io::{Read, Write};
use std::sync::Arc;
use std::time::Instant;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use basis::{row_dot, Basis};
pub use deim::{deim_select, DeimInterpolant};
pub use gauss_newton::{gauss_newton, least_squares, GaussNewtonOptions, GaussNewtonOutcome, LeastSquares, Linearization};
pub use restricted::{element_patch, EvalWorkspace, FieldInput, RestrictedEvaluator};

use crate::assembly::{Discretization, Field, Sources};
use crate::dynamics::{FomSolver, SolverConfig, State};
use crate::error::{Error, Result};
use crate::params::ModelParameters;
use crate::pod::InnerProduct;

/// The inner product the bases are orthonormal in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Euclidean,
    /// The block-diagonal `L²` mass matrix of each stage vector.
    #[default]
    Mass,
}

impl WeightKind {
    pub fn inner_product(self, dz: &Discretization, field: Field) -> InnerProduct {
        match self {
            WeightKind::Euclidean => InnerProduct::Euclidean,
            WeightKind::Mass => InnerProduct::Weighted(Arc::new(dz.weight_matrix(field))),
        }
    }
}

/// How one field is treated by a reduced model.
#[derive(Debug, Clone)]
pub enum FieldReduction {
    /// Solved with the full-order stage solver.
    Full,
    /// Residual minimization over all DOFs.
    Reduced(Basis),
    /// Residual minimization of the DEIM interpolant.
    Deim(Basis, DeimInterpolant),
}

impl FieldReduction {
    pub fn basis(&self) -> Option<&Basis> {
        match self {
            FieldReduction::Full => None,
            FieldReduction::Reduced(b) | FieldReduction::Deim(b, _) => Some(b),
        }
    }

    pub fn interpolant(&self) -> Option<&DeimInterpolant> {
        match self {
            FieldReduction::Deim(_, i) => Some(i),
            _ => None,
        }
    }

    fn tag(&self) -> u8 {
        match self {
            FieldReduction::Full => 0,
            FieldReduction::Reduced(_) => 1,
            FieldReduction::Deim(..) => 2,
        }
    }
}

/// Bases, interpolants and restricted evaluators of all three fields.
/// Immutable and parameter-independent; rollouts borrow it.
#[derive(Debug)]
pub struct ReducedModel {
    dz: Arc<Discretization>,
    weight: WeightKind,
    weights: [InnerProduct; 3],
    reductions: [FieldReduction; 3],
    evaluators: [Option<RestrictedEvaluator>; 3],
    options: GaussNewtonOptions,
}

impl ReducedModel {
    pub fn new(
        dz: Arc<Discretization>,
        weight: WeightKind,
        reductions: [FieldReduction; 3],
        options: GaussNewtonOptions,
    ) -> Result<ReducedModel> {
        Self::with_patches(dz, weight, reductions, options, [None, None, None])
    }

    fn with_patches(
        dz: Arc<Discretization>,
        weight: WeightKind,
        reductions: [FieldReduction; 3],
        options: GaussNewtonOptions,
        patches: [Option<Vec<usize>>; 3],
    ) -> Result<ReducedModel> {
        for f in Field::ALL {
            let n = dz.dim(f);
            if let Some(b) = reductions[f.index()].basis() {
                if b.nrows() != n {
                    return Err(Error::mismatch("basis length", n, b.nrows()));
                }
            }
            if let Some(i) = reductions[f.index()].interpolant() {
                if let Some(c) = i.basis().iter().find(|c| c.len() != n) {
                    return Err(Error::mismatch("collateral basis length", n, c.len()));
                }
            }
        }
        let bases = Field::ALL.map(|f| reductions[f.index()].basis());
        let mut patches = patches;
        let evaluators = Field::ALL.map(|f| {
            let patch = patches[f.index()].take();
            match &reductions[f.index()] {
                FieldReduction::Full => None,
                FieldReduction::Reduced(_) => {
                    let all: Vec<usize> = (0..dz.dim(f)).collect();
                    let elements = (0..dz.num_elements()).collect();
                    Some(RestrictedEvaluator::new(&dz, f, &all, bases, Some(elements)))
                }
                FieldReduction::Deim(_, i) => Some(RestrictedEvaluator::new(&dz, f, i.dofs(), bases, patch)),
            }
        });
        let weights = Field::ALL.map(|f| weight.inner_product(&dz, f));
        Ok(ReducedModel { dz, weight, weights, reductions, evaluators, options })
    }

    pub fn discretization(&self) -> &Arc<Discretization> {
        &self.dz
    }

    pub fn reduction(&self, field: Field) -> &FieldReduction {
        &self.reductions[field.index()]
    }

    pub fn evaluator(&self, field: Field) -> Option<&RestrictedEvaluator> {
        self.evaluators[field.index()].as_ref()
    }

    pub fn weight(&self, field: Field) -> &InnerProduct {
        &self.weights[field.index()]
    }

    pub fn options(&self) -> &GaussNewtonOptions {
        &self.options
    }

    /// `(N_φ, N_o, N_s)`; a full field reports its full dimension.
    pub fn reduced_dims(&self) -> [usize; 3] {
        Field::ALL.map(|f| self.reductions[f.index()].basis().map_or(self.dz.dim(f), Basis::ncols))
    }

    /// `(M_φ, M_o, M_s)`; zero without DEIM.
    pub fn interpolation_dims(&self) -> [usize; 3] {
        Field::ALL.map(|f| self.reductions[f.index()].interpolant().map_or(0, DeimInterpolant::len))
    }

    /// Reduced coordinates of a full state: `VᵀW x` per reduced field.
    pub fn reduce(&self, state: &State) -> Result<ReducedState> {
        state.check(&self.dz)?;
        Ok(ReducedState {
            coords: Field::ALL.map(|f| match self.reductions[f.index()].basis() {
                Some(b) => b.project(&self.weights[f.index()], state.field(f)),
                None => state.field(f).to_vec(),
            }),
        })
    }

    pub fn reconstruct_field(&self, field: Field, coords: &[f64]) -> Vec<f64> {
        match self.reductions[field.index()].basis() {
            Some(b) => b.reconstruct(coords),
            None => coords.to_vec(),
        }
    }

    pub fn reconstruct(&self, s: &ReducedState) -> State {
        State {
            pf: self.reconstruct_field(Field::PhaseField, &s.coords[0]),
            of: self.reconstruct_field(Field::Orientation, &s.coords[1]),
            st: self.reconstruct_field(Field::Stokes, &s.coords[2]),
        }
    }

    fn input<'a>(&self, field: Field, coords: &'a [f64]) -> FieldInput<'a> {
        match self.reductions[field.index()] {
            FieldReduction::Full => FieldInput::Full(coords),
            _ => FieldInput::Reduced(coords),
        }
    }
}

/// Reduced coordinates per field; a full field stores its full vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub coords: [Vec<f64>; 3],
}

/// One rollout of a [`ReducedModel`] for a fixed parameter.
pub struct RomSolver<'m> {
    model: &'m ReducedModel,
    params: ModelParameters,
    dt: f64,
    fom: Option<FomSolver>,
    workspaces: [Option<RefCell<EvalWorkspace>>; 3],
    /// Factorized Jacobian of the affine Stokes stage, built on first use.
    stokes_linearization: Option<Rc<LeastSquares>>,
    /// Stage wall-clock seconds, summed over steps.
    pub stage_seconds: [f64; 3],
}

impl<'m> RomSolver<'m> {
    /// `config` configures the full-order solver of unreduced fields.
    pub fn new(model: &'m ReducedModel, params: ModelParameters, dt: f64, config: SolverConfig) -> Result<Self> {
        params.validate()?;
        let any_full = model.reductions.iter().any(|r| matches!(r, FieldReduction::Full));
        let fom = any_full
            .then(|| FomSolver::new(model.dz.clone(), params, dt, config))
            .transpose()?;
        let workspaces = Field::ALL.map(|f| {
            model.evaluators[f.index()].as_ref().map(|_| RefCell::new(EvalWorkspace::new(&model.dz, f)))
        });
        Ok(RomSolver { model, params, dt, fom, workspaces, stokes_linearization: None, stage_seconds: [0.0; 3] })
    }

    pub fn model(&self) -> &ReducedModel {
        self.model
    }

    /// Objective `ρ(x̄)` of a reduced stage.
    pub fn stage_objective(&self, field: Field, x: &[f64], inputs: [FieldInput; 3]) -> Vec<f64> {
        let ev = self.model.evaluators[field.index()].as_ref().expect("reduced field");
        let mut ws = self.workspaces[field.index()].as_ref().unwrap().borrow_mut();
        let rz = ev.residual(&self.model.dz, &mut ws, x, inputs, &self.params, self.dt);
        match self.model.reductions[field.index()].interpolant() {
            Some(i) => i.norm_coordinates(&rz),
            None => rz,
        }
    }

    /// `∂ρ/∂x̄` of a reduced stage.
    pub fn stage_jacobian(&self, field: Field, x: &[f64], inputs: [FieldInput; 3]) -> DMatrix<f64> {
        let ev = self.model.evaluators[field.index()].as_ref().expect("reduced field");
        let mut ws = self.workspaces[field.index()].as_ref().unwrap().borrow_mut();
        let jz = ev.jacobian(&self.model.dz, &mut ws, x, inputs, &self.params, self.dt);
        match self.model.reductions[field.index()].interpolant() {
            Some(i) => {
                let m = i.len();
                DMatrix::from_row_slice(m, m, i.norm_map()) * jz
            }
            None => jz,
        }
    }

    fn solve_stage(&mut self, field: Field, x0: &[f64], src: [&[f64]; 3]) -> Result<(Vec<f64>, usize)> {
        let t = Instant::now();
        let model = self.model;
        let out = match &model.reductions[field.index()] {
            FieldReduction::Full => {
                let full: [Cow<[f64]>; 3] = Field::ALL.map(|g| {
                    if field.sources_used()[g.index()] {
                        match model.reductions[g.index()].basis() {
                            Some(b) => Cow::Owned(b.reconstruct(src[g.index()])),
                            None => Cow::Borrowed(src[g.index()]),
                        }
                    } else {
                        Cow::Borrowed(&[][..])
                    }
                });
                let s = Sources { pf: &full[0], of: &full[1], st: &full[2] };
                let out = self.fom.as_mut().expect("full-order solver").solve_stage(field, x0, &s, false)?;
                (out.x, out.iterations)
            }
            _ if field == Field::Stokes => {
                let inputs = Field::ALL.map(|g| model.input(g, src[g.index()]));
                if self.stokes_linearization.is_none() {
                    let j = self.stage_jacobian(field, x0, inputs);
                    self.stokes_linearization = Some(Rc::new(LeastSquares::new(j)));
                }
                let lin = self.stokes_linearization.clone().unwrap();
                let out = gauss_newton(
                    |x| Ok(self.stage_objective(field, x, inputs)),
                    |_| Ok(lin.clone()),
                    x0,
                    &model.options,
                )?;
                (out.x, out.iterations)
            }
            _ => {
                let inputs = Field::ALL.map(|g| model.input(g, src[g.index()]));
                let out = gauss_newton(
                    |x| Ok(self.stage_objective(field, x, inputs)),
                    |x| Ok(self.stage_jacobian(field, x, inputs)),
                    x0,
                    &model.options,
                )?;
                (out.x, out.iterations)
            }
        };
        self.stage_seconds[field.index()] += t.elapsed().as_secs_f64();
        Ok(out)
    }

    /// One splitting step; returns the new state and the per-stage
    /// iteration counts.
    pub fn step(&mut self, s: &ReducedState, k: usize) -> Result<(ReducedState, [usize; 3])> {
        let wrap = |stage: &'static str| move |e: Error| Error::StageFailed { stage, step: k, source: Box::new(e) };
        let [pf, of, st] = &s.coords;
        let (pf1, i0) = self
            .solve_stage(Field::PhaseField, pf, [pf, of, st])
            .map_err(wrap("phase field"))?;
        let (of1, i1) = self
            .solve_stage(Field::Orientation, of, [&pf1, of, st])
            .map_err(wrap("orientation"))?;
        let (st1, i2) = self
            .solve_stage(Field::Stokes, st, [&pf1, &of1, st])
            .map_err(wrap("stokes"))?;
        Ok((ReducedState { coords: [pf1, of1, st1] }, [i0, i1, i2]))
    }
}

#[derive(Debug, Clone)]
pub struct RomTrajectory {
    pub states: Vec<ReducedState>,
    pub iterations: Vec<[usize; 3]>,
    pub failure: Option<String>,
    pub seconds: f64,
}

/// Reduces `initial` and runs `steps` reduced splitting steps.
pub fn run_rom(solver: &mut RomSolver, initial: &State, steps: usize) -> Result<RomTrajectory> {
    let t = Instant::now();
    let mut traj = RomTrajectory {
        states: vec![solver.model().reduce(initial)?],
        iterations: Vec::with_capacity(steps),
        failure: None,
        seconds: 0.0,
    };
    for k in 0..steps {
        match solver.step(traj.states.last().unwrap(), k) {
            Ok((s, it)) => {
                traj.states.push(s);
                traj.iterations.push(it);
            }
            Err(e) => {
                log::warn!("reduced simulation stopped: {e}");
                traj.failure = Some(e.to_string());
                break;
            }
        }
    }
    traj.seconds = t.elapsed().as_secs_f64();
    Ok(traj)
}

/// Mean `L²` errors over a trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanErrors {
    /// `(mean ‖v − v_rom‖²_W)^{1/2}`
    pub abs: f64,
    /// `(mean ‖v − v_rom‖²_W / ‖v‖²_W)^{1/2}` over snapshots with `v ≠ 0`.
    pub rel: f64,
    /// Zero snapshots left out of `rel`.
    pub excluded: usize,
}

/// Absolute and relative mean errors of `rom` against `fom`.
pub fn mean_l2_errors<A: AsRef<[f64]>, B: AsRef<[f64]>>(
    fom: &[A],
    rom: &[B],
    w: &InnerProduct,
) -> Result<MeanErrors> {
    if fom.len() != rom.len() {
        return Err(Error::mismatch("trajectory length", fom.len(), rom.len()));
    }
    if fom.is_empty() {
        return Ok(MeanErrors::default());
    }
    let (mut abs, mut rel, mut counted) = (0.0, 0.0, 0usize);
    for (v, r) in fom.iter().zip(rom) {
        let (v, r) = (v.as_ref(), r.as_ref());
        if v.len() != r.len() {
            return Err(Error::mismatch("snapshot length", v.len(), r.len()));
        }
        let d: Vec<f64> = v.iter().zip(r).map(|(a, b)| a - b).collect();
        let e2 = w.dot(&d, &d).max(0.0);
        let n2 = w.dot(v, v).max(0.0);
        abs += e2;
        if n2 > 0.0 {
            rel += e2 / n2;
            counted += 1;
        }
    }
    let excluded = fom.len() - counted;
    if excluded > 0 {
        log::warn!("{excluded} zero snapshot(s) left out of the relative error");
    }
    Ok(MeanErrors {
        abs: (abs / fom.len() as f64).sqrt(),
        rel: if counted > 0 { (rel / counted as f64).sqrt() } else { 0.0 },
        excluded,
    })
}

/// Errors of the `W`-orthogonal projection onto `basis` instead of a
/// reduced solve.
pub fn mean_projection_errors<A: AsRef<[f64]>>(fom: &[A], basis: &Basis, w: &InnerProduct) -> Result<MeanErrors> {
    let proj: Vec<Vec<f64>> = fom
        .iter()
        .map(|v| basis.reconstruct(&basis.project(w, v.as_ref())))
        .collect();
    mean_l2_errors(fom, &proj, w)
}

const MODEL_MAGIC: &[u8; 8] = b"CMROMDL\0";
const MODEL_VERSION: u32 = 1;

fn write_usizes(out: &mut impl Write, v: &[usize]) -> Result<()> {
    out.write_u64::<LittleEndian>(v.len() as u64)?;
    for &x in v {
        out.write_u64::<LittleEndian>(x as u64)?;
    }
    Ok(())
}

fn read_usizes(input: &mut impl Read, limit: usize) -> Result<Vec<usize>> {
    let len = input.read_u64::<LittleEndian>()? as usize;
    if len > limit {
        return Err(Error::Format(format!("list of {len} entries exceeds {limit}")));
    }
    (0..len)
        .map(|_| Ok(input.read_u64::<LittleEndian>()? as usize))
        .collect()
}

fn write_f64s(out: &mut impl Write, v: &[f64]) -> Result<()> {
    for &x in v {
        out.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

fn read_f64s(input: &mut impl Read, len: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; len];
    input.read_f64_into::<LittleEndian>(&mut v)?;
    Ok(v)
}

impl ReducedModel {
    /// Versioned little-endian container: discretization fingerprint,
    /// weight kind, Gauss-Newton options, then per field its basis and,
    /// with DEIM, collateral basis, DOFs, `(ZᵀC)⁻¹` and element patch.
    pub fn write(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(MODEL_MAGIC)?;
        out.write_u32::<LittleEndian>(MODEL_VERSION)?;
        write_usizes(out, &self.fingerprint())?;
        out.write_u8(match self.weight {
            WeightKind::Euclidean => 0,
            WeightKind::Mass => 1,
        })?;
        let o = &self.options;
        write_f64s(out, &[o.atol, o.armijo])?;
        write_usizes(out, &[o.max_iter, o.max_halvings])?;
        for f in Field::ALL {
            let r = &self.reductions[f.index()];
            out.write_u8(r.tag())?;
            if let Some(b) = r.basis() {
                write_usizes(out, &[b.nrows(), b.ncols()])?;
                write_f64s(out, b.data())?;
            }
            if let Some(i) = r.interpolant() {
                write_usizes(out, i.dofs())?;
                for c in i.basis() {
                    write_f64s(out, c)?;
                }
                write_f64s(out, i.inverse())?;
                let ev = self.evaluators[f.index()].as_ref().expect("DEIM evaluator");
                write_usizes(out, ev.elements())?;
            }
        }
        Ok(())
    }

    fn fingerprint(&self) -> Vec<usize> {
        let dz = &self.dz;
        vec![dz.num_elements(), dz.mesh().num_vertices(), dz.dim(Field::PhaseField), dz.dim(Field::Orientation), dz.dim(Field::Stokes)]
    }

    /// Reads a model written by [`Self::write`] for the same discretization.
    pub fn read(input: &mut impl Read, dz: Arc<Discretization>) -> Result<ReducedModel> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("not a reduced model file".into()));
        }
        let version = input.read_u32::<LittleEndian>()?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported reduced model version {version}")));
        }
        let fp = read_usizes(input, 16)?;
        let expected = vec![dz.num_elements(), dz.mesh().num_vertices(), dz.dim(Field::PhaseField), dz.dim(Field::Orientation), dz.dim(Field::Stokes)];
        if fp != expected {
            return Err(Error::Format(format!("model was built for discretization {fp:?}, not {expected:?}")));
        }
        let weight = match input.read_u8()? {
            0 => WeightKind::Euclidean,
            1 => WeightKind::Mass,
            t => return Err(Error::Format(format!("unknown weight kind {t}"))),
        };
        let fo = read_f64s(input, 2)?;
        let uo = read_usizes(input, 2)?;
        if uo.len() != 2 {
            return Err(Error::Format("Gauss-Newton options".into()));
        }
        let options = GaussNewtonOptions { atol: fo[0], armijo: fo[1], max_iter: uo[0], max_halvings: uo[1] };
        let mut reductions: [FieldReduction; 3] = [FieldReduction::Full, FieldReduction::Full, FieldReduction::Full];
        let mut patches: [Option<Vec<usize>>; 3] = [None, None, None];
        for f in Field::ALL {
            let n = dz.dim(f);
            let tag = input.read_u8()?;
            if tag == 0 {
                continue;
            }
            if tag > 2 {
                return Err(Error::Format(format!("unknown reduction tag {tag}")));
            }
            let dims = read_usizes(input, 2)?;
            if dims.len() != 2 || dims[0] != n || dims[1] > n {
                return Err(Error::Format(format!("bad basis dimensions {dims:?} for {f}")));
            }
            let basis = Basis::from_row_major(n, dims[1], read_f64s(input, n * dims[1])?)?;
            reductions[f.index()] = if tag == 1 {
                FieldReduction::Reduced(basis)
            } else {
                let dofs = read_usizes(input, n)?;
                let m = dofs.len();
                if dofs.iter().any(|&d| d >= n) {
                    return Err(Error::Format("interpolation DOF out of range".into()));
                }
                let columns = (0..m).map(|_| read_f64s(input, n)).collect::<Result<Vec<_>>>()?;
                let inverse = read_f64s(input, m * m)?;
                let elements = read_usizes(input, dz.num_elements())?;
                if elements.iter().any(|&e| e >= dz.num_elements()) || elements.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Format("malformed element patch".into()));
                }
                patches[f.index()] = Some(elements);
                FieldReduction::Deim(basis, DeimInterpolant::from_parts(columns, dofs, inverse)?)
            };
        }
        Self::with_patches(dz, weight, reductions, options, patches)
    }
}
