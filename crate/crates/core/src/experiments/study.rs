//! Offline training and online evaluation of the MOR studies.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use crate::assembly::{Discretization, Field};
use crate::dynamics::{center_pressure, run_fom, FomSolver, State};
use crate::error::{Error, Result};
use crate::params::ModelParameters;
use crate::pod::{chunked_hapod, ChunkedHapod, ChunkedHapodOptions, HapodResult, InnerProduct, SnapshotSet};
use crate::rom::{
    mean_l2_errors, run_rom, Basis, DeimInterpolant, FieldReduction, MeanErrors, ReducedModel, RomSolver,
};

fn push_unique(v: &mut Vec<f64>, t: f64) {
    if !v.contains(&t) {
        v.push(t);
    }
}

/// HAPOD target tolerances of the six snapshot sets implied by `config`.
pub fn training_tolerances(config: &RunConfig) -> [Vec<f64>; 6] {
    let m = &config.mor;
    let mut out: [Vec<f64>; 6] = Default::default();
    for f in Field::ALL {
        let (si, ri) = (SnapshotSet::States(f).index(), SnapshotSet::Residuals(f).index());
        for &t in &m.state_tolerances {
            push_unique(&mut out[si], t);
        }
        push_unique(&mut out[si], m.rom_state_tolerance);
        for &t in &m.residual_tolerances {
            push_unique(&mut out[ri], t);
        }
        if let Some(t) = m.rom_deim_tolerance {
            push_unique(&mut out[ri], t);
        }
        if f == m.deim_field {
            push_unique(&mut out[si], m.deim_pod_tolerance);
            for &t in &m.deim_tolerances {
                push_unique(&mut out[ri], t);
            }
        }
    }
    out
}

/// Bases of all pipelines, looked up by set and tolerance.
#[derive(Debug, Clone)]
pub struct Training {
    pub tolerances: [Vec<f64>; 6],
    pub hapod: ChunkedHapod,
    pub parameters: Vec<ModelParameters>,
}

impl Training {
    pub fn result(&self, set: SnapshotSet, tol: f64) -> Result<&HapodResult> {
        let i = set.index();
        self.tolerances[i]
            .iter()
            .position(|&t| t == tol)
            .map(|k| &self.hapod.bases[i][k])
            .ok_or_else(|| Error::Config(format!("no {} basis was trained for tolerance {tol:e}", set.name())))
    }

    pub fn basis(&self, dz: &Discretization, field: Field, tol: f64) -> Result<Basis> {
        Basis::from_columns(dz.dim(field), &self.result(SnapshotSet::States(field), tol)?.modes)
    }

    pub fn interpolant(&self, field: Field, tol: f64) -> Result<DeimInterpolant> {
        DeimInterpolant::new(self.result(SnapshotSet::Residuals(field), tol)?.modes.clone())
    }
}

pub fn weights(config: &RunConfig, dz: &Discretization) -> [InnerProduct; 3] {
    Field::ALL.map(|f| config.mor.weight.inner_product(dz, f))
}

/// Runs the training simulations with on-the-fly HAPOD.
pub fn train(config: &RunConfig, dz: &Arc<Discretization>) -> Result<Training> {
    let tolerances = training_tolerances(config);
    let parameters = config.training_parameters();
    let initial = config.scenario.initial_state(dz, config.params.epsilon);
    let opts = ChunkedHapodOptions {
        chunk_size: config.mor.chunk_size,
        omega: config.mor.omega,
        tolerances: tolerances.clone(),
        workers: config.workers,
        method: config.mor.method,
    };
    let hapod = chunked_hapod(
        dz,
        &parameters,
        &initial,
        config.dt,
        config.steps(),
        &config.solvers,
        &weights(config, dz),
        &opts,
    )?;
    Ok(Training { tolerances, hapod, parameters })
}

/// A full-order trajectory of a validation parameter.
#[derive(Debug, Clone)]
pub struct Reference {
    pub params: ModelParameters,
    pub states: Vec<State>,
    pub seconds: f64,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Full-order runs of the given parameters, in parallel over `workers`.
pub fn references(config: &RunConfig, dz: &Arc<Discretization>, params: &[ModelParameters]) -> Result<Vec<Reference>> {
    let initial = config.scenario.initial_state(dz, config.params.epsilon);
    pool(config.workers)?.install(|| {
        params
            .par_iter()
            .map(|p| {
                let t = Instant::now();
                let mut solver = FomSolver::new(dz.clone(), *p, config.dt, config.solvers)?;
                let traj = run_fom(&mut solver, initial.clone(), config.steps(), false, |_, _| {}).into_result()?;
                Ok(Reference { params: *p, states: traj.states, seconds: t.elapsed().as_secs_f64() })
            })
            .collect()
    })
}

/// Errors of one reduced rollout against its reference.
#[derive(Debug, Clone, Serialize)]
pub struct RolloutErrors {
    pub errors: [MeanErrors; 3],
    /// Largest Gauss-Newton / Newton iteration count per stage.
    pub max_iterations: [usize; 3],
    pub min_iterations: [usize; 3],
    pub seconds: f64,
    pub stage_seconds: [f64; 3],
}

/// Rolls out `model` for every reference and compares all three fields.
pub fn evaluate(config: &RunConfig, model: &ReducedModel, refs: &[Reference]) -> Result<Vec<RolloutErrors>> {
    pool(config.workers)?.install(|| {
        refs.par_iter()
            .map(|r| {
                let mut solver = RomSolver::new(model, r.params, config.dt, config.solvers)?;
                let traj = run_rom(&mut solver, &r.states[0], r.states.len() - 1)?;
                if let Some(msg) = &traj.failure {
                    return Err(Error::Config(format!("reduced simulation failed: {msg}")));
                }
                // pressure is compared modulo constants
                let rec: Vec<State> = traj
                    .states
                    .iter()
                    .map(|s| {
                        let mut s = model.reconstruct(s);
                        center_pressure(model.discretization(), &mut s.st);
                        s
                    })
                    .collect();
                let errors = Field::ALL.map(|f| {
                    let a: Vec<&[f64]> = r.states.iter().map(|s| s.field(f)).collect();
                    let b: Vec<&[f64]> = rec.iter().map(|s| s.field(f)).collect();
                    mean_l2_errors(&a, &b, model.weight(f))
                });
                let [e0, e1, e2] = errors;
                let fold = |init: usize, g: fn(usize, usize) -> usize| {
                    std::array::from_fn(|k| traj.iterations.iter().map(|it| it[k]).fold(init, g))
                };
                Ok(RolloutErrors {
                    errors: [e0?, e1?, e2?],
                    max_iterations: fold(0, usize::max),
                    min_iterations: fold(usize::MAX, usize::min),
                    seconds: traj.seconds,
                    stage_seconds: solver.stage_seconds,
                })
            })
            .collect()
    })
}

/// Only `field` reduced (residual minimization over all DOFs).
pub fn single_field_model(config: &RunConfig, dz: &Arc<Discretization>, training: &Training, field: Field, tol: f64) -> Result<ReducedModel> {
    let mut reductions = [FieldReduction::Full, FieldReduction::Full, FieldReduction::Full];
    reductions[field.index()] = FieldReduction::Reduced(training.basis(dz, field, tol)?);
    ReducedModel::new(dz.clone(), config.mor.weight, reductions, config.mor.gauss_newton)
}

/// Only `field` reduced, with DEIM at `deim_tol` if given.
pub fn deim_field_model(
    config: &RunConfig,
    dz: &Arc<Discretization>,
    training: &Training,
    field: Field,
    pod_tol: f64,
    deim_tol: f64,
) -> Result<ReducedModel> {
    let mut reductions = [FieldReduction::Full, FieldReduction::Full, FieldReduction::Full];
    reductions[field.index()] =
        FieldReduction::Deim(training.basis(dz, field, pod_tol)?, training.interpolant(field, deim_tol)?);
    ReducedModel::new(dz.clone(), config.mor.weight, reductions, config.mor.gauss_newton)
}

/// All three fields reduced at the bundled tolerances.
pub fn full_model(config: &RunConfig, dz: &Arc<Discretization>, training: &Training) -> Result<ReducedModel> {
    let m = &config.mor;
    let reductions = Field::ALL.map(|f| -> Result<FieldReduction> {
        let basis = training.basis(dz, f, m.rom_state_tolerance)?;
        Ok(match m.rom_deim_tolerance {
            Some(t) => FieldReduction::Deim(basis, training.interpolant(f, t)?),
            None => FieldReduction::Reduced(basis),
        })
    });
    let [a, b, c] = reductions;
    ReducedModel::new(dz.clone(), m.weight, [a?, b?, c?], m.gauss_newton)
}

/// Mean over rollouts of each field's absolute error, in quadrature so that
/// it is again a root-mean-square over all snapshots.
pub fn pooled_abs(runs: &[RolloutErrors]) -> [f64; 3] {
    std::array::from_fn(|k| {
        (runs.iter().map(|r| r.errors[k].abs.powi(2)).sum::<f64>() / runs.len().max(1) as f64).sqrt()
    })
}

pub fn pooled_rel(runs: &[RolloutErrors]) -> [f64; 3] {
    std::array::from_fn(|k| {
        (runs.iter().map(|r| r.errors[k].rel.powi(2)).sum::<f64>() / runs.len().max(1) as f64).sqrt()
    })
}
