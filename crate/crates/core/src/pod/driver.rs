//! Chunked HAPOD over time: every training parameter advances `l` steps at a
//! time, each chunk is compressed by a local POD per parameter, and the
//! scaled local modes are merged incrementally with the previous output.
//!
//! As a tree, leaf `(m, j)` holds the chunk-`j` data of parameter `m`; node
//! `j` has children `[node j−1, leaves (·, j)]`; the root has the single child
//! `node n_chunks−1`. Hence `L_T = n_chunks + 2`.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{local_tolerance, pod, HapodResult, HapodStats, InnerProduct, PodMethod};
use crate::assembly::{Discretization, Field};
use crate::dynamics::{FomSolver, SolverConfig, State};
use crate::error::{Error, Result};
use crate::params::ModelParameters;

/// One of the six snapshot sets: states or Newton residuals of a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotSet {
    States(Field),
    Residuals(Field),
}

impl SnapshotSet {
    pub const ALL: [SnapshotSet; 6] = [
        SnapshotSet::States(Field::PhaseField),
        SnapshotSet::States(Field::Orientation),
        SnapshotSet::States(Field::Stokes),
        SnapshotSet::Residuals(Field::PhaseField),
        SnapshotSet::Residuals(Field::Orientation),
        SnapshotSet::Residuals(Field::Stokes),
    ];

    pub fn index(self) -> usize {
        match self {
            SnapshotSet::States(f) => f.index(),
            SnapshotSet::Residuals(f) => 3 + f.index(),
        }
    }

    pub fn field(self) -> Field {
        match self {
            SnapshotSet::States(f) | SnapshotSet::Residuals(f) => f,
        }
    }

    pub fn name(self) -> String {
        match self {
            SnapshotSet::States(f) => format!("{f}_states"),
            SnapshotSet::Residuals(f) => format!("{f}_residuals"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChunkedHapodOptions {
    /// Time steps per chunk `l`.
    pub chunk_size: usize,
    pub omega: f64,
    /// Target tolerances `ε*` per snapshot set, in [`SnapshotSet::ALL`]
    /// order. Every entry starts an independent pipeline on the same
    /// simulations; an empty list skips the set.
    pub tolerances: [Vec<f64>; 6],
    pub workers: usize,
    pub method: PodMethod,
}

impl Default for ChunkedHapodOptions {
    fn default() -> Self {
        ChunkedHapodOptions {
            chunk_size: 10,
            omega: 0.95,
            tolerances: Default::default(),
            workers: 1,
            method: PodMethod::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChunkedHapod {
    /// `bases[set][t]` is the result for `tolerances[set][t]`.
    pub bases: [Vec<HapodResult>; 6],
    pub num_snapshots: [usize; 6],
    pub num_chunks: usize,
    pub depth: usize,
    pub simulation_seconds: f64,
    pub pod_seconds: f64,
}

struct Runner {
    solver: FomSolver,
    state: State,
    step: usize,
}

/// Advances a runner through one chunk and returns its six snapshot sets.
fn run_chunk(r: &mut Runner, first: bool, steps: usize) -> Result<[Vec<Vec<f64>>; 6]> {
    let mut sets: [Vec<Vec<f64>>; 6] = Default::default();
    let push_state = |sets: &mut [Vec<Vec<f64>>; 6], s: &State| {
        for f in Field::ALL {
            sets[f.index()].push(s.field(f).to_vec());
        }
    };
    if first {
        push_state(&mut sets, &r.state);
    }
    for _ in 0..steps {
        let rep = r.solver.step(&r.state, true, r.step)?;
        let [a, b, c] = rep.residuals;
        sets[3].extend(a);
        sets[4].extend(b);
        sets[5].extend(c);
        push_state(&mut sets, &rep.state);
        r.state = rep.state;
        r.step += 1;
    }
    Ok(sets)
}

struct Pipeline {
    set: usize,
    eps: f64,
    /// Scaled output of the last node-level POD.
    carried: Vec<Vec<f64>>,
    snaps: usize,
    stats: HapodStats,
}

fn scaled(r: super::PodResult) -> Vec<Vec<f64>> {
    r.scaled_modes()
}

/// Runs the FOM for every training parameter and compresses states and
/// residuals on the fly. `weights[f]` is the inner product for field `f`.
#[allow(clippy::too_many_arguments)]
pub fn chunked_hapod(
    dz: &Arc<Discretization>,
    params: &[ModelParameters],
    initial: &State,
    dt: f64,
    steps: usize,
    solver: &SolverConfig,
    weights: &[InnerProduct; 3],
    opts: &ChunkedHapodOptions,
) -> Result<ChunkedHapod> {
    if opts.chunk_size == 0 {
        return Err(Error::Config("chunk size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&opts.omega) {
        return Err(Error::Config(format!("ω must lie in [0, 1], got {}", opts.omega)));
    }
    if params.is_empty() {
        return Err(Error::Config("no training parameters".into()));
    }
    initial.check(dz)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let l = opts.chunk_size;
    let num_chunks = (steps + 1).div_ceil(l);
    let depth = num_chunks + 2;
    let mut pipelines: Vec<Pipeline> = Vec::new();
    for (set, tols) in opts.tolerances.iter().enumerate() {
        for &eps in tols {
            if !(eps > 0.0) {
                return Err(Error::Config(format!("HAPOD tolerance must be positive, got {eps}")));
            }
            pipelines.push(Pipeline { set, eps, carried: Vec::new(), snaps: 0, stats: HapodStats::default() });
        }
    }

    let mut runners = params
        .iter()
        .map(|p| {
            Ok(Runner {
                solver: FomSolver::new(dz.clone(), *p, dt, *solver)?,
                state: initial.clone(),
                step: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (mut sim_time, mut pod_time) = (0.0, 0.0);
    let mut num_snapshots = [0usize; 6];
    pool.install(|| -> Result<()> {
        for j in 0..num_chunks {
            let first = j == 0;
            let done = if first { 0 } else { j * l - 1 };
            let chunk_steps = if first { (l - 1).min(steps) } else { l.min(steps - done) };
            let t = Instant::now();
            let data: Vec<[Vec<Vec<f64>>; 6]> = runners
                .par_iter_mut()
                .map(|r| run_chunk(r, first, chunk_steps))
                .collect::<Result<_>>()?;
            sim_time += t.elapsed().as_secs_f64();
            for d in &data {
                for (n, set) in num_snapshots.iter_mut().zip(d) {
                    *n += set.len();
                }
            }

            let t = Instant::now();
            pipelines.par_iter_mut().try_for_each(|pl| -> Result<()> {
                let (set, target) = (pl.set, pl.eps);
                let w = &weights[set % 3];
                let leaves: Vec<Vec<Vec<f64>>> = data
                    .par_iter()
                    .map(|d| {
                        let s = &d[set];
                        let eps = local_tolerance(target, opts.omega, depth, s.len(), false);
                        Ok(scaled(pod(s, w, eps, opts.method)?))
                    })
                    .collect::<Result<_>>()?;
                for (d, leaf) in data.iter().zip(&leaves) {
                    let st = &mut pl.stats;
                    st.max_input_vectors = st.max_input_vectors.max(d[pl.set].len());
                    st.max_local_modes = st.max_local_modes.max(leaf.len());
                    pl.snaps += d[pl.set].len();
                }
                let mut input = std::mem::take(&mut pl.carried);
                input.extend(leaves.into_iter().flatten());
                let eps = local_tolerance(pl.eps, opts.omega, depth, pl.snaps, false);
                pl.stats.max_input_vectors = pl.stats.max_input_vectors.max(input.len());
                pl.carried = scaled(pod(&input, w, eps, opts.method)?);
                pl.stats.max_local_modes = pl.stats.max_local_modes.max(pl.carried.len());
                Ok(())
            })?;
            pod_time += t.elapsed().as_secs_f64();
            log::info!("chunk {}/{} done", j + 1, num_chunks);
        }
        Ok(())
    })?;

    let t = Instant::now();
    let mut bases: [Vec<HapodResult>; 6] = Default::default();
    for pl in pipelines {
        let w = &weights[pl.set % 3];
        let eps = local_tolerance(pl.eps, opts.omega, depth, pl.snaps, true);
        let mut stats = pl.stats;
        stats.max_input_vectors = stats.max_input_vectors.max(pl.carried.len());
        let r = pod(&pl.carried, w, eps, opts.method)?;
        stats.final_modes = r.len();
        stats.num_snapshots = pl.snaps;
        bases[pl.set].push(HapodResult { modes: r.modes, singular_values: r.singular_values, stats });
    }
    pod_time += t.elapsed().as_secs_f64();
    Ok(ChunkedHapod {
        bases,
        num_snapshots,
        num_chunks,
        depth,
        simulation_seconds: sim_time,
        pod_seconds: pod_time,
    })
}
