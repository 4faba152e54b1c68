//! The four experiment commands. Each writes its files below `out` and
//! returns a summary that is also written as JSON.
//!
//! Wall-clock timings go to separate `timings` files so that every other
//! output is reproducible bit for bit from the configuration.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use super::config::RunConfig;
use super::output::{write_csv, write_json, write_vtk};
use super::scenario::Scenario;
use super::study::{
    deim_field_model, evaluate, full_model, pooled_abs, pooled_rel, references, single_field_model, train, Training,
};
use crate::assembly::{Discretization, Field};
use crate::dynamics::{FomSolver, OfieldSolver, PfieldSolver, SolverConfig, State, StokesSolver};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::pod::{write_basis, SnapshotSet};

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticRow {
    pub step: usize,
    pub time: f64,
    pub mass: f64,
    pub energy: f64,
    pub surface: f64,
    pub bending: f64,
    pub filament: f64,
    pub max_velocity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub steps: usize,
    pub t_end: f64,
    pub initial_mass: f64,
    pub relative_mass_drift: f64,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub final_max_velocity: f64,
    /// Final velocity sup-norm below the configured threshold.
    pub steady: bool,
    pub mean_newton_iterations: [f64; 3],
    pub mean_linear_iterations: [f64; 3],
    pub vtk_files: Vec<String>,
}

fn diagnostics(solver: &FomSolver, s: &State, step: usize, dt: f64) -> Result<DiagnosticRow> {
    let e = solver.free_energy(s)?;
    Ok(DiagnosticRow {
        step,
        time: step as f64 * dt,
        mass: solver.phase_mass(s),
        energy: e.total,
        surface: e.surface,
        bending: e.bending,
        filament: e.filament,
        max_velocity: solver.max_velocity(s),
    })
}

/// Full-order run of the configured scenario at `config.params`.
///
/// On a stage failure the files written so far are kept and the error is
/// returned.
pub fn simulate(config: &RunConfig, out: &Path) -> Result<SimulateSummary> {
    config.validate()?;
    let t0 = Instant::now();
    let dz = config.discretization()?;
    let mut solver = FomSolver::new(dz.clone(), config.params, config.dt, config.solvers)?;
    let steps = config.steps();
    let mut state = config.scenario.initial_state(&dz, config.params.epsilon);
    let mut rows = vec![diagnostics(&solver, &state, 0, config.dt)?];
    let mut vtk_files = Vec::new();
    let mut vtk = |k: usize, s: &State| -> Result<()> {
        let name = format!("state_{k:06}.vtk");
        write_vtk(&out.join("vtk").join(&name), &dz, s, k as f64 * config.dt)?;
        vtk_files.push(name);
        Ok(())
    };
    vtk(0, &state)?;
    let mut failure = None;
    for k in 0..steps {
        match solver.step(&state, false, k) {
            Ok(rep) => state = rep.state,
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
        rows.push(diagnostics(&solver, &state, k + 1, config.dt)?);
        let every = config.output.vtk_every;
        if (every > 0 && (k + 1) % every == 0) || k + 1 == steps {
            vtk(k + 1, &state)?;
        }
    }
    write_csv(&out.join("diagnostics.csv"), &rows)?;
    let (first, last) = (&rows[0], rows.last().unwrap());
    let stats = Field::ALL.map(|f| solver.stats(f).clone());
    let summary = SimulateSummary {
        steps: last.step,
        t_end: last.time,
        initial_mass: first.mass,
        relative_mass_drift: (last.mass - first.mass).abs() / first.mass.abs().max(f64::MIN_POSITIVE),
        initial_energy: first.energy,
        final_energy: last.energy,
        final_max_velocity: last.max_velocity,
        steady: last.max_velocity < config.output.steady_velocity,
        mean_newton_iterations: stats.clone().map(|s| s.newton_iterations as f64 / s.steps.max(1) as f64),
        mean_linear_iterations: stats.clone().map(|s| s.mean_linear_iterations()),
        vtk_files,
    };
    write_json(&out.join("summary.json"), &summary)?;
    write_json(&out.join("timings.json"), &serde_json::json!({ "seconds": t0.elapsed().as_secs_f64(), "stages": stats }))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

/// One row of the solver table: a stage of one solver family on one grid.
#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkRecord {
    pub grid: usize,
    pub elements: usize,
    pub solver: String,
    pub stage: String,
    /// Mean Krylov iterations per linear solve (0 for direct solvers).
    pub iterations: f64,
    pub solves: usize,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
    /// Process peak resident set size after the run, if the OS reports it.
    pub peak_memory_bytes: Option<u64>,
}

/// Peak resident set size of this process (Linux only).
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn direct_solvers(base: SolverConfig) -> SolverConfig {
    SolverConfig { pfield: PfieldSolver::Direct, ofield: OfieldSolver::Direct, stokes: StokesSolver::Direct, ..base }
}

/// Iterative and (optionally) direct solvers on the circle scenario for the
/// configured grids, `benchmark.steps` steps each at `config.params`.
pub fn benchmark_solvers(config: &RunConfig, out: &Path) -> Result<Vec<BenchmarkRecord>> {
    config.validate()?;
    let b = &config.benchmark;
    let scenario = Scenario::Circle;
    let mut variants = vec![("iterative", config.solvers)];
    if b.direct {
        variants.push(("direct", direct_solvers(config.solvers)));
    }
    let mut records = Vec::new();
    for &g in &b.grids {
        let mesh = Arc::new(Mesh::build(g, g, scenario.domain(), b.kind)?);
        let elements = mesh.num_elements();
        let dz = Arc::new(Discretization::new(mesh)?);
        let initial = scenario.initial_state(&dz, config.params.epsilon);
        for (name, solvers) in &variants {
            log::info!("benchmark: {name} solvers on {g}×{g}");
            let mut solver = FomSolver::new(dz.clone(), config.params, config.dt, *solvers)?;
            let mut state = initial.clone();
            for k in 0..b.steps {
                state = solver.step(&state, false, k)?.state;
            }
            let mem = peak_rss_bytes();
            for f in Field::ALL {
                let s = solver.stats(f);
                records.push(BenchmarkRecord {
                    grid: g,
                    elements,
                    solver: name.to_string(),
                    stage: f.name().to_string(),
                    iterations: s.mean_linear_iterations(),
                    solves: s.linear_solves,
                    setup_seconds: s.setup_seconds,
                    solve_seconds: s.mean_solve_seconds(),
                    peak_memory_bytes: mem,
                });
            }
        }
    }
    write_csv(&out.join("benchmark.csv"), &records)?;
    Ok(records)
}

/// Mode counts of one HAPOD pipeline at one tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct ModeRecord {
    pub set: String,
    pub tolerance: f64,
    pub modes: usize,
    pub max_local_modes: usize,
    pub max_input_vectors: usize,
    pub snapshots: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BuildSummary {
    pub training_parameters: usize,
    pub chunks: usize,
    pub tree_depth: usize,
    pub modes: Vec<ModeRecord>,
    /// Dimensions of the bundled model, per field.
    pub reduced_dims: [usize; 3],
    pub interpolation_dims: [usize; 3],
}

fn mode_records(training: &Training) -> Vec<ModeRecord> {
    let mut rows = Vec::new();
    for set in SnapshotSet::ALL {
        let i = set.index();
        for (tol, r) in training.tolerances[i].iter().zip(&training.hapod.bases[i]) {
            rows.push(ModeRecord {
                set: set.name(),
                tolerance: *tol,
                modes: r.stats.final_modes,
                max_local_modes: r.stats.max_local_modes,
                max_input_vectors: r.stats.max_input_vectors,
                snapshots: r.stats.num_snapshots,
            });
        }
    }
    rows
}

/// Writes every trained basis, the mode table and the bundled model.
fn write_training(config: &RunConfig, dz: &Arc<Discretization>, training: &Training, out: &Path) -> Result<BuildSummary> {
    for set in SnapshotSet::ALL {
        let i = set.index();
        for (tol, r) in training.tolerances[i].iter().zip(&training.hapod.bases[i]) {
            let path = out.join("bases").join(format!("{}_{tol:e}.bin", set.name()));
            std::fs::create_dir_all(path.parent().unwrap())?;
            let mut w = BufWriter::new(File::create(path)?);
            write_basis(&mut w, &r.modes, &r.singular_values)?;
            w.flush()?;
        }
    }
    let modes = mode_records(training);
    write_csv(&out.join("modes.csv"), &modes)?;
    let model = full_model(config, dz, training)?;
    let mut w = BufWriter::new(File::create(out.join("rom.bin"))?);
    model.write(&mut w)?;
    w.flush()?;
    let summary = BuildSummary {
        training_parameters: training.parameters.len(),
        chunks: training.hapod.num_chunks,
        tree_depth: training.hapod.depth,
        modes,
        reduced_dims: model.reduced_dims(),
        interpolation_dims: model.interpolation_dims(),
    };
    write_json(&out.join("build_summary.json"), &summary)?;
    Ok(summary)
}

/// Training runs with on-the-fly HAPOD of all six snapshot sets.
pub fn build_rb(config: &RunConfig, out: &Path) -> Result<BuildSummary> {
    config.validate()?;
    let t0 = Instant::now();
    let dz = config.discretization()?;
    let training = train(config, &dz)?;
    let summary = write_training(config, &dz, &training, out)?;
    write_json(
        &out.join("build_timings.json"),
        &serde_json::json!({
            "seconds": t0.elapsed().as_secs_f64(),
            "simulation_seconds": training.hapod.simulation_seconds,
            "pod_seconds": training.hapod.pod_seconds,
        }),
    )?;
    Ok(summary)
}

/// Pooled errors of one reduced model over the validation set.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    /// `single_field`, `deim` or `full`.
    pub study: String,
    pub field: String,
    pub pod_tolerance: f64,
    /// `None` for residual minimization over all DOFs.
    pub deim_tolerance: Option<f64>,
    pub modes: usize,
    pub interpolation_dofs: Option<usize>,
    pub abs_phase_field: f64,
    pub abs_orientation: f64,
    pub abs_stokes: f64,
    pub rel_phase_field: f64,
    pub rel_orientation: f64,
    pub rel_stokes: f64,
    /// Largest Newton / Gauss-Newton count of any step, per stage.
    pub max_iterations: [usize; 3],
    /// Smallest count of any step, per stage.
    pub min_iterations: [usize; 3],
}

/// `ErrorRecord` with the per-stage counts spread over columns, for CSV.
#[derive(Serialize)]
struct ErrorRow<'a> {
    study: &'a str,
    field: &'a str,
    pod_tolerance: f64,
    deim_tolerance: Option<f64>,
    modes: usize,
    interpolation_dofs: Option<usize>,
    abs_phase_field: f64,
    abs_orientation: f64,
    abs_stokes: f64,
    rel_phase_field: f64,
    rel_orientation: f64,
    rel_stokes: f64,
    max_iterations_phase_field: usize,
    max_iterations_orientation: usize,
    max_iterations_stokes: usize,
    min_iterations_phase_field: usize,
    min_iterations_orientation: usize,
    min_iterations_stokes: usize,
}

impl ErrorRecord {
    fn row(&self) -> ErrorRow<'_> {
        let [a, b, c] = self.max_iterations;
        let [d, e, f] = self.min_iterations;
        ErrorRow {
            study: &self.study,
            field: &self.field,
            pod_tolerance: self.pod_tolerance,
            deim_tolerance: self.deim_tolerance,
            modes: self.modes,
            interpolation_dofs: self.interpolation_dofs,
            abs_phase_field: self.abs_phase_field,
            abs_orientation: self.abs_orientation,
            abs_stokes: self.abs_stokes,
            rel_phase_field: self.rel_phase_field,
            rel_orientation: self.rel_orientation,
            rel_stokes: self.rel_stokes,
            max_iterations_phase_field: a,
            max_iterations_orientation: b,
            max_iterations_stokes: c,
            min_iterations_phase_field: d,
            min_iterations_orientation: e,
            min_iterations_stokes: f,
        }
    }

    pub fn abs(&self) -> [f64; 3] {
        [self.abs_phase_field, self.abs_orientation, self.abs_stokes]
    }

    pub fn rel(&self) -> [f64; 3] {
        [self.rel_phase_field, self.rel_orientation, self.rel_stokes]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluateSummary {
    pub validation_parameters: Vec<[f64; 4]>,
    pub single_field: Vec<ErrorRecord>,
    pub deim: Vec<ErrorRecord>,
    pub full: ErrorRecord,
    /// Smallest and largest DEIM tolerances between which the reduced
    /// field's error first exceeds 10× the no-DEIM error, if it does.
    pub deim_jump: Option<(f64, f64)>,
}

#[allow(clippy::too_many_arguments)]
fn record(
    study: &str,
    field: Option<Field>,
    pod_tolerance: f64,
    deim_tolerance: Option<f64>,
    modes: usize,
    dofs: Option<usize>,
    runs: &[super::study::RolloutErrors],
) -> ErrorRecord {
    let (a, r) = (pooled_abs(runs), pooled_rel(runs));
    let max_iterations = std::array::from_fn(|k| runs.iter().map(|x| x.max_iterations[k]).max().unwrap_or(0));
    let min_iterations = std::array::from_fn(|k| runs.iter().map(|x| x.min_iterations[k]).min().unwrap_or(0));
    ErrorRecord {
        study: study.into(),
        field: field.map_or("all".into(), |f| f.name().into()),
        pod_tolerance,
        deim_tolerance,
        modes,
        interpolation_dofs: dofs,
        abs_phase_field: a[0],
        abs_orientation: a[1],
        abs_stokes: a[2],
        rel_phase_field: r[0],
        rel_orientation: r[1],
        rel_stokes: r[2],
        max_iterations,
        min_iterations,
    }
}

/// Location of the DEIM error jump in a sweep sorted by tolerance.
pub fn deim_jump(baseline: f64, sweep: &[(f64, f64)]) -> Option<(f64, f64)> {
    let mut s = sweep.to_vec();
    s.sort_by(|a, b| a.0.total_cmp(&b.0));
    let k = s.iter().position(|&(_, e)| e >= 10.0 * baseline)?;
    Some((if k == 0 { 0.0 } else { s[k - 1].0 }, s[k].0))
}

/// Trains, then compares reduced against full-order rollouts on the
/// validation parameters: single-field reduction per tolerance, the DEIM
/// sweep and the bundled all-field model.
pub fn evaluate_rom(config: &RunConfig, out: &Path) -> Result<EvaluateSummary> {
    config.validate()?;
    let t0 = Instant::now();
    let dz = config.discretization()?;
    let training = train(config, &dz)?;
    write_training(config, &dz, &training, out)?;
    let t_train = t0.elapsed().as_secs_f64();
    let params = config.validation_parameters();
    if params.is_empty() {
        return Err(Error::Config("sampling.validation must be positive for evaluate-rom".into()));
    }
    let refs = references(config, &dz, &params)?;
    let t_refs = t0.elapsed().as_secs_f64() - t_train;
    let m = &config.mor;
    let mut timings = Vec::new();

    let mut single = Vec::new();
    for &f in &m.single_field {
        for &tol in &m.state_tolerances {
            log::info!("single-field study: {f} at {tol:e}");
            let model = single_field_model(config, &dz, &training, f, tol)?;
            let runs = evaluate(config, &model, &refs)?;
            timings.push((format!("single_field/{f}/{tol:e}"), runs.iter().map(|r| r.seconds).sum::<f64>()));
            single.push(record("single_field", Some(f), tol, None, model.reduced_dims()[f.index()], None, &runs));
        }
    }

    let f = m.deim_field;
    let model = single_field_model(config, &dz, &training, f, m.deim_pod_tolerance)?;
    let runs = evaluate(config, &model, &refs)?;
    let modes = model.reduced_dims()[f.index()];
    let mut deim = vec![record("deim", Some(f), m.deim_pod_tolerance, None, modes, None, &runs)];
    for &tol in &m.deim_tolerances {
        log::info!("DEIM study: {f} at {tol:e}");
        let model = deim_field_model(config, &dz, &training, f, m.deim_pod_tolerance, tol)?;
        let runs = evaluate(config, &model, &refs)?;
        timings.push((format!("deim/{f}/{tol:e}"), runs.iter().map(|r| r.seconds).sum::<f64>()));
        let dofs = model.interpolation_dims()[f.index()];
        deim.push(record("deim", Some(f), m.deim_pod_tolerance, Some(tol), modes, Some(dofs), &runs));
    }
    let sweep: Vec<(f64, f64)> =
        deim[1..].iter().map(|r| (r.deim_tolerance.unwrap(), r.abs()[f.index()])).collect();
    let jump = deim_jump(deim[0].abs()[f.index()], &sweep);

    let model = full_model(config, &dz, &training)?;
    let runs = evaluate(config, &model, &refs)?;
    timings.push(("full".into(), runs.iter().map(|r| r.seconds).sum::<f64>()));
    let full = record(
        "full",
        None,
        m.rom_state_tolerance,
        m.rom_deim_tolerance,
        model.reduced_dims().iter().sum(),
        m.rom_deim_tolerance.map(|_| model.interpolation_dims().iter().sum()),
        &runs,
    );

    let rows: Vec<ErrorRow> = single.iter().chain(&deim).chain([&full]).map(ErrorRecord::row).collect();
    write_csv(&out.join("errors.csv"), &rows)?;
    let summary = EvaluateSummary {
        validation_parameters: params.iter().map(|p| [p.be, p.ca, p.pa, p.fa]).collect(),
        single_field: single,
        deim,
        full,
        deim_jump: jump,
    };
    write_json(&out.join("evaluate_summary.json"), &summary)?;
    let fom_seconds: f64 = refs.iter().map(|r| r.seconds).sum();
    write_json(
        &out.join("evaluate_timings.json"),
        &serde_json::json!({
            "training_seconds": t_train,
            "reference_seconds": t_refs,
            "fom_seconds_per_run": fom_seconds / refs.len() as f64,
            "rom_rollout_seconds": timings,
        }),
    )?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deim_jump_location() {
        let sweep = [(1e-4, 5.0), (1e-9, 1.0), (1e-8, 1.1), (1e-6, 20.0)];
        assert_eq!(deim_jump(1.0, &sweep), Some((1e-8, 1e-6)));
        assert_eq!(deim_jump(1.0, &[(1e-4, 2.0)]), None);
        assert_eq!(deim_jump(1.0, &[(1e-9, 10.0)]), Some((0.0, 1e-9)));
    }

    #[test]
    fn zero_end_time_writes_initial_files_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::default();
        c.mesh.nx = 8;
        c.mesh.ny = 8;
        c.t_end = 0.0;
        let s = simulate(&c, dir.path()).unwrap();
        assert_eq!(s.steps, 0);
        assert_eq!(s.vtk_files, vec!["state_000000.vtk".to_string()]);
        let csv = std::fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(s.relative_mass_drift, 0.0);
    }

    #[test]
    fn simulate_output_is_reproducible() {
        let mut c = RunConfig::default();
        c.mesh.nx = 10;
        c.mesh.ny = 10;
        c.t_end = 3e-3;
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        simulate(&c, a.path()).unwrap();
        simulate(&c, b.path()).unwrap();
        for f in ["summary.json", "diagnostics.csv", "vtk/state_000003.vtk"] {
            let x = std::fs::read(a.path().join(f)).unwrap();
            assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }
}
