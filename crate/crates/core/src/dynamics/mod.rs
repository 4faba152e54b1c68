//! Full-order time stepping and diagnostics.

mod fom;
mod newton;

pub use fom::{
    center_pressure, compute_free_energy, num_steps, pfield_preconditioner_matrix, run_fom, Energy, FomSolver,
    OfieldSolver, PfieldSolver, SolverConfig, StageOutcome, StageStats, State, StepReport,
    StokesSolver, Trajectory,
};
pub use newton::{newton_backtracking, NewtonOptions, NewtonOutcome};
