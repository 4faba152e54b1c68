//! Scenarios, run configuration and the experiment drivers behind the
//! command line interface.

pub mod commands;
pub mod config;
pub mod output;
pub mod scenario;
pub mod study;

pub use config::{BenchmarkSettings, MeshSpec, MorSettings, OutputSettings, ParamName, RunConfig, Sampling};
pub use scenario::Scenario;
pub use commands::{benchmark_solvers, build_rb, evaluate_rom, simulate};
