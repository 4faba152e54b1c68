//! `cellmor`: runs the experiments and prints a JSON summary.
//!
//! Failures print `{"error": {"kind": ..., "message": ...}}` and exit with a
//! nonzero status (2 for usage errors, 1 otherwise).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cellmor::experiments::{benchmark_solvers, build_rb, evaluate_rom, simulate, RunConfig};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "cellmor", version, about = "Phase-field cell simulations and reduced-order models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Full-order run of the configured scenario: VTK series, diagnostics CSV, summary JSON.
    Simulate(Common),
    /// Iteration counts and timings of iterative vs direct solvers on the circle scenario.
    BenchmarkSolvers(Common),
    /// Training runs with HAPOD; writes all bases, the mode table and the bundled reduced model.
    BuildRb(Common),
    /// Trains, then compares reduced and full-order runs on random validation parameters.
    EvaluateRom(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for parameter sweeps.
    #[arg(long)]
    workers: Option<usize>,
    /// Seed of the validation parameter draw.
    #[arg(long)]
    seed: Option<u64>,
    /// Full-size grids, training and validation sets.
    #[arg(long)]
    paper_scale: bool,
}

impl Common {
    fn resolve(&self) -> cellmor::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if self.paper_scale {
            c = c.paper_scale();
        }
        if let Some(w) = self.workers {
            c.workers = w;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }
}

fn to_value<T: serde::Serialize>(v: cellmor::Result<T>) -> cellmor::Result<Value> {
    v.and_then(|x| serde_json::to_value(x).map_err(|e| cellmor::Error::Format(e.to_string())))
}

fn run(cmd: &Command) -> cellmor::Result<Value> {
    let (common, name) = match cmd {
        Command::Simulate(c) => (c, "simulate"),
        Command::BenchmarkSolvers(c) => (c, "benchmark-solvers"),
        Command::BuildRb(c) => (c, "build-rb"),
        Command::EvaluateRom(c) => (c, "evaluate-rom"),
    };
    let config = common.resolve()?;
    let out: &Path = &common.out;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), config.to_toml()?)?;
    log::info!("{name}: writing to {}", out.display());
    let summary = match cmd {
        Command::Simulate(_) => to_value(simulate(&config, out))?,
        Command::BenchmarkSolvers(_) => to_value(benchmark_solvers(&config, out))?,
        Command::BuildRb(_) => to_value(build_rb(&config, out))?,
        Command::EvaluateRom(_) => to_value(evaluate_rom(&config, out))?,
    };
    Ok(json!({ "command": name, "out": out.display().to_string(), "summary": summary }))
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    println!("{}", json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim().to_string(), 2),
    };
    match run(&cli.command) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("JSON values serialize"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), e.to_string(), 1),
    }
}
