//! Run configuration, read from TOML. Every section and key is optional;
//! unknown keys are rejected.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use crate::assembly::{Discretization, Field};
use crate::dynamics::{num_steps, SolverConfig};
use crate::error::{Error, Result};
use crate::mesh::{CellKind, Mesh};
use crate::params::ModelParameters;
use crate::pod::PodMethod;
use crate::rom::{GaussNewtonOptions, WeightKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshSpec {
    pub nx: usize,
    pub ny: usize,
    pub kind: CellKind,
}

impl Default for MeshSpec {
    fn default() -> Self {
        MeshSpec { nx: 40, ny: 40, kind: CellKind::Rectangular }
    }
}

/// The parameters varied by the MOR studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamName {
    Be,
    Ca,
    Pa,
    Fa,
}

impl ParamName {
    pub fn set(self, p: &mut ModelParameters, v: f64) {
        match self {
            ParamName::Be => p.be = v,
            ParamName::Ca => p.ca = v,
            ParamName::Pa => p.pa = v,
            ParamName::Fa => p.fa = v,
        }
    }

    pub fn get(self, p: &ModelParameters) -> f64 {
        match self {
            ParamName::Be => p.be,
            ParamName::Ca => p.ca,
            ParamName::Pa => p.pa,
            ParamName::Fa => p.fa,
        }
    }
}

/// A uniform training grid and random validation parameters in a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sampling {
    pub varied: Vec<ParamName>,
    pub lower: f64,
    pub upper: f64,
    /// Training points per varied parameter (endpoints included).
    pub train_per_dim: usize,
    pub validation: usize,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            varied: vec![ParamName::Ca, ParamName::Pa],
            lower: 10f64.sqrt().recip(),
            upper: 10f64.sqrt(),
            train_per_dim: 4,
            validation: 2,
        }
    }
}

/// Reduced-basis settings shared by `build-rb` and `evaluate-rom`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MorSettings {
    pub omega: f64,
    pub chunk_size: usize,
    pub weight: WeightKind,
    pub method: PodMethod,
    /// HAPOD target tolerances of the state sets (all three fields).
    pub state_tolerances: Vec<f64>,
    /// Extra HAPOD target tolerances of the residual sets (all three fields).
    pub residual_tolerances: Vec<f64>,
    /// Fields reduced one at a time in the single-field study.
    pub single_field: Vec<Field>,
    /// DEIM study: field, its fixed POD tolerance and the DEIM sweep.
    pub deim_field: Field,
    pub deim_pod_tolerance: f64,
    pub deim_tolerances: Vec<f64>,
    /// Tolerances of the bundled all-field reduced model.
    pub rom_state_tolerance: f64,
    pub rom_deim_tolerance: Option<f64>,
    pub gauss_newton: GaussNewtonOptions,
}

impl Default for MorSettings {
    fn default() -> Self {
        MorSettings {
            omega: 0.95,
            chunk_size: 10,
            weight: WeightKind::Mass,
            method: PodMethod::QrSvd,
            state_tolerances: vec![1e-3, 1e-4, 1e-5, 1e-6],
            residual_tolerances: Vec::new(),
            single_field: Field::ALL.to_vec(),
            deim_field: Field::PhaseField,
            deim_pod_tolerance: 1e-5,
            deim_tolerances: vec![1e-4, 1e-6, 1e-8, 1e-9],
            rom_state_tolerance: 1e-5,
            rom_deim_tolerance: Some(1e-8),
            gauss_newton: GaussNewtonOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSettings {
    /// Cells per side of the square benchmark grids.
    pub grids: Vec<usize>,
    pub steps: usize,
    pub kind: CellKind,
    /// Also time the sparse direct solvers.
    pub direct: bool,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        BenchmarkSettings { grids: vec![60, 120], steps: 50, kind: CellKind::Rectangular, direct: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSettings {
    /// Write a VTK file every this many steps (0: initial and final only).
    pub vtk_every: usize,
    /// Sup-norm of the velocity below which a state counts as steady.
    pub steady_velocity: f64,
}

impl Default for OutputSettings {
    fn default() -> Self {
        OutputSettings { vtk_every: 0, steady_velocity: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub mesh: MeshSpec,
    /// Polynomial order of the scalar fields; only 1 is supported.
    pub order: usize,
    pub dt: f64,
    pub t_end: f64,
    pub params: ModelParameters,
    pub sampling: Sampling,
    pub solvers: SolverConfig,
    pub mor: MorSettings,
    pub benchmark: BenchmarkSettings,
    pub output: OutputSettings,
    pub seed: u64,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: Scenario::Isolation,
            mesh: MeshSpec::default(),
            order: 1,
            dt: 1e-3,
            t_end: 0.2,
            params: ModelParameters::default(),
            sampling: Sampling::default(),
            solvers: SolverConfig::default(),
            mor: MorSettings::default(),
            benchmark: BenchmarkSettings::default(),
            output: OutputSettings::default(),
            seed: 0,
            workers: 1,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Grid, training set and validation set of the full-size studies.
    pub fn paper_scale(mut self) -> RunConfig {
        self.mesh = MeshSpec { nx: 80, ny: 80, kind: CellKind::Rectangular };
        self.sampling.train_per_dim = 8;
        self.sampling.validation = 32;
        self.mor.state_tolerances = vec![1e-3, 1e-4, 1e-5, 1e-6, 1e-7];
        self.benchmark.grids = vec![60, 120, 180, 240, 300, 360, 420];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.order != 1 {
            return Err(Error::UnsupportedOrder(self.order));
        }
        if self.mesh.nx == 0 || self.mesh.ny == 0 {
            return bad("mesh.nx and mesh.ny must be positive".into());
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return bad(format!("t_end must be non-negative, got {}", self.t_end));
        }
        self.params.validate()?;
        let s = &self.sampling;
        if !(s.lower > 0.0 && s.upper >= s.lower) || s.train_per_dim == 0 || s.varied.is_empty() {
            return bad("sampling needs 0 < lower ≤ upper, train_per_dim ≥ 1 and a varied parameter".into());
        }
        let m = &self.mor;
        if !(m.omega > 0.0 && m.omega < 1.0) {
            return bad(format!("mor.omega must lie in (0, 1), got {}", m.omega));
        }
        if m.chunk_size == 0 {
            return bad("mor.chunk_size must be positive".into());
        }
        let tols = m.state_tolerances.iter().chain(&m.residual_tolerances).chain(&m.deim_tolerances);
        if tols.chain([&m.deim_pod_tolerance, &m.rom_state_tolerance]).any(|t| !(*t > 0.0)) {
            return bad("MOR tolerances must be positive".into());
        }
        if self.benchmark.grids.contains(&0) {
            return bad("benchmark grids must be positive".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        num_steps(self.t_end, self.dt)
    }

    pub fn discretization(&self) -> Result<Arc<Discretization>> {
        let mesh = Mesh::build(self.mesh.nx, self.mesh.ny, self.scenario.domain(), self.mesh.kind)?;
        Ok(Arc::new(Discretization::new(Arc::new(mesh))?))
    }

    /// `train_per_dim^d` parameters on a uniform tensor grid, first varied
    /// parameter slowest.
    pub fn training_parameters(&self) -> Vec<ModelParameters> {
        let s = &self.sampling;
        let k = s.train_per_dim;
        let axis: Vec<f64> = (0..k)
            .map(|i| if k == 1 { 0.5 * (s.lower + s.upper) } else { s.lower + (s.upper - s.lower) * i as f64 / (k - 1) as f64 })
            .collect();
        let total = k.pow(s.varied.len() as u32);
        (0..total)
            .map(|mut idx| {
                let mut p = self.params;
                for &name in s.varied.iter().rev() {
                    name.set(&mut p, axis[idx % k]);
                    idx /= k;
                }
                p
            })
            .collect()
    }

    /// Uniform random parameters in the box, distinct from the training grid.
    pub fn validation_parameters(&self) -> Vec<ModelParameters> {
        use rand::{Rng, SeedableRng};
        let s = &self.sampling;
        let train = self.training_parameters();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(s.validation);
        while out.len() < s.validation {
            let mut p = self.params;
            for &name in &s.varied {
                name.set(&mut p, rng.random_range(s.lower..=s.upper));
            }
            let clash = train.iter().any(|t| s.varied.iter().all(|n| n.get(t) == n.get(&p)));
            if !clash {
                out.push(p);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        let paper = c.paper_scale();
        assert_eq!(RunConfig::from_toml(&paper.to_toml().unwrap()).unwrap(), paper);
    }

    #[test]
    fn partial_files_and_rejections() {
        let c = RunConfig::from_toml("scenario = \"circle\"\n[mesh]\nnx = 8\n[params]\nca = 0.2\n").unwrap();
        assert_eq!(c.scenario, Scenario::Circle);
        assert_eq!((c.mesh.nx, c.mesh.ny), (8, 40));
        assert_eq!(c.params.ca, 0.2);
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[mesh]\nbogus = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("dt = -1.0"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("order = 2"), Err(Error::UnsupportedOrder(2))));
    }

    #[test]
    fn parameter_sets() {
        let c = RunConfig::default();
        let train = c.training_parameters();
        assert_eq!(train.len(), 16);
        let (lo, hi) = (c.sampling.lower, c.sampling.upper);
        assert_eq!((train[0].ca, train[0].pa), (lo, lo));
        assert_eq!((train[1].ca, train[1].pa), (lo, lo + (hi - lo) / 3.0));
        assert_eq!((train[15].ca, train[15].pa), (hi, hi));
        let val = c.validation_parameters();
        assert_eq!(val.len(), 2);
        for v in &val {
            assert!(v.ca >= lo && v.ca <= hi && v.pa >= lo && v.pa <= hi);
            assert!(!train.iter().any(|t| t.ca == v.ca && t.pa == v.pa));
        }
        assert_eq!(val, c.validation_parameters());
    }
}
