//! Scenario files: one JSON document describing plant, delay kernel, grid,
//! solver, Riccati and simulation settings.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{KappaSettings, DEFAULT_KAPPA_SAMPLES, DEFAULT_SAFETY};
use crate::kernel::{KernelSpec, TransitionKernel};
use crate::lmi::{SolverOptions, DEFAULT_BUDGET, DEFAULT_EPSILON};
use crate::plant::{JumpSystemMaps, Plant};
use crate::riccati::RiccatiSettings;
use crate::simulate::{InitialSpec, DEFAULT_SAMPLES_PER_PERIOD};

/// Grid sizes beyond this many boxes are refused by refinement sweeps.
pub const DEFAULT_MAX_SWEEP_BOXES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantBlock {
    #[serde(with = "crate::io::matrix")]
    pub a_c: DMatrix<f64>,
    #[serde(with = "crate::io::matrix")]
    pub b_c: DMatrix<f64>,
    #[serde(with = "crate::io::matrix")]
    pub q_c: DMatrix<f64>,
    #[serde(with = "crate::io::matrix")]
    pub r_c: DMatrix<f64>,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridBlock {
    /// Splits per axis.
    pub r: usize,
    pub kappa_samples: usize,
    pub safety: f64,
    /// Cap on `N` for `--refine-until-feasible`.
    pub max_boxes: usize,
}

impl Default for GridBlock {
    fn default() -> Self {
        Self {
            r: 4,
            kappa_samples: DEFAULT_KAPPA_SAMPLES,
            safety: DEFAULT_SAFETY,
            max_boxes: DEFAULT_MAX_SWEEP_BOXES,
        }
    }
}

impl GridBlock {
    pub fn kappa_settings(&self) -> KappaSettings {
        KappaSettings {
            samples_per_box: self.kappa_samples,
            safety: self.safety,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverBlock {
    pub epsilon: f64,
    pub budget: usize,
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            budget: DEFAULT_BUDGET,
        }
    }
}

impl SolverBlock {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            max_iters: self.budget,
            ..SolverOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_spp")]
    pub samples_per_period: usize,
    #[serde(default = "default_keep")]
    pub keep_traces: usize,
    pub initial: InitialSpec,
}

fn default_horizon() -> usize {
    100
}
fn default_paths() -> usize {
    1000
}
fn default_spp() -> usize {
    DEFAULT_SAMPLES_PER_PERIOD
}
fn default_keep() -> usize {
    10
}

/// A complete scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub plant: PlantBlock,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub grid: GridBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub riccati: RiccatiSettings,
    pub simulation: SimulationBlock,
}

/// The objects a scenario describes.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub maps: JumpSystemMaps,
    pub kernel: Arc<dyn TransitionKernel>,
}

impl Scenario {
    pub fn plant(&self) -> &Plant {
        self.maps.plant()
    }
}

impl ScenarioConfig {
    /// Parses and validates; errors name the offending field and position.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| {
            let field = field_near(text, e.line(), e.column())
                .map(|f| format!(" (near field `{f}`)"))
                .unwrap_or_default();
            Error::Config(format!("{e}{field}"))
        })?;
        cfg.build()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// sha256 of the compact serialization, hex encoded.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Validates every block and builds the plant maps and kernel.
    pub fn build(&self) -> Result<Scenario> {
        let p = &self.plant;
        let plant = Plant::new(p.a_c.clone(), p.b_c.clone(), p.q_c.clone(), p.r_c.clone(), p.h)
            .map_err(|e| Error::Config(format!("plant: {e}")))?;
        let kernel = self
            .kernel
            .build()
            .map_err(|e| Error::Config(format!("kernel: {e}")))?;
        let (lo, hi) = kernel.bounds();
        let maps = JumpSystemMaps::new(plant, lo, hi)
            .map_err(|e| Error::Config(format!("kernel delay interval vs plant.h: {e}")))?;
        if self.grid.r == 0 {
            return Err(Error::Config("grid.r must be at least 1".into()));
        }
        if self.grid.kappa_samples < 8 {
            return Err(Error::Config("grid.kappa_samples must be at least 8".into()));
        }
        if !(self.grid.safety >= 1.0 && self.grid.safety.is_finite()) {
            return Err(Error::Config("grid.safety must be a finite number ≥ 1".into()));
        }
        if !(self.solver.epsilon > 0.0 && self.solver.epsilon.is_finite()) {
            return Err(Error::Config("solver.epsilon must be positive".into()));
        }
        if self.solver.budget == 0 {
            return Err(Error::Config("solver.budget must be at least 1".into()));
        }
        if !(self.riccati.tol > 0.0) || self.riccati.max_iters == 0 {
            return Err(Error::Config("riccati.tol must be positive and riccati.max_iters ≥ 1".into()));
        }
        let s = &self.simulation;
        if s.paths == 0 || s.samples_per_period == 0 {
            return Err(Error::Config(
                "simulation.paths and simulation.samples_per_period must be at least 1".into(),
            ));
        }
        s.initial
            .validate(maps.plant(), kernel.as_ref())
            .map_err(|e| Error::Config(format!("simulation.{e}")))?;
        Ok(Scenario {
            config: self.clone(),
            maps,
            kernel,
        })
    }
}

/// The last object key that starts before `(line, column)` (1-based).
fn field_near(text: &str, line: usize, column: usize) -> Option<String> {
    if line == 0 {
        return None;
    }
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            offset += column.min(l.len());
            break;
        }
        offset += l.len();
    }
    let head = &text[..offset.min(text.len())];
    let mut best = None;
    let bytes = head.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'"' {
            let start = i + 1;
            let mut j = start;
            while j < bytes.len() && bytes[j] != b'"' {
                if bytes[j] == b'\\' {
                    j += 1;
                }
                j += 1;
            }
            if j >= bytes.len() {
                break;
            }
            let rest = head[j + 1..].trim_start();
            if rest.starts_with(':') {
                best = Some(head[start..j].to_string());
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SCALAR: &str = r#"{
  "name": "scalar",
  "plant": { "a_c": [[0.0]], "b_c": [[1.0]], "q_c": [[1.0]], "r_c": [[1.0]], "h": 1.0 },
  "kernel": { "kind": "uniform", "p": 1, "tau_min": 0.0, "tau_max": 0.5 },
  "grid": { "r": 2 },
  "simulation": {
    "horizon": 5, "paths": 2, "seed": 3,
    "initial": { "state": { "kind": "point", "x0": [1.0], "u_prev": [0.0] }, "delays": { "kind": "uniform" } }
  }
}"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ScenarioConfig::from_json_str(SCALAR).unwrap();
        assert_eq!(cfg.grid.r, 2);
        assert_eq!(cfg.solver.budget, DEFAULT_BUDGET);
        let back = ScenarioConfig::from_json_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn unknown_field_is_named() {
        let text = SCALAR.replace("\"r\": 2", "\"r\": 2, \"splits\": 3");
        let err = ScenarioConfig::from_json_str(&text).unwrap_err().to_string();
        assert!(err.contains("splits"), "{err}");
    }

    #[test]
    fn type_error_names_the_field() {
        let text = SCALAR.replace("\"h\": 1.0", "\"h\": \"one\"");
        let err = ScenarioConfig::from_json_str(&text).unwrap_err().to_string();
        assert!(err.contains("`h`"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn delay_beyond_period_rejected() {
        let text = SCALAR.replace("\"tau_max\": 0.5", "\"tau_max\": 1.5");
        assert!(matches!(ScenarioConfig::from_json_str(&text), Err(Error::Config(_))));
    }
}
