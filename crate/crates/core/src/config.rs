//! JSON run configuration shared by the CLI and the Python bindings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bellman::{StructuralParams, VfiOptions};
use crate::counterfactual::{Scenario, SimulationConfig};
use crate::error::{Error, Result};
use crate::estimate::{BootstrapConfig, OptimizerConfig};
use crate::statespace::StateSpec;
use crate::synth::SyntheticConfig;
use crate::transitions::DEFAULT_SMOOTHING;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceConfig {
    /// Grid half-width around each estimated coefficient.
    pub half_width: f64,
    /// Points per axis; odd counts put the estimate on the grid.
    pub points: usize,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            half_width: 0.3,
            points: 21,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub panel: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Age cap and cage count; the binning comes from the model choice.
    pub state: StateSpec,
    pub beta: f64,
    pub vfi: VfiOptions,
    pub optimizer: OptimizerConfig,
    pub hazard_smoothing: f64,
    pub bootstrap: BootstrapConfig,
    pub synthetic: SyntheticConfig,
    /// Data-generating parameters for `gen`; defaults to the spatial
    /// reference values.
    pub truth: Option<StructuralParams>,
    /// Optimizer start; defaults to the model's standard start.
    pub init: Option<StructuralParams>,
    pub simulation: SimulationConfig,
    pub scenarios: Vec<Scenario>,
    pub surface: SurfaceConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            state: StateSpec::default(),
            beta: 0.90,
            vfi: VfiOptions::default(),
            optimizer: OptimizerConfig::default(),
            hazard_smoothing: DEFAULT_SMOOTHING,
            bootstrap: BootstrapConfig::default(),
            synthetic: SyntheticConfig::default(),
            truth: None,
            init: None,
            simulation: SimulationConfig::default(),
            scenarios: Scenario::standard(),
            surface: SurfaceConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.state.validate()?;
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if !(self.vfi.tol > 0.0) {
            return Err(Error::Config("vfi.tol must be positive".into()));
        }
        if !(self.hazard_smoothing >= 0.0) {
            return Err(Error::Config("hazard_smoothing must be >= 0".into()));
        }
        if self.surface.points == 0 {
            return Err(Error::Config("surface.points must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
