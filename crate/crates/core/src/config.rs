//! Run configuration: one TOML document with a version field. Every key
//! has a default, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::energy::EnergyWeights;
use crate::error::{Error, Result};
use crate::eval::Lambda;
use crate::solver::SolverConfig;
use crate::spatial::FilterConfig;
use crate::synth::{TargetSpec, TorsoSpec};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Model manifest; the procedural torso is used when absent.
    pub model: Option<PathBuf>,
    pub scan: Option<PathBuf>,
    /// Scan landmarks CSV (`name,x,y,z`).
    pub landmarks: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    /// Worker threads for sweeps.
    pub jobs: usize,
    /// Write wall-clock columns; off makes repeated outputs byte-identical.
    pub timing: bool,
    /// Landmarks entering the energy, in model order.
    pub active_landmarks: usize,
    pub weights: EnergyWeights,
    pub filters: FilterConfig,
    pub solver: SolverConfig,
    pub torso: TorsoSpec,
    pub target: TargetSpec,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            model: None,
            scan: None,
            landmarks: None,
            out: PathBuf::from("out"),
            seed: 0,
            jobs: 1,
            timing: true,
            active_landmarks: 12,
            weights: EnergyWeights::default(),
            filters: FilterConfig::default(),
            solver: SolverConfig::default(),
            torso: TorsoSpec::default(),
            target: TargetSpec::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Synthetic targets generated from `[target]` with seeds `seed, seed + 1, …`.
    pub targets: usize,
    pub landmark_counts: Vec<usize>,
    pub blendshape_counts: Vec<usize>,
    pub lambda: Lambda,
    pub lambda_values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            targets: 5,
            landmark_counts: (0..=12).collect(),
            blendshape_counts: vec![0, 10, 25, 40, 55],
            lambda: Lambda::D,
            lambda_values: vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::format(path, 0, m),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if config.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                config.version
            )));
        }
        Ok(config)
    }

    /// The configuration with every default written out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Check value ranges and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.filters.validate()?;
        self.solver.validate()?;
        self.torso.validate()?;
        self.target.validate()?;
        for path in [&self.model, &self.scan, &self.landmarks].into_iter().flatten() {
            if !path.is_file() {
                return Err(Error::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                ));
            }
        }
        if self.sweep.lambda_values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("sweep lambda values must be positive".into()));
        }
        Ok(())
    }
}
