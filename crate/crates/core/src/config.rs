//! Pipeline configuration, read from a single TOML file.
//!
//! Every table rejects unknown keys. [`PipelineConfig::validate`] runs before
//! any stage does work. Relative paths are resolved against the directory of
//! the configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{Partition, PartitionSpec};
use crate::camera::{AircraftState, CameraIntrinsics, RunwaySpec};
use crate::chart::{Geometry, PitchBranch, StateBox, WorkingChart};
use crate::checker::SpecKind;
use crate::dynamics::DynamicsParams;
use crate::perception::PerceptionBuildSpec;
use crate::training::TrainingConfig;
use crate::verifier::{BoundMethod, VerifyOptions};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {found}; this build reads {SCHEMA_VERSION}")]
    Schema { found: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Where reports and cached artifacts go.
    pub output_dir: PathBuf,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub perception: PerceptionConfig,
    pub partition: PartitionSpec,
    #[serde(default)]
    pub abstraction: AbstractionConfig,
    pub search: SearchConfig,
    pub spec: SpecConfig,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub verification: VerificationConfig,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub runway: RunwaySpec,
    pub camera: CameraIntrinsics,
    pub lines: usize,
    /// Lateral position `x` of the aircraft, held fixed.
    #[serde(default)]
    pub lateral_offset: f64,
    #[serde(default)]
    pub pitch_branch: PitchBranch,
    #[serde(default)]
    pub dynamics: DynamicsParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    pub sharpness: f64,
    pub degeneracy_margin: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        let d = PerceptionBuildSpec::new(2, 1);
        Self {
            sharpness: d.sharpness,
            degeneracy_margin: d.degeneracy_margin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbstractionConfig {
    /// Extra inflation; the cell radius when absent.
    pub eta: Option<f64>,
    /// Count the sink state as unsafe.
    pub sink_is_unsafe: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub mu_values: Vec<f64>,
    /// Check every value instead of stopping at the first failure.
    #[serde(default = "yes")]
    pub exhaustive: bool,
}

fn yes() -> bool {
    true
}

/// A state box given as a center `[θ, y, z]` and half-widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRegion {
    pub center: [f64; 3],
    pub half_widths: [f64; 3],
}

impl StateRegion {
    pub fn state_box(&self, lateral_offset: f64) -> StateBox {
        let [theta, y, z] = self.center;
        StateBox::around(&AircraftState::new(theta, lateral_offset, y, z), self.half_widths)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    pub kind: SpecKind,
    pub horizon: usize,
    /// Initial set as a box in working coordinates.
    pub initial_lower: [f64; 3],
    pub initial_upper: [f64; 3],
    /// Unsafe region (invariant) or target region (reach). An invariant
    /// without one has no unsafe cells.
    pub goal: Option<StateRegion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// Load weights from this file.
    pub weights: Option<PathBuf>,
    /// A network that outputs this pitch rate for every image.
    pub constant: Option<f64>,
    /// Train by behavioral cloning.
    pub train: Option<TrainingConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundChoice {
    Interval,
    Symbolic,
    /// Symbolic within the perception stage and within the controller,
    /// concretized at the boundary between them.
    #[default]
    Staged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationConfig {
    pub max_splits: usize,
    pub initial_samples: usize,
    pub descent_rounds: usize,
    pub witness_margin: f64,
    pub bound: BoundChoice,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        let d = VerifyOptions::default();
        Self {
            max_splits: 2_000,
            initial_samples: d.initial_samples,
            descent_rounds: d.descent_rounds,
            witness_margin: d.witness_margin,
            bound: BoundChoice::Staged,
        }
    }
}

impl VerificationConfig {
    /// Options for a network whose first `perception_layers` layers are the
    /// perception stage.
    pub fn options(&self, seed: u64, perception_layers: usize) -> VerifyOptions {
        VerifyOptions {
            max_splits: self.max_splits,
            initial_samples: self.initial_samples,
            descent_rounds: self.descent_rounds,
            witness_margin: self.witness_margin,
            seed,
            bound: match self.bound {
                BoundChoice::Interval => BoundMethod::Interval,
                BoundChoice::Symbolic => BoundMethod::Symbolic,
                BoundChoice::Staged => BoundMethod::Staged(perception_layers),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub trajectories: usize,
    /// Steps per trajectory; the spec horizon when absent.
    pub steps: Option<usize>,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            trajectories: 1000,
            steps: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        #[derive(Deserialize)]
        struct Version {
            schema_version: Option<u32>,
        }
        let v: Version = toml::from_str(text)?;
        match v.schema_version {
            Some(SCHEMA_VERSION) => {}
            Some(found) => return Err(ConfigError::Schema { found }),
            None => return Err(ConfigError::Invalid("missing schema_version".into())),
        }
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config; relative paths are made relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(w) = &mut self.controller.weights {
            fix(w);
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema {
                found: self.schema_version,
            });
        }
        self.chart().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.scenario
            .dynamics
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.perception_spec()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Partition::new(self.partition).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(eta) = self.abstraction.eta {
            if !(eta >= 0.0 && eta.is_finite()) {
                return bad(format!("abstraction.eta must be non-negative, got {eta}"));
            }
        }
        let mu = &self.search.mu_values;
        if mu.is_empty() || !(mu[0] >= 0.0) || mu.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("search.mu_values must be non-empty, non-negative and strictly ascending".into());
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return bad("search.mu_values must be finite".into());
        }
        let s = &self.spec;
        for a in 0..3 {
            if !(s.initial_lower[a] <= s.initial_upper[a]) {
                return bad(format!("spec initial box is empty along axis {a}"));
            }
        }
        let p = &self.partition;
        let inside = (0..3).all(|a| p.lower[a] <= s.initial_lower[a] && s.initial_upper[a] <= p.upper[a]);
        if !inside {
            return bad("spec initial box must lie inside the partition".into());
        }
        if let Some(g) = &s.goal {
            if g.half_widths.iter().any(|h| !(*h >= 0.0)) {
                return bad("spec goal half_widths must be non-negative".into());
            }
            g.state_box(self.scenario.lateral_offset)
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        } else if s.kind == SpecKind::Reach {
            return bad("a reach spec needs a goal region".into());
        }
        let c = &self.controller;
        let sources = c.weights.is_some() as u8 + c.constant.is_some() as u8 + c.train.is_some() as u8;
        if sources != 1 {
            return bad("controller needs exactly one of weights, constant or train".into());
        }
        if let Some(u) = c.constant {
            if !u.is_finite() {
                return bad("controller.constant must be finite".into());
            }
        }
        if let Some(t) = &c.train {
            t.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let v = &self.verification;
        if v.max_splits == 0 {
            return bad("verification.max_splits must be positive".into());
        }
        if !(v.witness_margin >= 0.0) {
            return bad("verification.witness_margin must be non-negative".into());
        }
        Ok(())
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            runway: self.scenario.runway,
            camera: self.scenario.camera,
            lines: self.scenario.lines,
        }
    }

    pub fn chart(&self) -> Result<WorkingChart, crate::camera::GeometryError> {
        WorkingChart::new(self.geometry(), self.scenario.lateral_offset, self.scenario.pitch_branch)
    }

    pub fn perception_spec(&self) -> PerceptionBuildSpec {
        PerceptionBuildSpec {
            q: self.scenario.camera.wp,
            lines: self.scenario.lines,
            sharpness: self.perception.sharpness,
            degeneracy_margin: self.perception.degeneracy_margin,
        }
    }

    pub fn monte_carlo_steps(&self) -> usize {
        self.monte_carlo.steps.unwrap_or(self.spec.horizon)
    }
}
