//! Experiment configuration. Every field has a default, so a config file
//! only needs the values it changes.

use std::fs;
use std::path::Path;

use flexbody_core::controller::{ControlConfig, IkConfig};
use flexbody_core::online::OnlineConfig;
use flexbody_core::sim::{NoiseSpec, PerturbSpec, RobotModel, ToolState};
use flexbody_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub robot: RobotModel,
    /// Turns `robot` into the stand-in for the physical robot.
    pub perturbation: PerturbSpec,
    pub noise: NoiseSpec,
    pub sim_stage: SimStage,
    pub real_stage: RealStage,
    pub online: OnlineStage,
    pub control: ControlStage,
    pub tool_switch: ToolSwitchStage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimStage {
    pub samples_per_tool: usize,
    /// `seed` is replaced by the command-line seed.
    pub train: TrainConfig,
}

impl Default for SimStage {
    fn default() -> Self {
        Self {
            samples_per_tool: 500,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealStage {
    pub samples_per_tool: usize,
    /// Grid poses per tool; the rest are random constrained draws.
    pub curated_poses: usize,
    /// `seed` is replaced by the command-line seed; `fine_tune` is forced on.
    pub train: TrainConfig,
}

impl Default for RealStage {
    fn default() -> Self {
        Self {
            samples_per_tool: 80,
            curated_poses: 60,
            train: TrainConfig::fine_tune_default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Plant {
    Sim,
    Real,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineStage {
    pub estimator: OnlineConfig,
    pub ticks: usize,
    /// Runs per regime; run `r` uses seed `seed + r`.
    pub runs: usize,
    pub plant: Plant,
    pub true_tool: ToolState,
    /// Tool whose trained PB starts the estimate; zero PB when absent.
    pub initial_tool: Option<ToolState>,
}

impl Default for OnlineStage {
    fn default() -> Self {
        Self {
            estimator: OnlineConfig::default(),
            ticks: 100,
            runs: 5,
            plant: Plant::Sim,
            true_tool: ToolState::LONG_LIGHT,
            initial_tool: Some(ToolState::SHORT_HEAVY),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlStage {
    pub solver: ControlConfig,
    pub ik: IkConfig,
    pub tool: ToolState,
    pub targets_mm: Vec<[f64; 3]>,
}

impl Default for ControlStage {
    fn default() -> Self {
        Self {
            solver: ControlConfig::default(),
            ik: IkConfig::default(),
            tool: ToolState::LONG_MIDDLE,
            targets_mm: vec![
                [375.9, -6.7, 212.5],
                [374.0, 101.1, 269.5],
                [366.9, -50.2, 297.6],
                [378.8, -82.0, 276.2],
                [355.1, 108.2, 202.7],
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolSwitchStage {
    pub sequence: Vec<ToolState>,
    pub steps_per_tool: usize,
    pub estimator: OnlineConfig,
    pub targets_mm: Vec<[f64; 3]>,
}

impl Default for ToolSwitchStage {
    fn default() -> Self {
        Self {
            sequence: vec![ToolState::LONG_LIGHT, ToolState::LONG_HEAVY, ToolState::SHORT_HEAVY],
            steps_per_tool: 40,
            estimator: OnlineConfig {
                capacity: 5,
                ..OnlineConfig::default()
            },
            targets_mm: vec![
                [320.0, -15.0, 220.0],
                [320.0, -15.0, 280.0],
                [320.0, 0.0, 310.0],
                [320.0, 15.0, 310.0],
                [320.0, 15.0, 280.0],
            ],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| CliError::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |e: flexbody_core::Error| CliError::Config(e.to_string());
        self.robot.validate().map_err(invalid)?;
        self.sim_stage.train.validate().map_err(invalid)?;
        self.real_stage.train.validate().map_err(invalid)?;
        self.online.estimator.validate().map_err(invalid)?;
        self.tool_switch.estimator.validate().map_err(invalid)?;
        self.control.solver.validate().map_err(invalid)?;
        if self.perturbation.link_mass_scale.len() != self.robot.links.len() {
            return Err(CliError::Config(format!(
                "perturbation.link_mass_scale has {} entries for {} links",
                self.perturbation.link_mass_scale.len(),
                self.robot.links.len()
            )));
        }
        if self.real_stage.curated_poses > self.real_stage.samples_per_tool {
            return Err(CliError::Config("real_stage.curated_poses exceeds samples_per_tool".into()));
        }
        if self.control.targets_mm.is_empty() || self.tool_switch.targets_mm.is_empty() {
            return Err(CliError::Config("control and tool-switch targets must not be empty".into()));
        }
        if self.tool_switch.sequence.is_empty() {
            return Err(CliError::Config("tool_switch.sequence must not be empty".into()));
        }
        Ok(())
    }

    /// SHA-256 of the compact JSON encoding of the effective configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
