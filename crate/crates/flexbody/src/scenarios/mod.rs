//! The experiment protocols behind each CLI scenario.

mod control;
mod online;
mod training;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use flexbody_core::sim::{surrogate_real, RobotModel, ToolState};
use flexbody_core::wtnpb::ModelBundle;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Plant};
use crate::error::{CliError, Result};
use crate::io;

pub use control::{METHODS, SWITCH_WINDOW};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    TrainSim,
    FineTune,
    PbMap,
    OnlineTraj,
    ControlEval,
    ToolSwitch,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::TrainSim,
        Scenario::FineTune,
        Scenario::PbMap,
        Scenario::OnlineTraj,
        Scenario::ControlEval,
        Scenario::ToolSwitch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::TrainSim => "train-sim",
            Scenario::FineTune => "fine-tune",
            Scenario::PbMap => "pb-map",
            Scenario::OnlineTraj => "online-traj",
            Scenario::ControlEval => "control-eval",
            Scenario::ToolSwitch => "tool-switch",
        }
    }

    pub fn summary_file(self) -> String {
        format!("{}.summary.json", self.name())
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Bundles produced by earlier scenarios.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Inputs {
    /// `sim_bundle.json` from train-sim.
    pub bundle: Option<PathBuf>,
    /// `real_bundle.json` from fine-tune.
    pub fine_tuned_bundle: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct RunSpec {
    pub scenario: Scenario,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub inputs: Inputs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: Scenario,
    pub seed: u64,
    pub config_hash: String,
    pub inputs: BTreeMap<String, InputFile>,
    pub outputs: Vec<String>,
    pub metrics: serde_json::Value,
}

/// Per-run bookkeeping: where files go and what was read.
pub(crate) struct Run<'a> {
    pub spec: &'a RunSpec,
    pub cfg: &'a ExperimentConfig,
    inputs: BTreeMap<String, InputFile>,
    outputs: Vec<String>,
}

impl<'a> Run<'a> {
    pub fn seed(&self) -> u64 {
        self.spec.seed
    }

    /// Path for an output file, recorded in the summary.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.spec.out.join(name)
    }

    pub fn sim_bundle(&mut self) -> Result<ModelBundle> {
        let path = self.spec.inputs.bundle.clone();
        self.load("bundle", path, Scenario::TrainSim, "a sim-trained bundle", "--bundle")
    }

    pub fn real_bundle(&mut self) -> Result<ModelBundle> {
        let path = self.spec.inputs.fine_tuned_bundle.clone();
        self.load(
            "fine_tuned_bundle",
            path,
            Scenario::FineTune,
            "a fine-tuned bundle",
            "--fine-tuned-bundle",
        )
    }

    fn load(
        &mut self,
        key: &str,
        path: Option<PathBuf>,
        required: Scenario,
        what: &'static str,
        flag: &'static str,
    ) -> Result<ModelBundle> {
        let missing = || CliError::MissingPrerequisite {
            scenario: self.spec.scenario,
            required,
            what,
            flag,
        };
        let path = path.ok_or_else(missing)?;
        if !path.exists() {
            return Err(missing());
        }
        let bundle = io::read_bundle(&path)?;
        let sha256 = io::sha256_file(&path)?;
        self.inputs.insert(key.to_string(), InputFile { path, sha256 });
        Ok(bundle)
    }

    pub fn plant(&self, which: Plant) -> RobotModel {
        match which {
            Plant::Sim => self.cfg.robot.clone(),
            Plant::Real => surrogate_real(&self.cfg.robot, &self.cfg.perturbation),
        }
    }
}

pub fn training_tools() -> [ToolState; 6] {
    ToolState::training_states()
}

/// Runs one scenario, writes its files and `<scenario>.summary.json` into
/// `spec.out`, and returns the summary.
pub fn run(spec: &RunSpec) -> Result<Summary> {
    spec.config.validate()?;
    fs::create_dir_all(&spec.out).map_err(|e| CliError::io(&spec.out, e))?;
    let mut run = Run {
        spec,
        cfg: &spec.config,
        inputs: BTreeMap::new(),
        outputs: Vec::new(),
    };
    let metrics = match spec.scenario {
        Scenario::TrainSim => training::train_sim(&mut run)?,
        Scenario::FineTune => training::fine_tune(&mut run)?,
        Scenario::PbMap => training::pb_map(&mut run)?,
        Scenario::OnlineTraj => online::online_traj(&mut run)?,
        Scenario::ControlEval => control::control_eval(&mut run)?,
        Scenario::ToolSwitch => control::tool_switch(&mut run)?,
    };
    let summary = Summary {
        scenario: spec.scenario,
        seed: spec.seed,
        config_hash: spec.config.hash(),
        inputs: run.inputs,
        outputs: run.outputs,
        metrics,
    };
    io::write_json(&spec.out.join(spec.scenario.summary_file()), &summary)?;
    Ok(summary)
}

pub fn read_summary(dir: &Path, scenario: Scenario) -> Result<Summary> {
    io::read_json(&dir.join(scenario.summary_file()))
}

fn pb_columns(prefix: &str, dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("{prefix}{i}")).collect()
}
