//! Run configuration: a TOML file with strict unknown-key rejection, since a
//! silently ignored typo in a hyperparameter name is the easiest way to ruin
//! a long run. Every section has defaults; each command validates that the
//! fields it needs are present.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use agnet::geometry::GridSpec;
use agnet::graph::LibraryConfig;
use agnet::nn::{Activation, AdamConfig, Optimizer};
use agnet::taskbench::PooledBaselineConfig;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub adapt: AdaptSection,
    #[serde(default)]
    pub generate: GenerateSection,
    #[serde(default)]
    pub gen: Option<GenGridSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Metaset directory (holds manifest.json).
    pub metaset: Option<PathBuf>,
    /// Checkpoint file: written by `train`, read by `adapt`/`eval`.
    pub checkpoint: Option<PathBuf>,
    /// Output directory for artifacts.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    pub wheel_n: usize,
    pub hidden_dim: usize,
    pub mp_steps: usize,
    pub node_modules: usize,
    pub edge_modules: usize,
    pub module_hidden: Vec<usize>,
    pub activation: ActivationName,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: Family::Wheel,
            wheel_n: 8,
            hidden_dim: 16,
            mp_steps: 5,
            node_modules: 4,
            edge_modules: 4,
            module_hidden: vec![32],
            activation: ActivationName::Tanh,
        }
    }
}

impl ModelConfig {
    pub fn library_config(&self) -> LibraryConfig {
        LibraryConfig {
            hidden_dim: self.hidden_dim,
            node_modules: self.node_modules,
            edge_modules: self.edge_modules,
            module_hidden: self.module_hidden.clone(),
            activation: self.activation.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Wheel,
    Gen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationName {
    Tanh,
    Relu,
}

impl From<ActivationName> for Activation {
    fn from(a: ActivationName) -> Activation {
        match a {
            ActivationName::Tanh => Activation::Tanh,
            ActivationName::Relu => Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps: u64,
    pub sa_batch: usize,
    pub grad_batch: usize,
    pub optimizer: OptimizerName,
    pub lr: f64,
    pub t0: f64,
    pub t_final: f64,
    pub proposals: bool,
    pub seed: u64,
    /// Per-task structure-search budget for the meta-test evaluation phase.
    pub adapt_budget: u64,
    /// Also train and report the pooled no-adaptation baseline.
    pub pooled_baseline: bool,
    pub pooled_hidden: Vec<usize>,
    pub pooled_steps: u64,
    pub pooled_batch: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            steps: 20_000,
            sa_batch: 16,
            grad_batch: 16,
            optimizer: OptimizerName::Adam,
            lr: 1e-3,
            t0: 1.0,
            t_final: 0.01,
            proposals: true,
            seed: 0,
            adapt_budget: 300,
            pooled_baseline: false,
            pooled_hidden: vec![64, 64],
            pooled_steps: 20_000,
            pooled_batch: 32,
        }
    }
}

impl TrainSection {
    pub fn optimizer(&self) -> Optimizer {
        match self.optimizer {
            OptimizerName::Sgd => Optimizer::Sgd { lr: self.lr },
            OptimizerName::Adam => Optimizer::Adam(AdamConfig::with_lr(self.lr)),
        }
    }

    pub fn pooled_config(&self, seed: u64) -> PooledBaselineConfig {
        PooledBaselineConfig {
            hidden: self.pooled_hidden.clone(),
            steps: self.pooled_steps,
            batch: self.pooled_batch,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptSection {
    pub budget: u64,
    pub t0: f64,
    pub t_final: f64,
    pub seed: u64,
    /// Leading rows of the task file used for adaptation; the rest are the
    /// held-out test rows.
    pub train_points: usize,
}

impl Default for AdaptSection {
    fn default() -> Self {
        AdaptSection {
            budget: 300,
            t0: 1.0,
            t_final: 0.01,
            seed: 0,
            train_points: 50,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub meta_train_tasks: usize,
    pub meta_test_tasks: usize,
    pub points_per_task: usize,
    pub train_points: usize,
    pub node_modules: usize,
    pub edge_modules: usize,
    pub wheel_n: usize,
    pub hidden_dim: usize,
    pub mp_steps: usize,
    pub module_hidden: Vec<usize>,
    pub init_gain: f64,
    pub noise_sigma: f64,
    pub separation_audit: bool,
    pub seed: u64,
}

impl Default for GenerateSection {
    fn default() -> Self {
        let d = agnet::taskbench::SyntheticSpec::default();
        GenerateSection {
            meta_train_tasks: d.meta_train_tasks,
            meta_test_tasks: d.meta_test_tasks,
            points_per_task: d.points_per_task,
            train_points: d.train_points,
            node_modules: d.node_modules,
            edge_modules: d.edge_modules,
            wheel_n: d.wheel_n,
            hidden_dim: d.hidden_dim,
            mp_steps: d.mp_steps,
            module_hidden: d.module_hidden,
            init_gain: d.init_gain,
            noise_sigma: d.noise_sigma,
            separation_audit: d.separation_audit,
            seed: d.seed,
        }
    }
}

impl GenerateSection {
    pub fn synthetic_spec(&self, seed_override: Option<u64>) -> agnet::taskbench::SyntheticSpec {
        agnet::taskbench::SyntheticSpec {
            meta_train_tasks: self.meta_train_tasks,
            meta_test_tasks: self.meta_test_tasks,
            points_per_task: self.points_per_task,
            train_points: self.train_points,
            node_modules: self.node_modules,
            edge_modules: self.edge_modules,
            wheel_n: self.wheel_n,
            hidden_dim: self.hidden_dim,
            mp_steps: self.mp_steps,
            module_hidden: self.module_hidden.clone(),
            init_gain: self.init_gain,
            noise_sigma: self.noise_sigma,
            separation_audit: self.separation_audit,
            seed: seed_override.unwrap_or(self.seed),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenGridSection {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub rows: usize,
    pub cols: usize,
    /// Shared material map used for tasks that do not carry their own.
    pub material_map: Option<PathBuf>,
}

impl GenGridSection {
    pub fn grid_spec(&self) -> Result<GridSpec, CliError> {
        GridSpec::new(
            self.x_min,
            self.x_max,
            self.y_min,
            self.y_max,
            self.rows,
            self.cols,
        )
        .map_err(|e| CliError::Usage(format!("[gen] grid: {e}")))
    }
}

pub fn load_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Fetch a required path with a mode-specific message.
pub fn require_path(field: &Option<PathBuf>, name: &str, mode: &str) -> Result<PathBuf, CliError> {
    field
        .clone()
        .ok_or_else(|| CliError::Usage(format!("`{mode}` requires [paths] {name} in the config")))
}
