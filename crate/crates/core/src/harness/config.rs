use std::path::Path;

use serde::{Deserialize, Serialize};

use super::objective::LossKind;
use crate::error::{Error, Result};
use crate::nn::NetworkSpec;
use crate::optim::{OptimizerConfig, RegularizerConfig, ResetPolicy};
use crate::rng::{derive_seed, substream, Stream};
use crate::tasks::{load_cifar10_bin, load_mnist_idx, synth_dataset, Dataset, RegressionTargetGen, TaskMode, Targets};
use crate::tensor::Tensor;

pub const SCHEMA_VERSION: u32 = 1;

fn d_batch() -> usize {
    128
}
fn d_cadence() -> u64 {
    100
}
fn d_eval() -> usize {
    512
}
fn d_seeds() -> Vec<u64> {
    vec![0]
}
fn d_rho() -> f64 {
    1.0
}
fn d_probe_steps() -> u64 {
    2000
}
fn d_probe_inputs() -> usize {
    256
}

/// Where the base dataset comes from. File paths are resolved against the
/// data directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Gaussian class clusters; `seed` defaults to one derived from the run seed.
    Synthetic {
        num_classes: usize,
        input_dim: usize,
        n_per_class: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Standard normal inputs without labels, for regression targets.
    Gaussian {
        n: usize,
        input_dim: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    Mnist {
        images: String,
        labels: String,
        #[serde(default)]
        limit: Option<usize>,
    },
    Cifar10 {
        files: Vec<String>,
        #[serde(default)]
        limit: Option<usize>,
    },
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            DataConfig::Synthetic {
                num_classes,
                input_dim,
                n_per_class,
                ..
            } => *num_classes > 0 && *input_dim > 0 && *n_per_class > 0,
            DataConfig::Gaussian { n, input_dim, .. } => *n > 0 && *input_dim > 0,
            DataConfig::Mnist { limit, .. } => *limit != Some(0),
            DataConfig::Cifar10 { files, limit } => !files.is_empty() && *limit != Some(0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("degenerate data source {self:?}")))
        }
    }

    pub fn load(&self, data_dir: &Path, run_seed: u64) -> Result<Dataset> {
        let seed = |s: &Option<u64>| s.unwrap_or_else(|| derive_seed(run_seed, Stream::Data, 0));
        let limited = |ds: Dataset, limit: &Option<usize>| match limit {
            Some(l) if *l < ds.len() => ds.subset(&(0..*l).collect::<Vec<_>>()),
            _ => ds,
        };
        match self {
            DataConfig::Synthetic {
                num_classes,
                input_dim,
                n_per_class,
                seed: s,
            } => synth_dataset(*num_classes, *input_dim, *n_per_class, seed(s)),
            DataConfig::Gaussian { n, input_dim, seed: s } => {
                let mut rng = substream(seed(s), Stream::Data, 1);
                let data = (0..n * input_dim)
                    .map(|_| rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal))
                    .collect();
                Dataset::regression(Tensor::new(vec![*n, *input_dim], data)?, Tensor::zeros(&[*n, 1]))
            }
            DataConfig::Mnist { images, labels, limit } => Ok(limited(
                load_mnist_idx(&data_dir.join(images), &data_dir.join(labels))?,
                limit,
            )),
            DataConfig::Cifar10 { files, limit } => {
                let paths: Vec<_> = files.iter().map(|f| data_dir.join(f)).collect();
                let refs: Vec<&Path> = paths.iter().map(|p| p.as_path()).collect();
                Ok(limited(load_cifar10_bin(&refs)?, limit))
            }
        }
    }
}

/// Task schedule. `budget`, when given, must equal
/// `steps_per_task * num_tasks`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub mode: TaskMode,
    pub steps_per_task: u64,
    pub num_tasks: usize,
    #[serde(default)]
    pub budget: Option<u64>,
}

impl TaskConfig {
    pub fn total_steps(&self) -> u64 {
        self.steps_per_task * self.num_tasks as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub network: NetworkSpec,
    pub data: DataConfig,
    pub task: TaskConfig,
    /// Replaces the dataset targets with a regression function of the inputs.
    #[serde(default)]
    pub target: Option<RegressionTargetGen>,
    pub loss: LossKind,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub regularizer: RegularizerConfig,
    #[serde(default)]
    pub reset: ResetPolicy,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    /// Steps between metric records.
    #[serde(default = "d_cadence")]
    pub cadence: u64,
    /// Steps between heavy diagnostics (eNTK, feature SVD); `None` disables.
    #[serde(default)]
    pub heavy_cadence: Option<u64>,
    /// Samples of the current task used for metrics.
    #[serde(default = "d_eval")]
    pub eval_size: usize,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
}

fn cfg_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn nested(path: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Invalid(m) => cfg_err(path, m),
        other => cfg_err(path, other.to_string()),
    })
}

impl ExperimentConfig {
    /// Range and consistency checks. Dataset-dependent checks happen when
    /// the data is loaded.
    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(cfg_err(
                "version",
                format!("unsupported schema version {} (expected {SCHEMA_VERSION})", self.version),
            ));
        }
        nested("network", self.network.validate())?;
        nested("data", self.data.validate())?;
        nested("task.mode", self.task.mode.validate())?;
        if self.task.steps_per_task == 0 {
            return Err(cfg_err("task.steps_per_task", "must be >= 1, got 0"));
        }
        if self.task.num_tasks > 1 && self.task.steps_per_task < 2 {
            // The before/after records of a switch need distinct steps.
            return Err(cfg_err("task.steps_per_task", "must be >= 2 when there are several tasks"));
        }
        if matches!(self.data, DataConfig::Gaussian { .. }) && self.target.is_none() {
            return Err(cfg_err("target", "gaussian inputs need a regression target"));
        }
        if let Some(b) = self.task.budget {
            if b != self.task.total_steps() {
                return Err(cfg_err(
                    "task.budget",
                    format!("{b} != steps_per_task * num_tasks = {}", self.task.total_steps()),
                ));
            }
        }
        if let Some(t) = &self.target {
            nested("target", t.validate())?;
        }
        nested("loss", self.loss.validate())?;
        nested("optimizer", self.optimizer.validate())?;
        nested("regularizer", self.regularizer.validate())?;
        nested("reset", self.reset.validate())?;
        if self.batch_size == 0 {
            return Err(cfg_err("batch_size", "must be >= 1, got 0"));
        }
        if self.cadence == 0 {
            return Err(cfg_err("cadence", "must be >= 1, got 0"));
        }
        if self.heavy_cadence == Some(0) {
            return Err(cfg_err("heavy_cadence", "must be >= 1, got 0"));
        }
        if self.eval_size == 0 {
            return Err(cfg_err("eval_size", "must be >= 1, got 0"));
        }
        if self.seeds.is_empty() {
            return Err(cfg_err("seeds", "at least one seed is required"));
        }
        Ok(())
    }

    /// Loads the base dataset for `seed`, applies the regression target and
    /// checks it against the network and loss.
    pub fn base_dataset(&self, data_dir: &Path, seed: u64) -> Result<Dataset> {
        let mut ds = self.data.load(data_dir, seed)?;
        let sample = &self.network.input_shape;
        if ds.input_dim() != sample.iter().product::<usize>() {
            return Err(cfg_err(
                "network.input_shape",
                format!("{sample:?} does not match {} input features", ds.input_dim()),
            ));
        }
        let mut shape = vec![ds.len()];
        shape.extend_from_slice(sample);
        ds.inputs = ds.inputs.reshape(shape)?;
        if let Some(gen) = &self.target {
            let values = gen.generate(&ds.inputs, 0)?;
            ds = Dataset::regression(ds.inputs, values)?;
        }
        let targets = match &ds.targets {
            Targets::Labels { num_classes, .. } => *num_classes,
            Targets::Values(v) => v.row_len(),
        };
        let need = self.loss.output_width(targets);
        let have = self.network.output_dim()?;
        if need != have {
            return Err(cfg_err(
                "network",
                format!("output width {have}, but {:?} on this data needs {need}", self.loss),
            ));
        }
        Ok(ds)
    }
}

/// Plasticity probe settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Frobenius norm of the perturbation `eta(X)`.
    #[serde(default = "d_rho")]
    pub rho: f64,
    /// Seed of the frozen network generating `eta`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_probe_steps")]
    pub steps: u64,
    #[serde(default = "probe_optimizer")]
    pub optimizer: OptimizerConfig,
    /// Number of probe inputs drawn from the dataset.
    #[serde(default = "d_probe_inputs")]
    pub inputs: usize,
}

fn probe_optimizer() -> OptimizerConfig {
    OptimizerConfig::adam(1e-3)
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            rho: d_rho(),
            seed: 0,
            steps: d_probe_steps(),
            optimizer: probe_optimizer(),
            inputs: d_probe_inputs(),
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(cfg_err("rho", format!("must be finite and > 0, got {}", self.rho)));
        }
        if self.steps == 0 {
            return Err(cfg_err("steps", "must be >= 1, got 0"));
        }
        if self.inputs == 0 {
            return Err(cfg_err("inputs", "must be >= 1, got 0"));
        }
        nested("optimizer", self.optimizer.validate())
    }
}
