use serde::{Deserialize, Serialize};

use super::objective::{BatchTargets, LossKind};
use super::train::{sample_batch, Trainer};
use crate::error::{Error, Result};
use crate::nn::{ActivationKind, Network, NetworkSpec, NormPlacement};
use crate::optim::{OptimizerConfig, OptimizerState, RegularizerConfig};
use crate::par::Exec;
use crate::rng::{derive_seed, substream, Stream};
use crate::tasks::{RegressionTargetGen, TargetKind, SINE_FREQUENCY};
use crate::tensor::Tensor;

fn d_hidden() -> Vec<usize> {
    vec![256; 4]
}
fn d_input_dim() -> usize {
    16
}
fn d_samples() -> usize {
    8192
}
fn d_frequency() -> f64 {
    SINE_FREQUENCY
}
fn d_offsets() -> Vec<f64> {
    vec![0.0, 8.0, 16.0, 32.0]
}
fn d_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}
fn d_steps() -> u64 {
    500
}
fn d_batch() -> usize {
    512
}
fn d_window() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoseConfig {
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "d_input_dim")]
    pub input_dim: usize,
    #[serde(default = "d_samples")]
    pub samples: usize,
    #[serde(default = "d_frequency")]
    pub frequency: f64,
    #[serde(default = "d_offsets")]
    pub offsets: Vec<f64>,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "d_steps")]
    pub pretrain_steps: u64,
    #[serde(default = "d_steps")]
    pub finetune_steps: u64,
    /// Offset of the fine-tuning target.
    #[serde(default)]
    pub finetune_offset: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Number of final steps whose losses are averaged.
    #[serde(default = "d_window")]
    pub final_window: usize,
}

impl Default for DoseConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoseRow {
    pub offset: f64,
    /// Seed-mean of the final-window average losses.
    pub pretrain_loss: f64,
    pub finetune_loss: f64,
    /// `(seed, pretrain, finetune)`.
    pub per_seed: Vec<(u64, f64, f64)>,
}

fn train_on(
    trainer: &mut Trainer,
    x: &Tensor,
    y: &Tensor,
    steps: u64,
    batch: usize,
    window: usize,
    rng_index: u64,
    seed: u64,
) -> Result<f64> {
    let mut rng = substream(seed, Stream::Batch, rng_index);
    let mut tail = Vec::with_capacity(window);
    for s in 0..steps {
        let idx = sample_batch(&mut rng, x.rows(), batch);
        let out = trainer.step(&x.select_rows(&idx), BatchTargets::Values(&y.select_rows(&idx)))?;
        if s + window as u64 >= steps {
            tail.push(out.loss);
        }
    }
    Ok(tail.iter().sum::<f64>() / tail.len().max(1) as f64)
}

/// Pretrain on `sin(M f(x)) + b`, then fine-tune from the pretrained weights
/// with a fresh optimizer on an independent target with offset
/// `finetune_offset`. Returns `(pretrain, finetune)` final-window losses.
pub fn dose_pair(config: &DoseConfig, offset: f64, seed: u64) -> Result<(f64, f64)> {
    let mut rng = substream(seed, Stream::Data, 2);
    let x: Vec<f64> = (0..config.samples * config.input_dim)
        .map(|_| rand::Rng::sample(&mut rng, rand_distr::StandardNormal))
        .collect();
    let x = Tensor::new(vec![config.samples, config.input_dim], x)?;
    let target = |b: f64, index: u64| {
        RegressionTargetGen::new(
            TargetKind::OffsetSine {
                frequency: config.frequency,
                offset: b,
            },
            derive_seed(seed, Stream::Task, index),
        )
        .generate(&x, 0)
    };
    let spec = NetworkSpec::mlp(config.input_dim, &config.hidden, 1, ActivationKind::Relu, NormPlacement::None);
    let net = Network::init(&spec, derive_seed(seed, Stream::Init, 0))?;
    let mut trainer = Trainer {
        opt: OptimizerState::new(config.optimizer, net.params()),
        net,
        loss: LossKind::Mse,
        regularizer: RegularizerConfig::default(),
    };
    let (b, w) = (config.batch_size, config.final_window);
    let pre = train_on(&mut trainer, &x, &target(offset, 0)?, config.pretrain_steps, b, w, 0, seed)?;
    trainer.opt = OptimizerState::new(config.optimizer, trainer.net.params());
    let fine = train_on(
        &mut trainer,
        &x,
        &target(config.finetune_offset, 1)?,
        config.finetune_steps,
        b,
        w,
        1,
        seed,
    )?;
    Ok((pre, fine))
}

/// Dose-response table over `config.offsets`, rows sorted by offset.
pub fn run_offset_dose_response(config: &DoseConfig, exec: Exec) -> Result<Vec<DoseRow>> {
    if config.seeds.is_empty() || config.offsets.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("dose-response needs seeds and finite offsets"));
    }
    if config.batch_size == 0 || config.final_window == 0 {
        return Err(Error::invalid("batch size and final window must be >= 1"));
    }
    config.optimizer.validate()?;
    let mut offsets = config.offsets.clone();
    offsets.sort_by(f64::total_cmp);
    let jobs: Vec<(f64, u64)> = offsets
        .iter()
        .flat_map(|&b| config.seeds.iter().map(move |&s| (b, s)))
        .collect();
    let results = exec.map_slice(&jobs, |&(b, s)| dose_pair(config, b, s));
    let mut rows = Vec::new();
    for (chunk, &b) in results.chunks(config.seeds.len()).zip(&offsets) {
        let mut per_seed = Vec::new();
        for (r, &s) in chunk.iter().zip(&config.seeds) {
            let (p, f) = r.as_ref().map_err(|e| Error::invalid(format!("offset {b}, seed {s}: {e}")))?;
            per_seed.push((s, *p, *f));
        }
        let n = per_seed.len() as f64;
        rows.push(DoseRow {
            offset: b,
            pretrain_loss: per_seed.iter().map(|r| r.1).sum::<f64>() / n,
            finetune_loss: per_seed.iter().map(|r| r.2).sum::<f64>() / n,
            per_seed,
        });
    }
    Ok(rows)
}
