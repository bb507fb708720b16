use serde::{Deserialize, Serialize};

use super::objective::{evaluate, LossKind};
use super::train::{gather, sample_batch, Trainer};
use crate::diagnostics::{census_from_trace, gradient_alignment_census, probe_mode, AlignmentCensus};
use crate::error::Result;
use crate::nn::{ActivationKind, Network, NetworkSpec, NormPlacement};
use crate::optim::{OptimizerConfig, OptimizerState, RegularizerConfig};
use crate::rng::{derive_seed, substream, Stream};
use crate::tasks::{randomize_labels, synth_dataset, Dataset};

fn d_hidden() -> Vec<usize> {
    vec![256, 256]
}
fn d_classes() -> usize {
    10
}
fn d_input_dim() -> usize {
    16
}
fn d_per_class() -> usize {
    50
}
fn d_pretrain() -> u64 {
    3000
}
fn d_steps() -> u64 {
    500
}
fn d_batch() -> usize {
    128
}
fn d_probe() -> usize {
    512
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroscopeConfig {
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "d_classes")]
    pub num_classes: usize,
    #[serde(default = "d_input_dim")]
    pub input_dim: usize,
    #[serde(default = "d_per_class")]
    pub n_per_class: usize,
    /// Steps of training on the first random labelling.
    #[serde(default = "d_pretrain")]
    pub pretrain_steps: u64,
    /// Post-switch steps logged (`K`).
    #[serde(default = "d_steps")]
    pub steps: u64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Samples used for the per-step measurements.
    #[serde(default = "d_probe")]
    pub probe_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for MicroscopeConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MicroRecord {
    pub step: u64,
    pub loss: f64,
    pub accuracy: f64,
    pub dead_units: usize,
    pub zombie_units: usize,
    pub entropy: f64,
    pub alignment: Vec<AlignmentCensus>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MicroscopeResult {
    /// Entropy of the checkpoint on the probe inputs.
    pub converged_entropy: f64,
    pub converged_accuracy: f64,
    pub persisted: Vec<MicroRecord>,
    pub reset: Vec<MicroRecord>,
}

fn observe(net: &Network, probe: &Dataset, step: u64) -> Result<MicroRecord> {
    let (x, t) = gather(probe, &(0..probe.len()).collect::<Vec<_>>());
    let (out, trace) = net.forward(&x, probe_mode(x.rows()))?;
    let eval = evaluate(LossKind::Xent { smoothing: 0.0 }, &out, t.as_batch())?;
    let census = census_from_trace(net, &trace);
    let count = |f: fn(&crate::diagnostics::UnitStatus) -> bool| {
        census.layers.iter().flat_map(|l| &l.units).filter(|u| f(u)).count()
    };
    Ok(MicroRecord {
        step,
        loss: eval.loss,
        accuracy: eval.accuracy.unwrap_or(0.0),
        dead_units: count(|u| u.dead),
        zombie_units: count(|u| u.zombie),
        entropy: eval.entropy.unwrap_or(0.0),
        alignment: gradient_alignment_census(net, &trace, &eval.grad)?,
    })
}

/// Trains `trainer` on `task` for `steps` steps, observing every step on the
/// first `probe_size` samples. Batches are drawn from `batch_seed`, so runs
/// sharing it see identical data.
pub fn observe_training(
    mut trainer: Trainer,
    task: &Dataset,
    steps: u64,
    batch_size: usize,
    probe_size: usize,
    batch_seed: u64,
) -> Result<Vec<MicroRecord>> {
    let probe = task.subset(&(0..probe_size.min(task.len())).collect::<Vec<_>>());
    let mut rng = substream(batch_seed, Stream::Batch, 0);
    let mut log = vec![observe(&trainer.net, &probe, 0)?];
    for s in 1..=steps {
        let idx = sample_batch(&mut rng, task.len(), batch_size);
        let (x, t) = gather(task, &idx);
        trainer.step(&x, t.as_batch())?;
        log.push(observe(&trainer.net, &probe, s)?);
    }
    Ok(log)
}

/// Two runs from the same checkpoint on `task`, one keeping the optimizer
/// moments and one with them zeroed.
pub fn task_switch_microscope(
    checkpoint: &Trainer,
    task: &Dataset,
    config: &MicroscopeConfig,
) -> Result<(Vec<MicroRecord>, Vec<MicroRecord>)> {
    let batch_seed = derive_seed(config.seed, Stream::Batch, 1);
    let persisted = observe_training(
        checkpoint.clone(),
        task,
        config.steps,
        config.batch_size,
        config.probe_size,
        batch_seed,
    )?;
    let mut fresh = checkpoint.clone();
    fresh.opt.reset();
    let reset = observe_training(fresh, task, config.steps, config.batch_size, config.probe_size, batch_seed)?;
    Ok((persisted, reset))
}

/// Trains an MLP to fit random labels, re-randomizes every label and logs
/// the first `steps` updates with and without an optimizer reset.
pub fn run_task_switch_microscope(config: &MicroscopeConfig) -> Result<MicroscopeResult> {
    config.optimizer.validate()?;
    let base = synth_dataset(
        config.num_classes,
        config.input_dim,
        config.n_per_class,
        derive_seed(config.seed, Stream::Data, 0),
    )?;
    let first = randomize_labels(&base, 1.0, derive_seed(config.seed, Stream::Task, 0))?;
    let second = randomize_labels(&base, 1.0, derive_seed(config.seed, Stream::Task, 1))?;
    let spec = NetworkSpec::mlp(
        config.input_dim,
        &config.hidden,
        config.num_classes,
        ActivationKind::Relu,
        NormPlacement::None,
    );
    let net = Network::init(&spec, derive_seed(config.seed, Stream::Init, 0))?;
    let mut trainer = Trainer {
        opt: OptimizerState::new(config.optimizer, net.params()),
        net,
        loss: LossKind::Xent { smoothing: 0.0 },
        regularizer: RegularizerConfig::default(),
    };
    let mut rng = substream(config.seed, Stream::Batch, 0);
    for _ in 0..config.pretrain_steps {
        let idx = sample_batch(&mut rng, first.len(), config.batch_size);
        let (x, t) = gather(&first, &idx);
        trainer.step(&x, t.as_batch())?;
    }
    let probe = first.subset(&(0..config.probe_size.min(first.len())).collect::<Vec<_>>());
    let converged = observe(&trainer.net, &probe, 0)?;
    let (persisted, reset) = task_switch_microscope(&trainer, &second, config)?;
    Ok(MicroscopeResult {
        converged_entropy: converged.entropy,
        converged_accuracy: converged.accuracy,
        persisted,
        reset,
    })
}
