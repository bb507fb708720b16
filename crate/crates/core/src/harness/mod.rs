//! Experiment drivers: iterated nonstationary training, the plasticity
//! probe, Q-learning on the contextual bandit, the offset dose-response grid
//! and the task-switch microscope.
//!
//! Every run owns its state and draws randomness from its own seed, so runs
//! in a grid can execute in parallel without changing their output.

mod bandit;
mod config;
mod dose;
mod metrics;
mod microscope;
mod objective;
mod probe;
mod train;

pub use bandit::{q_values, run_bandit_dqn, BanditConfig, BanditRecord, BanditRun, ReplayBuffer, Transition, DEFAULT_REPLAY_CAPACITY};
pub use config::{DataConfig, ExperimentConfig, ProbeConfig, TaskConfig, SCHEMA_VERSION};
pub use dose::{dose_pair, run_offset_dose_response, DoseConfig, DoseRow};
pub use metrics::{HeavyRecord, MetricLog, MetricRecord, MetricSink, RecordKind, Tee};
pub use microscope::{
    observe_training, run_task_switch_microscope, task_switch_microscope, MicroRecord, MicroscopeConfig,
    MicroscopeResult,
};
pub use objective::{evaluate, two_hot_blocks, BatchTargets, Evaluation, LossKind};
pub use probe::{probe_perturbation, probe_plasticity, probe_plasticity_decoded, ProbeResult};
pub use train::{
    gather, measure, run_iterated_training, run_iterated_training_with, run_seed_grid, sample_batch, OwnedTargets,
    StepOutput, TrainedRun, Trainer,
};

use crate::diagnostics::{sharpness_top_eig, SharpnessOptions, SharpnessReport};
use crate::error::Result;
use crate::nn::Network;

/// Top Hessian eigenvalue of the batch loss at the current parameters.
pub fn network_sharpness(
    net: &Network,
    x: &crate::Tensor,
    targets: BatchTargets<'_>,
    loss: LossKind,
    opts: SharpnessOptions,
) -> Result<SharpnessReport> {
    let mut probe = net.clone();
    let mode = crate::diagnostics::probe_mode(x.rows());
    sharpness_top_eig(
        &net.flat_params(),
        |theta| {
            probe.set_flat_params(theta)?;
            let (out, trace) = probe.forward(x, mode)?;
            let eval = evaluate(loss, &out, targets)?;
            Ok(probe.backward(&trace, &eval.grad)?.flatten())
        },
        opts,
    )
}
