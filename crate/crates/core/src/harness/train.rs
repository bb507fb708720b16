use std::path::Path;

use rand::seq::index::sample;

use super::config::ExperimentConfig;
use super::metrics::{HeavyRecord, MetricLog, MetricRecord, MetricSink, RecordKind};
use super::objective::{evaluate, BatchTargets, LossKind};
use crate::diagnostics::{census_from_trace, entk_gram, feature_svd, param_norms, probe_mode, MAX_ENTK_BATCH};
use crate::error::{Error, Result};
use crate::nn::{BackwardOptions, ForwardTrace, Network};
use crate::optim::{
    apply_l2, feature_norm_penalty, redo_reset, rescale_weights_to_init, unit_activity, OptimizerState,
    RegularizerConfig,
};
use crate::par::Exec;
use crate::rng::{derive_seed, substream, Rng, Stream};
use crate::tasks::{Dataset, TargetKind, Targets, TaskStream};
use crate::tensor::Tensor;

/// Targets gathered for a batch.
#[derive(Clone, Debug, PartialEq)]
pub enum OwnedTargets {
    Labels { labels: Vec<usize>, num_classes: usize },
    Values(Tensor),
}

impl OwnedTargets {
    pub fn as_batch(&self) -> BatchTargets<'_> {
        match self {
            OwnedTargets::Labels { labels, num_classes } => BatchTargets::Labels {
                labels,
                num_classes: *num_classes,
            },
            OwnedTargets::Values(v) => BatchTargets::Values(v),
        }
    }
}

/// Rows `idx` of a dataset.
pub fn gather(ds: &Dataset, idx: &[usize]) -> (Tensor, OwnedTargets) {
    let x = ds.inputs.select_rows(idx);
    let t = match &ds.targets {
        Targets::Labels { labels, num_classes } => OwnedTargets::Labels {
            labels: idx.iter().map(|&i| labels[i]).collect(),
            num_classes: *num_classes,
        },
        Targets::Values(v) => OwnedTargets::Values(v.select_rows(idx)),
    };
    (x, t)
}

/// `b` distinct indices from `0..n`, or all of them when `b >= n`.
pub fn sample_batch(rng: &mut Rng, n: usize, b: usize) -> Vec<usize> {
    if b >= n {
        (0..n).collect()
    } else {
        sample(rng, n, b).into_vec()
    }
}

/// Network, optimizer state and objective for minibatch training.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub net: Network,
    pub opt: OptimizerState,
    pub loss: LossKind,
    pub regularizer: RegularizerConfig,
}

/// Result of one update.
pub struct StepOutput {
    /// Objective before the update, without regularization terms.
    pub loss: f64,
    pub trace: ForwardTrace,
}

impl Trainer {
    /// One optimizer update on a batch. Non-finite losses or gradients leave
    /// the parameters untouched and return an error.
    pub fn step(&mut self, x: &Tensor, targets: BatchTargets<'_>) -> Result<StepOutput> {
        let (out, trace) = self.net.forward_train(x)?;
        let eval = evaluate(self.loss, &out, targets)?;
        if !eval.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss {}", eval.loss)));
        }
        let penalty = feature_norm_penalty(&self.net, &trace, self.regularizer.feature_norm_coefficient);
        let opts = BackwardOptions {
            injections: penalty.iter().map(|(_, b, g)| (*b, g)).collect(),
            record_layer_grads: false,
        };
        let mut grads = self.net.backward_with(&trace, &eval.grad, &opts)?.params;
        apply_l2(&mut grads, self.net.params(), self.regularizer.l2_coefficient);
        self.opt.apply(self.net.params_mut(), &grads)?;
        Ok(StepOutput { loss: eval.loss, trace })
    }
}

/// Light metrics of `net` on the evaluation rows of `ds`.
pub fn measure(net: &Network, loss: LossKind, x: &Tensor, targets: BatchTargets<'_>) -> Result<MetricRecord> {
    let (out, trace) = net.forward(x, probe_mode(x.rows()))?;
    let eval = evaluate(loss, &out, targets)?;
    let census = census_from_trace(net, &trace);
    let norms = param_norms(net);
    Ok(MetricRecord {
        step: 0,
        task: 0,
        kind: RecordKind::Cadence,
        loss: eval.loss,
        accuracy: eval.accuracy,
        dead_fraction: census.dead_fraction,
        zombie_fraction: census.zombie_fraction,
        param_norm: norms.total,
        layer_norms: norms.layers,
        entropy: eval.entropy,
        diverged: false,
        heavy: None,
    })
}

/// State left at the end of [`run_iterated_training_with`].
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub trainer: Trainer,
    pub steps: u64,
    pub diverged: bool,
}

fn moving(config: &ExperimentConfig) -> bool {
    matches!(
        config.target.map(|t| t.function),
        Some(TargetKind::MovingSine { .. })
    )
}

struct Ctx<'a> {
    config: &'a ExperimentConfig,
    sink: &'a mut dyn MetricSink,
}

impl Ctx<'_> {
    fn targets_at(&self, ds: &Dataset, idx: &[usize], step: u64) -> Result<(Tensor, OwnedTargets)> {
        let (x, t) = gather(ds, idx);
        if moving(self.config) {
            let values = self.config.target.unwrap().generate(&x, step)?;
            return Ok((x, OwnedTargets::Values(values)));
        }
        Ok((x, t))
    }

    fn emit(&mut self, net: &Network, ds: &Dataset, step: u64, task: usize, kind: RecordKind, diverged: bool) -> Result<()> {
        let eval_idx: Vec<usize> = (0..self.config.eval_size.min(ds.len())).collect();
        let (x, t) = self.targets_at(ds, &eval_idx, step)?;
        let mut rec = measure(net, self.config.loss, &x, t.as_batch())?;
        rec.step = step;
        rec.task = task;
        rec.kind = kind;
        rec.diverged = diverged;
        if let Some(h) = self.config.heavy_cadence {
            if step % h == 0 && !diverged {
                rec.heavy = Some(step);
                let n = x.rows().min(MAX_ENTK_BATCH);
                let entk = entk_gram(net, &x.select_rows(&(0..n).collect::<Vec<_>>()), 0, Exec::Sequential)?;
                self.sink.heavy(&HeavyRecord::new(step, "entk", &entk)?)?;
                if net.head_layer().is_some() {
                    self.sink.heavy(&HeavyRecord::new(step, "svd", &feature_svd(net, &x)?)?)?;
                }
            }
        }
        self.sink.record(&rec)
    }
}

/// Iterated training with metrics streamed to `sink`. Optimizer state
/// persists across tasks unless the reset policy says otherwise. A
/// non-finite loss or gradient ends the run with a record flagged
/// `diverged`.
pub fn run_iterated_training_with(
    config: &ExperimentConfig,
    seed: u64,
    data_dir: &Path,
    sink: &mut dyn MetricSink,
) -> Result<TrainedRun> {
    config.validate()?;
    let base = config.base_dataset(data_dir, seed)?;
    let task = config.task;
    let stream = TaskStream::new(base, task.mode, task.steps_per_task, task.num_tasks, seed)?;
    let net = Network::init(&config.network, derive_seed(seed, Stream::Init, 0))?;
    let opt = OptimizerState::new(config.optimizer, net.params());
    let mut trainer = Trainer {
        net,
        opt,
        loss: config.loss,
        regularizer: config.regularizer,
    };
    let mut batch_rng = substream(seed, Stream::Batch, 0);
    let mut redo_rng = substream(seed, Stream::Init, 1);
    let reset = config.reset;
    let total = task.total_steps();
    let mut ctx = Ctx { config, sink };
    let mut step = 0u64;

    for (k, ds) in stream.iter().enumerate() {
        let ds = ds?;
        if k == 0 {
            ctx.emit(&trainer.net, &ds, 0, 0, RecordKind::Cadence, false)?;
        } else if reset.reset_optimizer_on_switch {
            trainer.opt.reset();
        }
        for j in 1..=task.steps_per_task {
            let idx = sample_batch(&mut batch_rng, ds.len(), config.batch_size);
            let (x, t) = ctx.targets_at(&ds, &idx, step)?;
            let out = match trainer.step(&x, t.as_batch()) {
                Ok(out) => out,
                Err(Error::NonFinite(_) | Error::NonFiniteGradient(_)) => {
                    log::warn!("run diverged at step {}", step + 1);
                    ctx.emit(&trainer.net, &ds, step + 1, k, RecordKind::Final, true)?;
                    ctx.sink.flush()?;
                    return Ok(TrainedRun {
                        trainer,
                        steps: step,
                        diverged: true,
                    });
                }
                Err(e) => return Err(e),
            };
            step += 1;
            if reset.redo_interval.is_some_and(|i| step % i == 0) {
                let activity = unit_activity(&trainer.net, &out.trace);
                let n = redo_reset(
                    &mut trainer.net,
                    &activity,
                    Some(&mut trainer.opt),
                    reset.redo_threshold,
                    &mut redo_rng,
                )?;
                log::debug!("step {step}: ReDO reset {n} units");
            }
            if reset.rescale_to_init && step % reset.rescale_interval == 0 {
                rescale_weights_to_init(&mut trainer.net);
            }
            let last_task = k + 1 == task.num_tasks;
            let kind = if j == task.steps_per_task && !last_task {
                Some(RecordKind::BeforeSwitch)
            } else if j == 1 && k > 0 {
                Some(RecordKind::AfterSwitch)
            } else if step == total {
                Some(RecordKind::Final)
            } else if step % config.cadence == 0 {
                Some(RecordKind::Cadence)
            } else {
                None
            };
            if let Some(kind) = kind {
                ctx.emit(&trainer.net, &ds, step, k, kind, false)?;
                if kind == RecordKind::AfterSwitch {
                    ctx.sink.flush()?;
                }
            }
        }
    }
    ctx.sink.flush()?;
    Ok(TrainedRun {
        trainer,
        steps: step,
        diverged: false,
    })
}

/// Iterated training for one seed, collected in memory. Dataset files are
/// resolved against [`crate::io::data_dir`].
pub fn run_iterated_training(config: &ExperimentConfig, seed: u64) -> Result<MetricLog> {
    let mut log = MetricLog::default();
    run_iterated_training_with(config, seed, &crate::io::data_dir(), &mut log)?;
    Ok(log)
}

/// Runs every seed of the config; runs are independent and may execute in
/// parallel.
pub fn run_seed_grid(config: &ExperimentConfig, exec: Exec) -> Vec<(u64, Result<MetricLog>)> {
    exec.map_slice(&config.seeds, |&s| (s, run_iterated_training(config, s)))
}
