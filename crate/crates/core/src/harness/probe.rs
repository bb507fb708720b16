use serde::Serialize;

use super::config::ProbeConfig;
use crate::diagnostics::probe_mode;
use crate::error::{Error, Result};
use crate::nn::{softmax, Network, TwoHotCodec};
use crate::optim::OptimizerState;
use crate::tasks::{RegressionTargetGen, TargetKind, SINE_FREQUENCY};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeResult {
    /// `(step, loss)` at steps `0, 1, 2, 4, ...` and the last step.
    pub curve: Vec<(u64, f64)>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub diverged: bool,
}

/// `eta(X)`: zero-offset high-frequency sine features of a frozen random
/// network, scaled to Frobenius norm `rho`.
pub fn probe_perturbation(inputs: &Tensor, outputs: usize, probe: &ProbeConfig) -> Result<Tensor> {
    let gen = RegressionTargetGen {
        function: TargetKind::OffsetSine {
            frequency: SINE_FREQUENCY,
            offset: 0.0,
        },
        outputs,
        hidden: 64,
        seed: probe.seed,
    };
    let mut eta = gen.generate(inputs, 0)?;
    let norm = eta.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::invalid("probe perturbation vanished on these inputs"));
    }
    eta.scale(probe.rho / norm);
    Ok(eta)
}

fn checkpoints(steps: u64) -> Vec<u64> {
    let mut out = vec![0];
    let mut s = 1;
    while s < steps {
        out.push(s);
        s *= 2;
    }
    out.push(steps);
    out
}

/// Maps raw network outputs to the space the probe regresses in: identity,
/// or the expected value of each block of two-hot logits.
struct Readout<'a> {
    codec: Option<&'a TwoHotCodec>,
    atoms: Vec<f64>,
}

impl<'a> Readout<'a> {
    fn new(codec: Option<&'a TwoHotCodec>) -> Self {
        Self {
            codec,
            atoms: codec.map(|c| c.atoms()).unwrap_or_default(),
        }
    }

    fn width(&self, raw: usize) -> Result<usize> {
        match self.codec {
            None => Ok(raw),
            Some(c) if raw % c.num_atoms() == 0 => Ok(raw / c.num_atoms()),
            Some(c) => Err(Error::invalid(format!(
                "{raw} outputs do not split into blocks of {} atoms",
                c.num_atoms()
            ))),
        }
    }

    /// Readout values and, per value, the softmax of its block.
    fn read(&self, out: &Tensor) -> (Vec<f64>, Vec<Vec<f64>>) {
        if self.codec.is_none() {
            return (out.data().to_vec(), Vec::new());
        }
        let k = self.atoms.len();
        let probs: Vec<Vec<f64>> = out.data().chunks(k).map(softmax).collect();
        let values = probs
            .iter()
            .map(|p| p.iter().zip(&self.atoms).map(|(p, a)| p * a).sum())
            .collect();
        (values, probs)
    }

    /// Pulls `d loss / d value` back to the raw outputs.
    fn pull_back(&self, out: &Tensor, values: &[f64], probs: &[Vec<f64>], dv: &[f64]) -> Result<Tensor> {
        if self.codec.is_none() {
            return Tensor::new(out.shape().to_vec(), dv.to_vec());
        }
        let mut g = Vec::with_capacity(out.len());
        for ((p, q), d) in probs.iter().zip(values).zip(dv) {
            g.extend(p.iter().zip(&self.atoms).map(|(p, a)| d * p * (a - q)));
        }
        Tensor::new(out.shape().to_vec(), g)
    }
}

/// Trains a copy of `checkpoint` from a fresh optimizer on
/// `|| f(theta; X) - f(theta_k; X) + eta(X) ||^2` (summed over samples and
/// outputs), full batch, and reports the loss curve.
pub fn probe_plasticity(checkpoint: &Network, probe: &ProbeConfig, inputs: &Tensor) -> Result<ProbeResult> {
    run_probe(checkpoint, probe, inputs, Readout::new(None))
}

/// As [`probe_plasticity`] for a two-hot value head: `f` is the decoded
/// value of each block of logits, so the perturbation lives in value space.
pub fn probe_plasticity_decoded(
    checkpoint: &Network,
    codec: &TwoHotCodec,
    probe: &ProbeConfig,
    inputs: &Tensor,
) -> Result<ProbeResult> {
    run_probe(checkpoint, probe, inputs, Readout::new(Some(codec)))
}

fn run_probe(checkpoint: &Network, probe: &ProbeConfig, inputs: &Tensor, readout: Readout) -> Result<ProbeResult> {
    probe.validate()?;
    let mode = probe_mode(inputs.rows());
    let eta = probe_perturbation(inputs, readout.width(checkpoint.output_dim())?, probe)?;
    let (reference, _) = checkpoint.forward(inputs, mode)?;
    let target: Vec<f64> = readout.read(&reference).0.iter().zip(eta.data()).map(|(f, e)| f - e).collect();

    let mut net = checkpoint.clone();
    let mut opt = OptimizerState::new(probe.optimizer, net.params());
    let marks = checkpoints(probe.steps);
    let mut curve = Vec::with_capacity(marks.len());
    let mut loss = f64::NAN;
    for s in 0..=probe.steps {
        let (out, trace) = net.forward(inputs, mode)?;
        let (values, probs) = readout.read(&out);
        let resid: Vec<f64> = values.iter().zip(&target).map(|(o, t)| o - t).collect();
        loss = resid.iter().map(|r| r * r).sum();
        if marks.contains(&s) || !loss.is_finite() {
            curve.push((s, loss));
        }
        if !loss.is_finite() {
            return Ok(ProbeResult {
                initial_loss: curve[0].1,
                curve,
                final_loss: loss,
                diverged: true,
            });
        }
        if s == probe.steps {
            break;
        }
        net.update_running_stats(&trace);
        let dv: Vec<f64> = resid.iter().map(|r| 2.0 * r).collect();
        let grad = readout.pull_back(&out, &values, &probs, &dv)?;
        let grads = net.backward(&trace, &grad)?.params;
        if let Err(Error::NonFiniteGradient(_)) = opt.apply(net.params_mut(), &grads) {
            return Ok(ProbeResult {
                initial_loss: curve[0].1,
                curve,
                final_loss: f64::NAN,
                diverged: true,
            });
        }
    }
    Ok(ProbeResult {
        initial_loss: curve[0].1,
        curve,
        final_loss: loss,
        diverged: false,
    })
}
