use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::{ActivationKind, BackwardOptions, ForwardTrace, Mode, Network, UnitLayer};
use crate::tensor::Tensor;

const SATURATION: f64 = 3.0;
const ZOMBIE_REL_STD: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UnitStatus {
    pub preact_mean: f64,
    pub preact_var: f64,
    pub dead: bool,
    pub zombie: bool,
    pub saturated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerCensus {
    /// Index of the activation layer.
    pub layer: usize,
    pub function: ActivationKind,
    pub units: Vec<UnitStatus>,
    pub dead_fraction: f64,
    pub zombie_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UnitCensus {
    pub layers: Vec<LayerCensus>,
    pub dead_fraction: f64,
    pub zombie_fraction: f64,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

fn classify(function: ActivationKind, z: &[f64], zombie_std: f64) -> UnitStatus {
    let (preact_mean, preact_var) = mean_var(z);
    let all_pos = z.iter().all(|&v| v > 0.0);
    let all_neg = z.iter().all(|&v| v < 0.0);
    let (dead, zombie, saturated) = match function {
        ActivationKind::Relu => (z.iter().all(|&v| v <= 0.0), all_pos, false),
        ActivationKind::LeakyRelu(_) | ActivationKind::Abs => (false, all_pos || all_neg, false),
        ActivationKind::Identity => (false, true, false),
        ActivationKind::Tanh | ActivationKind::Gelu => {
            let saturated = z.iter().all(|v| v.abs() > SATURATION);
            let dead = function == ActivationKind::Gelu && z.iter().all(|&v| v < -SATURATION);
            let zombie = !dead && preact_var.sqrt() < zombie_std;
            (dead, zombie, saturated)
        }
    };
    UnitStatus {
        preact_mean,
        preact_var,
        dead,
        zombie,
        saturated,
    }
}

fn fraction(units: &[UnitStatus], f: impl Fn(&UnitStatus) -> bool) -> f64 {
    if units.is_empty() {
        0.0
    } else {
        units.iter().filter(|u| f(u)).count() as f64 / units.len() as f64
    }
}

/// Census over the hidden units seen in an existing trace.
pub fn census_from_trace(net: &Network, trace: &ForwardTrace) -> UnitCensus {
    let mut layers = Vec::new();
    let (mut dead, mut zombie, mut total) = (0usize, 0usize, 0usize);
    for ul in net.unit_layers() {
        let preacts: Vec<Vec<f64>> = (0..ul.units).map(|u| ul.preactivations(trace, u)).collect();
        let mut stds: Vec<f64> = preacts.iter().map(|z| mean_var(z).1.sqrt()).collect();
        stds.sort_by(f64::total_cmp);
        let median = stds[stds.len() / 2];
        let units: Vec<UnitStatus> = preacts
            .iter()
            .map(|z| classify(ul.function, z, ZOMBIE_REL_STD * median))
            .collect();
        dead += units.iter().filter(|u| u.dead).count();
        zombie += units.iter().filter(|u| u.zombie).count();
        total += units.len();
        layers.push(LayerCensus {
            layer: ul.activation,
            function: ul.function,
            dead_fraction: fraction(&units, |u| u.dead),
            zombie_fraction: fraction(&units, |u| u.zombie),
            units,
        });
    }
    let frac = |c: usize| if total == 0 { 0.0 } else { c as f64 / total as f64 };
    UnitCensus {
        layers,
        dead_fraction: frac(dead),
        zombie_fraction: frac(zombie),
    }
}

/// Forward mode used for probing: batch statistics when the batch allows it.
pub fn probe_mode(batch: usize) -> Mode {
    if batch >= 2 {
        Mode::Train
    } else {
        Mode::Eval
    }
}

/// Classifies every hidden unit over `probe`. ReLU: dead when all
/// preactivations are `<= 0`, zombie when all are `> 0`. Leaky ReLU and
/// abs: never dead, zombie when all preactivations share a strict sign.
/// Tanh and GeLU: saturated when every `|z| > 3`, zombie when the
/// preactivation std is under 5% of the layer median; GeLU units saturated
/// in the negative tail count as dead.
pub fn unit_census(net: &Network, probe: &Tensor) -> Result<UnitCensus> {
    if probe.is_empty() || probe.rows() == 0 {
        return Err(Error::invalid("unit census needs a non-empty probe batch"));
    }
    let (_, trace) = net.forward(probe, probe_mode(probe.rows()))?;
    Ok(census_from_trace(net, &trace))
}

/// Share of each activation layer's units whose slope is identical on every
/// probe input.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinearizationProbe {
    /// `(activation layer, fraction of constant-slope units)`.
    pub layers: Vec<(usize, f64)>,
}

impl LinearizationProbe {
    pub fn new(net: &Network, trace: &ForwardTrace) -> Self {
        let mut layers = Vec::new();
        for (i, layer) in net.spec().layers.iter().enumerate() {
            let crate::nn::LayerSpec::Activation {
                function,
                input_offset,
            } = *layer
            else {
                continue;
            };
            let z = trace.layer_input(i);
            let feats = z.row_len();
            let constant = (0..feats)
                .filter(|&f| {
                    let first = function.derivative(z.row(0)[f] + input_offset);
                    (1..trace.batch()).all(|n| function.derivative(z.row(n)[f] + input_offset) == first)
                })
                .count();
            layers.push((i, constant as f64 / feats as f64));
        }
        Self { layers }
    }

    pub fn fully_linearized(&self) -> bool {
        self.layers.iter().all(|&(_, f)| f == 1.0)
    }
}

/// Per-layer share of hidden units whose loss gradient with respect to the
/// preactivation has one strict sign over the whole batch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignmentCensus {
    pub layer: usize,
    pub positive_fraction: f64,
    pub negative_fraction: f64,
}

pub fn gradient_alignment_census(net: &Network, trace: &ForwardTrace, loss_grad: &Tensor) -> Result<Vec<AlignmentCensus>> {
    let grads = net.backward_with(
        trace,
        loss_grad,
        &BackwardOptions {
            record_layer_grads: true,
            ..Default::default()
        },
    )?;
    let layer_grads = grads.layer_inputs.unwrap();
    Ok(net
        .unit_layers()
        .iter()
        .map(|ul: &UnitLayer| {
            let g = layer_grads[ul.activation].data();
            let (mut pos, mut neg) = (0usize, 0usize);
            for u in 0..ul.units {
                let v = ul.gather(g, trace.batch(), u, 0.0);
                if v.iter().all(|&x| x > 0.0) {
                    pos += 1;
                } else if v.iter().all(|&x| x < 0.0) {
                    neg += 1;
                }
            }
            AlignmentCensus {
                layer: ul.activation,
                positive_fraction: pos as f64 / ul.units as f64,
                negative_fraction: neg as f64 / ul.units as f64,
            }
        })
        .collect())
}
