use serde::{Deserialize, Serialize};

use super::optimizer::OptimizerState;
use crate::error::{Error, Result};
use crate::nn::network::gaussian;
use crate::nn::{ForwardTrace, LayerSpec, Network, ParamRole, UnitLayer};
use crate::rng::Rng;

fn d_tau() -> f64 {
    0.1
}
fn d_interval() -> u64 {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResetPolicy {
    #[serde(default = "d_tau")]
    pub redo_threshold: f64,
    /// Steps between ReDO passes; `None` disables ReDO.
    #[serde(default)]
    pub redo_interval: Option<u64>,
    #[serde(default)]
    pub rescale_to_init: bool,
    #[serde(default = "d_interval")]
    pub rescale_interval: u64,
    /// Zero the optimizer moments whenever a new task starts.
    #[serde(default)]
    pub reset_optimizer_on_switch: bool,
}

impl Default for ResetPolicy {
    fn default() -> Self {
        Self {
            redo_threshold: d_tau(),
            redo_interval: None,
            rescale_to_init: false,
            rescale_interval: d_interval(),
            reset_optimizer_on_switch: false,
        }
    }
}

impl ResetPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.redo_threshold.is_finite() && self.redo_threshold >= 0.0) {
            return Err(Error::invalid(format!("redo_threshold {} must be >= 0", self.redo_threshold)));
        }
        if self.redo_interval == Some(0) || self.rescale_interval == 0 {
            return Err(Error::invalid("reset intervals must be >= 1"));
        }
        Ok(())
    }
}

/// Outcome of [`rescale_weights_to_init`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RescaleReport {
    /// `(layer, factor)` for every rescaled weight tensor.
    pub scaled: Vec<(usize, f64)>,
    /// Layers skipped because their weight norm had collapsed below 1e-12.
    pub skipped: Vec<usize>,
}

/// Scales each weight tensor so its Frobenius norm equals its value at
/// initialization. Directions are preserved.
pub fn rescale_weights_to_init(net: &mut Network) -> RescaleReport {
    let mut report = RescaleReport::default();
    let targets: Vec<(usize, f64)> = net
        .init_layer_norms()
        .iter()
        .enumerate()
        .filter_map(|(l, n)| n.map(|n| (l, n)))
        .collect();
    for (layer, target) in targets {
        let Some(w) = net.weight_index(layer) else { continue };
        let value = &mut net.params_mut()[w].value;
        let now = value.frobenius_norm();
        if now < 1e-12 {
            log::warn!("layer {layer}: weight norm {now:e} too small to rescale, skipped");
            report.skipped.push(layer);
            continue;
        }
        let factor = target / now;
        value.scale(factor);
        report.scaled.push((layer, factor));
    }
    report
}

/// Mean absolute activation of each hidden unit over a probe batch.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitActivity {
    pub layer: UnitLayer,
    pub mean_abs: Vec<f64>,
}

impl UnitActivity {
    /// `s_i = mean|a_i| / mean_j mean|a_j|`, with 0/0 read as 0.
    pub fn scores(&self) -> Vec<f64> {
        let avg = self.mean_abs.iter().sum::<f64>() / self.mean_abs.len() as f64;
        self.mean_abs
            .iter()
            .map(|&m| if avg > 0.0 { m / avg } else { 0.0 })
            .collect()
    }
}

pub fn unit_activity(net: &Network, trace: &ForwardTrace) -> Vec<UnitActivity> {
    net.unit_layers()
        .into_iter()
        .map(|layer| {
            let mean_abs = (0..layer.units)
                .map(|u| {
                    let a = layer.activations(trace, u);
                    a.iter().map(|v| v.abs()).sum::<f64>() / a.len() as f64
                })
                .collect();
            UnitActivity { layer, mean_abs }
        })
        .collect()
}

fn zero_moments(opt: &mut Option<&mut OptimizerState>, param: usize, range: std::ops::Range<usize>) {
    if let Some(state) = opt {
        state.first_moment[param].data_mut()[range.clone()].fill(0.0);
        state.second_moment[param].data_mut()[range].fill(0.0);
    }
}

/// ReDO: every unit with score `<= tau` gets its incoming weights redrawn
/// from the init distribution, its bias and any per-unit norm parameters
/// reset, and its outgoing weights zeroed. Matching optimizer moment slices
/// are zeroed. Returns the number of units reset.
pub fn redo_reset(
    net: &mut Network,
    activity: &[UnitActivity],
    mut opt: Option<&mut OptimizerState>,
    tau: f64,
    rng: &mut Rng,
) -> Result<usize> {
    let mut count = 0;
    for act in activity {
        let layer = &act.layer;
        let LayerSpec::Activation { .. } = net.spec().layers[layer.activation] else {
            return Err(Error::invalid(format!("layer {} is not an activation", layer.activation)));
        };
        for (unit, score) in act.scores().into_iter().enumerate() {
            if score > tau {
                continue;
            }
            count += 1;
            if let Some(inc) = layer.incoming {
                reset_incoming(net, &mut opt, inc, unit, rng);
                for norm in inc + 1..layer.activation {
                    reset_norm_unit(net, &mut opt, norm, unit, layer.spatial);
                }
            }
            if let Some(out) = layer.outgoing {
                zero_outgoing(net, &mut opt, out, unit, layer.spatial);
            }
        }
    }
    Ok(count)
}

fn reset_incoming(net: &mut Network, opt: &mut Option<&mut OptimizerState>, layer: usize, unit: usize, rng: &mut Rng) {
    let std = net.init_std(layer);
    let w = net.weight_index(layer).unwrap();
    let shape = net.params()[w].value.shape().to_vec();
    let fan: usize = shape[1..].iter().product();
    let fresh = gaussian(&[fan], std, rng);
    let range = unit * fan..(unit + 1) * fan;
    net.params_mut()[w].value.data_mut()[range.clone()].copy_from_slice(fresh.data());
    zero_moments(opt, w, range);
    if let Some(b) = net.bias_index(layer) {
        net.params_mut()[b].value.data_mut()[unit] = 0.0;
        zero_moments(opt, b, unit..unit + 1);
    }
}

fn reset_norm_unit(net: &mut Network, opt: &mut Option<&mut OptimizerState>, layer: usize, unit: usize, spatial: usize) {
    let range = match net.spec().layers[layer] {
        LayerSpec::LayerNorm { .. } => unit * spatial..(unit + 1) * spatial,
        LayerSpec::BatchNorm { .. } => {
            if let Some(stats) = net.buffers_mut()[layer].as_mut() {
                stats.mean[unit] = 0.0;
                stats.var[unit] = 1.0;
            }
            unit..unit + 1
        }
        _ => return,
    };
    let idx = net.layer_param_indices(layer).to_vec();
    for p in idx {
        let fill = if net.params()[p].role == ParamRole::Gain { 1.0 } else { 0.0 };
        net.params_mut()[p].value.data_mut()[range.clone()].fill(fill);
        zero_moments(opt, p, range.clone());
    }
}

fn zero_outgoing(net: &mut Network, opt: &mut Option<&mut OptimizerState>, layer: usize, unit: usize, spatial: usize) {
    let w = net.weight_index(layer).unwrap();
    let shape = net.params()[w].value.shape().to_vec();
    let ranges: Vec<std::ops::Range<usize>> = match net.spec().layers[layer] {
        LayerSpec::Dense { input, output, .. } => (0..output)
            .map(|o| o * input + unit * spatial..o * input + (unit + 1) * spatial)
            .collect(),
        LayerSpec::Conv2d { .. } => {
            let (cin, kk) = (shape[1], shape[2] * shape[3]);
            (0..shape[0])
                .map(|o| (o * cin + unit) * kk..(o * cin + unit + 1) * kk)
                .collect()
        }
        _ => unreachable!("outgoing layer must hold weights"),
    };
    for r in ranges {
        net.params_mut()[w].value.data_mut()[r.clone()].fill(0.0);
        zero_moments(opt, w, r);
    }
}
