use serde::Serialize;

use crate::nn::{softmax, ForwardTrace, LayerSpec, Network};
use crate::tensor::Tensor;

/// Preactivation statistics of one activation layer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerPreactStats {
    pub layer: usize,
    /// Per-feature mean and variance over the batch.
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Mean and variance over all entries of the layer.
    pub pooled_mean: f64,
    pub pooled_var: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PreactStats {
    pub layers: Vec<LayerPreactStats>,
}

/// Change of preactivation statistics against a reference, per layer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Drift {
    pub layer: usize,
    /// Mean over features of `|mu - mu_ref|`.
    pub mean_shift: f64,
    /// Mean over features of `|var - var_ref|`.
    pub var_shift: f64,
}

pub fn preactivation_stats(net: &Network, trace: &ForwardTrace) -> PreactStats {
    let mut layers = Vec::new();
    for (i, layer) in net.spec().layers.iter().enumerate() {
        let LayerSpec::Activation { input_offset, .. } = *layer else {
            continue;
        };
        let z = trace.layer_input(i);
        let (n, f) = (z.rows(), z.row_len());
        let mut mean = vec![0.0; f];
        for r in 0..n {
            mean.iter_mut().zip(z.row(r)).for_each(|(m, v)| *m += v + input_offset);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; f];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(z.row(r)).zip(&mean) {
                let d = v + input_offset - m;
                *s += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let total = (n * f) as f64;
        let pooled_mean = z.data().iter().map(|v| v + input_offset).sum::<f64>() / total;
        let pooled_var = z
            .data()
            .iter()
            .map(|v| (v + input_offset - pooled_mean).powi(2))
            .sum::<f64>()
            / total;
        layers.push(LayerPreactStats {
            layer: i,
            mean,
            var,
            pooled_mean,
            pooled_var,
        });
    }
    PreactStats { layers }
}

impl PreactStats {
    pub fn drift(&self, reference: &PreactStats) -> Vec<Drift> {
        self.layers
            .iter()
            .zip(&reference.layers)
            .map(|(a, b)| {
                let n = a.mean.len() as f64;
                Drift {
                    layer: a.layer,
                    mean_shift: a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).abs()).sum::<f64>() / n,
                    var_shift: a.var.iter().zip(&b.var).map(|(x, y)| (x - y).abs()).sum::<f64>() / n,
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamNorms {
    /// Frobenius norm of each parameter tensor, by name.
    pub tensors: Vec<(String, f64)>,
    /// Frobenius norm of all parameters of each parameterized layer.
    pub layers: Vec<(usize, f64)>,
    pub total: f64,
}

pub fn param_norms(net: &Network) -> ParamNorms {
    let tensors = net
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.value.frobenius_norm()))
        .collect();
    let layers: Vec<(usize, f64)> = (0..net.num_layers())
        .filter(|&l| !net.layer_param_indices(l).is_empty())
        .map(|l| {
            let sq: f64 = net
                .layer_param_indices(l)
                .iter()
                .map(|&p| net.params()[p].value.sum_squares())
                .sum();
            (l, sq.sqrt())
        })
        .collect();
    let total = layers.iter().map(|(_, n)| n * n).sum::<f64>().sqrt();
    ParamNorms { tensors, layers, total }
}

/// Mean entropy (nats) of the softmax distribution of each row.
pub fn predictive_entropy(logits: &Tensor) -> f64 {
    let n = logits.rows();
    let total: f64 = (0..n)
        .map(|r| {
            softmax(logits.row(r))
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.ln())
                .sum::<f64>()
        })
        .sum();
    total / n as f64
}
