use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ForwardTrace, Network, Param};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerConfig {
    /// Coefficient `lambda` of the penalty `(lambda / 2) * ||W||^2` on weights.
    #[serde(default)]
    pub l2_coefficient: f64,
    /// Coefficient of the penalty `c * mean_n ||phi(x_n)||^2` on penultimate
    /// features.
    #[serde(default)]
    pub feature_norm_coefficient: f64,
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("l2_coefficient", self.l2_coefficient),
            ("feature_norm_coefficient", self.feature_norm_coefficient),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `g <- g + lambda * theta` for weight tensors. Biases and norm parameters
/// are exempt.
pub fn apply_l2(grads: &mut [Tensor], params: &[Param], lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    for (g, p) in grads.iter_mut().zip(params) {
        if p.role.is_weight() {
            g.data_mut()
                .iter_mut()
                .zip(p.value.data())
                .for_each(|(gi, th)| *gi += lambda * th);
        }
    }
}

/// Penalty on the features entering the head layer. Returns the penalty, the
/// boundary index where its gradient enters, and that gradient.
pub fn feature_norm_penalty(net: &Network, trace: &ForwardTrace, coefficient: f64) -> Option<(f64, usize, Tensor)> {
    if coefficient == 0.0 {
        return None;
    }
    let boundary = net.head_layer()?;
    let phi = trace.layer_input(boundary);
    let n = trace.batch() as f64;
    let penalty = coefficient * phi.sum_squares() / n;
    let grad = phi.map(|v| 2.0 * coefficient * v / n);
    Some((penalty, boundary, grad))
}
