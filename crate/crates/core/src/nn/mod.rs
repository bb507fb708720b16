//! Network engine: specs, parameters, forward/backward passes and losses.

mod activation;
mod conv;
pub mod loss;
pub mod network;
mod norm;
pub mod spec;
pub mod twohot;
mod units;

pub use loss::{accuracy, argmax, log_softmax, mse_loss, softmax, xent_loss};
pub use network::{BackwardOptions, ForwardTrace, Gradients, Mode, Network, Param, ParamRole, RunningStats};
pub use spec::{ActivationKind, InitScheme, LayerSpec, NetworkSpec, NormAxis, NormPlacement, Padding};
pub use twohot::TwoHotCodec;
pub use units::UnitLayer;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn init_network(spec: &NetworkSpec, seed: u64) -> Result<Network> {
    Network::init(spec, seed)
}

/// Gradient of one scalar output with respect to every parameter, for a
/// single input, using eval-mode statistics.
///
/// The flat vector concatenates parameter tensors in layer order (within a
/// layer: weight, bias, or gain, shift), each row-major; this is the same
/// order as [`Network::flat_params`].
pub fn per_sample_output_gradient(net: &Network, x: &[f64], output_index: usize) -> Result<Vec<f64>> {
    let out_dim = net.output_dim();
    if output_index >= out_dim {
        return Err(Error::invalid(format!(
            "output index {output_index} out of range for {out_dim} outputs"
        )));
    }
    let batch = Tensor::new(vec![1, x.len()], x.to_vec())?;
    let (_, trace) = net.forward(&batch, Mode::Eval)?;
    let mut seed = Tensor::zeros(&[1, out_dim]);
    seed.data_mut()[output_index] = 1.0;
    Ok(net.backward(&trace, &seed)?.flatten())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_linear_model_gradient_is_input() {
        let spec = NetworkSpec {
            input_shape: vec![4],
            layers: vec![LayerSpec::Dense {
                input: 4,
                output: 1,
                bias: false,
            }],
            init: InitScheme::FanInGaussian,
        };
        let net = init_network(&spec, 5).unwrap();
        let x = [0.5, -1.0, 2.0, 3.5];
        let g = per_sample_output_gradient(&net, &x, 0).unwrap();
        assert_eq!(g, x.to_vec());
        assert_eq!(g, per_sample_output_gradient(&net, &x, 0).unwrap());
        assert!(per_sample_output_gradient(&net, &x, 1).is_err());
    }

    #[test]
    fn matches_finite_difference_jacobian_column() {
        let spec = NetworkSpec::mlp(3, &[5, 4], 2, ActivationKind::Tanh, NormPlacement::LayerNorm);
        let mut net = init_network(&spec, 9).unwrap();
        let x = [0.3, -0.8, 1.1];
        let g = per_sample_output_gradient(&net, &x, 1).unwrap();
        let theta = net.flat_params();
        let h = 1e-6;
        let batch = Tensor::new(vec![1, 3], x.to_vec()).unwrap();
        for i in 0..theta.len() {
            let mut t = theta.clone();
            t[i] += h;
            net.set_flat_params(&t).unwrap();
            let up = net.predict(&batch).unwrap().data()[1];
            t[i] -= 2.0 * h;
            net.set_flat_params(&t).unwrap();
            let down = net.predict(&batch).unwrap().data()[1];
            assert!(((up - down) / (2.0 * h) - g[i]).abs() < 1e-6, "param {i}");
        }
    }
}
