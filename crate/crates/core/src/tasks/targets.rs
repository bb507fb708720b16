use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ActivationKind, Network, NetworkSpec, NormPlacement};
use crate::rng::{derive_seed, Stream};
use crate::tensor::Tensor;

/// Frequency used for the high-frequency sine features.
pub const SINE_FREQUENCY: f64 = 1e5;

fn d_freq() -> f64 {
    SINE_FREQUENCY
}
fn d_outputs() -> usize {
    1
}
fn d_hidden() -> usize {
    64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetKind {
    /// `sin(M * f_rand(x)) + b`.
    OffsetSine {
        #[serde(default = "d_freq")]
        frequency: f64,
        offset: f64,
    },
    /// `c + alpha * f_rand(x) + sigma(x)` with `sigma` an independent
    /// zero-offset sine target.
    CenteredScaled { center: f64, scale: f64 },
    /// `y(x) + sin(t / period)` with `y` a fixed zero-offset sine target.
    MovingSine { period: f64 },
}

/// Targets computed from a frozen randomly initialized MLP `f_rand`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionTargetGen {
    pub function: TargetKind,
    #[serde(default = "d_outputs")]
    pub outputs: usize,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default)]
    pub seed: u64,
}

impl RegressionTargetGen {
    pub fn new(kind: TargetKind, seed: u64) -> Self {
        Self {
            function: kind,
            outputs: d_outputs(),
            hidden: d_hidden(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.outputs == 0 || self.hidden == 0 {
            return Err(Error::invalid("target network sizes must be positive"));
        }
        let ok = match self.function {
            TargetKind::OffsetSine { frequency, offset } => frequency >= 1.0 && offset.is_finite(),
            TargetKind::CenteredScaled { center, scale } => center.is_finite() && scale.is_finite(),
            TargetKind::MovingSine { period } => period.is_finite() && period > 0.0,
        };
        if !ok {
            return Err(Error::invalid(format!("invalid target generator {:?}", self.function)));
        }
        Ok(())
    }

    fn frozen(&self, input_dim: usize, index: u64) -> Result<Network> {
        let spec = NetworkSpec::mlp(
            input_dim,
            &[self.hidden],
            self.outputs,
            ActivationKind::Relu,
            NormPlacement::None,
        );
        Network::init(&spec, derive_seed(self.seed, Stream::Task, index))
    }

    fn sine(&self, inputs: &Tensor, index: u64, frequency: f64) -> Result<Tensor> {
        let f = self.frozen(inputs.row_len(), index)?.predict(inputs)?;
        Ok(f.map(|v| (frequency * v).sin()))
    }

    /// Targets for `inputs` at training step `step`; only the moving sine
    /// depends on the step.
    pub fn generate(&self, inputs: &Tensor, step: u64) -> Result<Tensor> {
        let out = match self.function {
            TargetKind::OffsetSine { frequency, offset } => self.sine(inputs, 0, frequency)?.map(|v| v + offset),
            TargetKind::CenteredScaled { center, scale } => {
                let f = self.frozen(inputs.row_len(), 0)?.predict(inputs)?;
                let sigma = self.sine(inputs, 1, SINE_FREQUENCY)?;
                let data = f
                    .data()
                    .iter()
                    .zip(sigma.data())
                    .map(|(a, s)| center + scale * a + s)
                    .collect();
                Tensor::from_parts(f.shape().to_vec(), data)
            }
            TargetKind::MovingSine { period } => {
                let shift = (step as f64 / period).sin();
                self.sine(inputs, 0, SINE_FREQUENCY)?.map(|v| v + shift)
            }
        };
        if !out.all_finite() {
            return Err(Error::NonFinite("regression targets".into()));
        }
        Ok(out)
    }
}

pub fn gen_regression_targets(gen: &RegressionTargetGen, inputs: &Tensor, step: u64) -> Result<Tensor> {
    gen.generate(inputs, step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn inputs(n: usize) -> Tensor {
        let mut rng = crate::rng::substream(1, Stream::Data, 7);
        let data = (0..n * 8).map(|_| rng.sample(StandardNormal)).collect();
        Tensor::new(vec![n, 8], data).unwrap()
    }

    #[test]
    fn zero_offset_sine_is_bounded() {
        let g = RegressionTargetGen::new(
            TargetKind::OffsetSine {
                frequency: SINE_FREQUENCY,
                offset: 0.0,
            },
            3,
        );
        let y = g.generate(&inputs(500), 0).unwrap();
        assert!(y.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn offset_mean_is_close_to_b() {
        let g = RegressionTargetGen::new(
            TargetKind::OffsetSine {
                frequency: SINE_FREQUENCY,
                offset: 32.0,
            },
            3,
        );
        let y = g.generate(&inputs(10_000), 0).unwrap();
        let mean = y.data().iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 32.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn moving_sine_starts_at_fixed_targets() {
        let x = inputs(50);
        let g = RegressionTargetGen::new(TargetKind::MovingSine { period: 20.0 }, 4);
        let base = g.sine(&x, 0, SINE_FREQUENCY).unwrap();
        assert_eq!(g.generate(&x, 0).unwrap(), base);
        let later = g.generate(&x, 31).unwrap();
        let shift = (31.0f64 / 20.0).sin();
        assert!(later.data().iter().zip(base.data()).all(|(a, b)| (a - b - shift).abs() < 1e-12));
    }
}
