//! Declarative network descriptions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NORM_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

/// Elementwise nonlinearity.
///
/// GeLU uses the tanh approximation
/// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    /// Negative-side slope in `(0, 1)`.
    LeakyRelu(f64),
    Gelu,
    Tanh,
    Abs,
    Identity,
}

impl ActivationKind {
    /// Whether the He (variance `2 / fan_in`) gain applies to layers feeding
    /// this activation.
    pub fn is_relu_family(self) -> bool {
        matches!(self, Self::Relu | Self::LeakyRelu(_) | Self::Gelu)
    }

    /// True when the derivative is piecewise constant with a kink at zero.
    pub fn is_piecewise_linear(self) -> bool {
        matches!(self, Self::Relu | Self::LeakyRelu(_) | Self::Abs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    Same,
}

/// Axis along which a decomposed normalization computes its statistics.
/// `Batch` groups like batch norm (per feature, or per channel for image
/// features), `Feature` groups like layer norm (per sample).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormAxis {
    None,
    Batch,
    Feature,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    FanInGaussian,
    #[default]
    HeGaussian,
}

fn default_true() -> bool {
    true
}
fn default_eps() -> f64 {
    DEFAULT_NORM_EPS
}
fn default_momentum() -> f64 {
    DEFAULT_BN_MOMENTUM
}
fn default_stride() -> usize {
    1
}
fn default_padding() -> Padding {
    Padding::Valid
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default = "default_padding")]
        padding: Padding,
        #[serde(default = "default_true")]
        bias: bool,
    },
    Flatten,
    Activation {
        function: ActivationKind,
        #[serde(default)]
        input_offset: f64,
    },
    LayerNorm {
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_true")]
        affine: bool,
    },
    BatchNorm {
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
        #[serde(default = "default_true")]
        affine: bool,
    },
    DecomposedNorm {
        center: NormAxis,
        scale: NormAxis,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

impl LayerSpec {
    pub fn dense(input: usize, output: usize) -> Self {
        Self::Dense {
            input,
            output,
            bias: true,
        }
    }

    pub fn act(function: ActivationKind) -> Self {
        Self::Activation {
            function,
            input_offset: 0.0,
        }
    }

    pub fn layer_norm() -> Self {
        Self::LayerNorm {
            eps: DEFAULT_NORM_EPS,
            affine: true,
        }
    }

    pub fn batch_norm() -> Self {
        Self::BatchNorm {
            eps: DEFAULT_NORM_EPS,
            momentum: DEFAULT_BN_MOMENTUM,
            affine: true,
        }
    }

    pub fn has_weights(&self) -> bool {
        matches!(self, Self::Dense { .. } | Self::Conv2d { .. })
    }

    pub fn is_norm(&self) -> bool {
        matches!(
            self,
            Self::LayerNorm { .. } | Self::BatchNorm { .. } | Self::DecomposedNorm { .. }
        )
    }

    /// Per-sample output shape for a per-sample input shape.
    pub(crate) fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let err = |message: String| Error::LayerConfig {
            layer: index,
            message,
        };
        match *self {
            Self::Dense { input: i, output, .. } => {
                if i == 0 || output == 0 {
                    return Err(err("dense dimensions must be positive".into()));
                }
                if input != [i] {
                    return Err(err(format!("dense expects input [{i}], got {input:?}")));
                }
                Ok(vec![output])
            }
            Self::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(err("conv2d dimensions must be positive".into()));
                }
                let &[c, h, w] = input else {
                    return Err(err(format!("conv2d expects [C, H, W] input, got {input:?}")));
                };
                if c != in_channels {
                    return Err(err(format!("conv2d expects {in_channels} channels, got {c}")));
                }
                let geo = ConvGeometry::new(h, w, kernel, stride, padding)
                    .ok_or_else(|| err(format!("kernel {kernel} larger than input {h}x{w}")))?;
                Ok(vec![out_channels, geo.out_h, geo.out_w])
            }
            Self::Flatten => Ok(vec![input.iter().product()]),
            Self::Activation { function, input_offset } => {
                if let ActivationKind::LeakyRelu(slope) = function {
                    if !(slope > 0.0 && slope < 1.0) {
                        return Err(err(format!("leaky slope {slope} not in (0, 1)")));
                    }
                }
                if !input_offset.is_finite() {
                    return Err(err("activation offset must be finite".into()));
                }
                Ok(input.to_vec())
            }
            Self::LayerNorm { eps, .. } | Self::DecomposedNorm { eps, .. } => {
                if !(eps > 0.0) {
                    return Err(err(format!("eps {eps} must be positive")));
                }
                Ok(input.to_vec())
            }
            Self::BatchNorm { eps, momentum, .. } => {
                if !(eps > 0.0) {
                    return Err(err(format!("eps {eps} must be positive")));
                }
                if !(momentum > 0.0 && momentum < 1.0) {
                    return Err(err(format!("momentum {momentum} not in (0, 1)")));
                }
                Ok(input.to_vec())
            }
        }
    }
}

/// Output geometry of a direct convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(h: usize, w: usize, kernel: usize, stride: usize, padding: Padding) -> Option<Self> {
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Valid => {
                if kernel > h || kernel > w {
                    return None;
                }
                ((h - kernel) / stride + 1, (w - kernel) / stride + 1, 0, 0)
            }
            Padding::Same => {
                let oh = h.div_ceil(stride);
                let ow = w.div_ceil(stride);
                let pad_h = ((oh - 1) * stride + kernel).saturating_sub(h);
                let pad_w = ((ow - 1) * stride + kernel).saturating_sub(w);
                (oh, ow, pad_h / 2, pad_w / 2)
            }
        };
        Some(Self {
            in_h: h,
            in_w: w,
            kernel,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }
}

/// Ordered layer list plus input shape and initialization scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Per-sample input shape: `[d]` for vectors, `[C, H, W]` for images.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub init: InitScheme,
}

/// Where normalization layers go in [`NetworkSpec::mlp`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormPlacement {
    #[default]
    None,
    /// Layer norm before each nonlinearity.
    LayerNorm,
    BatchNorm,
    /// Layer norm followed by batch norm.
    Both,
}

impl NetworkSpec {
    /// Fully connected network: `hidden.len()` hidden layers, optional
    /// normalization applied to preactivations, linear output head.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: ActivationKind,
        norm: NormPlacement,
    ) -> Self {
        let mut layers = Vec::new();
        let mut width = input;
        for &h in hidden {
            layers.push(LayerSpec::dense(width, h));
            match norm {
                NormPlacement::None => {}
                NormPlacement::LayerNorm => layers.push(LayerSpec::layer_norm()),
                NormPlacement::BatchNorm => layers.push(LayerSpec::batch_norm()),
                NormPlacement::Both => {
                    layers.push(LayerSpec::layer_norm());
                    layers.push(LayerSpec::batch_norm());
                }
            }
            layers.push(LayerSpec::act(activation));
            width = h;
        }
        layers.push(LayerSpec::dense(width, output));
        Self {
            input_shape: vec![input],
            layers,
            init: InitScheme::HeGaussian,
        }
    }

    /// `conv_layers` 3x3 same-padded convolutions (stride 2 on every other
    /// layer) followed by two fully connected layers.
    pub fn cnn(
        input_shape: [usize; 3],
        channels: usize,
        conv_layers: usize,
        fc_width: usize,
        output: usize,
        activation: ActivationKind,
        norm: NormPlacement,
    ) -> Self {
        let [c0, mut h, mut w] = input_shape;
        let mut layers = Vec::new();
        let mut c = c0;
        let push_norm = |layers: &mut Vec<LayerSpec>| match norm {
            NormPlacement::None => {}
            NormPlacement::LayerNorm => layers.push(LayerSpec::layer_norm()),
            NormPlacement::BatchNorm => layers.push(LayerSpec::batch_norm()),
            NormPlacement::Both => {
                layers.push(LayerSpec::layer_norm());
                layers.push(LayerSpec::batch_norm());
            }
        };
        for i in 0..conv_layers {
            let stride = if i % 2 == 1 { 2 } else { 1 };
            layers.push(LayerSpec::Conv2d {
                in_channels: c,
                out_channels: channels,
                kernel: 3,
                stride,
                padding: Padding::Same,
                bias: true,
            });
            h = h.div_ceil(stride);
            w = w.div_ceil(stride);
            c = channels;
            push_norm(&mut layers);
            layers.push(LayerSpec::act(activation));
        }
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::dense(c * h * w, fc_width));
        push_norm(&mut layers);
        layers.push(LayerSpec::act(activation));
        layers.push(LayerSpec::dense(fc_width, output));
        Self {
            input_shape: input_shape.to_vec(),
            layers,
            init: InitScheme::HeGaussian,
        }
    }

    /// Per-sample shapes at every layer boundary; entry `i` is the input of
    /// layer `i`, the last entry is the network output.
    pub fn boundary_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::invalid(format!("bad input shape {:?}", self.input_shape)));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer.output_shape(i, shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.boundary_shapes().map(|_| ())
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_dim(&self) -> Result<usize> {
        Ok(self.boundary_shapes()?.last().unwrap().iter().product())
    }
}
