//! Hidden-unit topology: which activation layers hold hidden units and which
//! weight layers feed into and read from them.

use super::network::{ForwardTrace, Network};
use super::spec::{ActivationKind, LayerSpec};

/// One activation layer whose outputs feed a later weight layer.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitLayer {
    /// Index of the activation layer.
    pub activation: usize,
    pub function: ActivationKind,
    pub input_offset: f64,
    /// Nearest dense/conv layer before the activation.
    pub incoming: Option<usize>,
    /// Nearest dense/conv layer after the activation.
    pub outgoing: Option<usize>,
    /// Units are features for flat inputs, channels for images.
    pub units: usize,
    /// Spatial positions per unit (1 for flat inputs).
    pub spatial: usize,
}

impl UnitLayer {
    /// Preactivations of `unit` over the batch (and spatial positions),
    /// including the activation's input offset.
    pub fn preactivations(&self, trace: &ForwardTrace, unit: usize) -> Vec<f64> {
        self.gather(trace.layer_input(self.activation).data(), trace.batch(), unit, self.input_offset)
    }

    /// Post-activation values of `unit`.
    pub fn activations(&self, trace: &ForwardTrace, unit: usize) -> Vec<f64> {
        self.gather(trace.layer_output(self.activation).data(), trace.batch(), unit, 0.0)
    }

    pub(crate) fn gather(&self, data: &[f64], batch: usize, unit: usize, offset: f64) -> Vec<f64> {
        let feats = self.units * self.spatial;
        let mut out = Vec::with_capacity(batch * self.spatial);
        for n in 0..batch {
            let base = n * feats + unit * self.spatial;
            out.extend(data[base..base + self.spatial].iter().map(|v| v + offset));
        }
        out
    }
}

impl Network {
    /// Activation layers that are followed by a weight layer, in order.
    pub fn unit_layers(&self) -> Vec<UnitLayer> {
        let layers = &self.spec().layers;
        let is_weight = |l: &LayerSpec| l.has_weights();
        let mut out = Vec::new();
        for (i, layer) in layers.iter().enumerate() {
            let LayerSpec::Activation {
                function,
                input_offset,
            } = *layer
            else {
                continue;
            };
            let outgoing = layers[i + 1..].iter().position(is_weight).map(|p| p + i + 1);
            if outgoing.is_none() {
                continue;
            }
            let incoming = layers[..i].iter().rposition(is_weight);
            let shape = self.boundary_shape(i);
            let (units, spatial) = if shape.len() == 3 {
                (shape[0], shape[1] * shape[2])
            } else {
                (shape.iter().product(), 1)
            };
            out.push(UnitLayer {
                activation: i,
                function,
                input_offset,
                incoming,
                outgoing,
                units,
                spatial,
            });
        }
        out
    }
}
