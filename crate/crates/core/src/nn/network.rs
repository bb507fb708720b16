//! Instantiated networks: parameters, forward traces and reverse-mode
//! gradients.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::conv::{self, ConvDims};
use super::norm::{self, Grouping, Layout, NormCache};
use super::spec::{ConvGeometry, InitScheme, LayerSpec, NetworkSpec, NormAxis};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    Gain,
    Shift,
}

impl ParamRole {
    /// Weights are the only parameters subject to L2 and rescaling.
    pub fn is_weight(self) -> bool {
        self == ParamRole::Weight
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub layer: usize,
    pub role: ParamRole,
    pub value: Tensor,
}

/// Batch-norm running statistics, one entry per unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    shapes: Vec<Vec<usize>>,
    params: Vec<Param>,
    layer_params: Vec<Vec<usize>>,
    buffers: Vec<Option<RunningStats>>,
    init_layer_norms: Vec<Option<f64>>,
}

#[derive(Clone, Debug)]
enum LayerCache {
    None,
    Norm {
        cache: NormCache,
        /// Batch-norm unit statistics for the running-average update.
        batch_stats: Option<(Vec<f64>, Vec<f64>)>,
    },
    FixedNorm {
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

/// Everything one forward pass computed, as needed by [`Network::backward`]
/// and the diagnostics.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    mode: Mode,
    batch: usize,
    /// `activations[i]` is the input of layer `i`; the last entry is the
    /// network output.
    activations: Vec<Tensor>,
    caches: Vec<LayerCache>,
}

impl ForwardTrace {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn num_layers(&self) -> usize {
        self.caches.len()
    }

    pub fn layer_input(&self, layer: usize) -> &Tensor {
        &self.activations[layer]
    }

    pub fn layer_output(&self, layer: usize) -> &Tensor {
        &self.activations[layer + 1]
    }

    pub fn output(&self) -> &Tensor {
        self.activations.last().unwrap()
    }
}

/// Parameter gradients aligned with [`Network::params`], plus the gradient
/// with respect to the network input.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<Tensor>,
    pub input: Tensor,
    /// Gradient with respect to each layer's input, when requested.
    pub layer_inputs: Option<Vec<Tensor>>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        let n = self.params.iter().map(Tensor::len).sum();
        let mut out = Vec::with_capacity(n);
        for g in &self.params {
            out.extend_from_slice(g.data());
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
pub struct BackwardOptions<'a> {
    /// Extra gradient added at a layer boundary (index into the activation
    /// list), e.g. from a penalty on intermediate features.
    pub injections: Vec<(usize, &'a Tensor)>,
    pub record_layer_grads: bool,
}

fn norm_layout(shape: &[usize], batch: usize) -> Layout {
    let features: usize = shape.iter().product();
    let spatial = if shape.len() == 3 { shape[1] * shape[2] } else { 1 };
    Layout {
        batch,
        features,
        spatial,
    }
}

fn axis_grouping(axis: NormAxis) -> Option<Grouping> {
    match axis {
        NormAxis::None => None,
        NormAxis::Batch => Some(Grouping::Unit),
        NormAxis::Feature => Some(Grouping::Sample),
    }
}

impl Network {
    /// Builds a network with freshly initialized parameters. Weights are
    /// drawn from `N(0, gain / fan_in)` with `gain = 2` for layers feeding a
    /// ReLU-family activation under [`InitScheme::HeGaussian`] and `gain = 1`
    /// otherwise; biases and shifts start at zero, gains at one.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let shapes = spec.boundary_shapes()?;
        let mut params = Vec::new();
        let mut layer_params = Vec::with_capacity(spec.layers.len());
        let mut buffers = Vec::with_capacity(spec.layers.len());
        let mut init_layer_norms = Vec::with_capacity(spec.layers.len());

        for (i, layer) in spec.layers.iter().enumerate() {
            let mut idx = Vec::new();
            let mut push = |role: ParamRole, value: Tensor, params: &mut Vec<Param>| {
                let suffix = match role {
                    ParamRole::Weight => "weight",
                    ParamRole::Bias => "bias",
                    ParamRole::Gain => "gain",
                    ParamRole::Shift => "shift",
                };
                idx.push(params.len());
                params.push(Param {
                    name: format!("layer{i}.{suffix}"),
                    layer: i,
                    role,
                    value,
                });
            };
            let mut buffer = None;
            let mut init_norm = None;
            match *layer {
                LayerSpec::Dense { input, output, bias } => {
                    let mut rng = rng::substream(seed, Stream::Init, i as u64);
                    let w = gaussian(&[output, input], init_std(spec, i), &mut rng);
                    init_norm = Some(w.frobenius_norm());
                    push(ParamRole::Weight, w, &mut params);
                    if bias {
                        push(ParamRole::Bias, Tensor::zeros(&[output]), &mut params);
                    }
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    bias,
                    ..
                } => {
                    let mut rng = rng::substream(seed, Stream::Init, i as u64);
                    let w = gaussian(&[out_channels, in_channels, kernel, kernel], init_std(spec, i), &mut rng);
                    init_norm = Some(w.frobenius_norm());
                    push(ParamRole::Weight, w, &mut params);
                    if bias {
                        push(ParamRole::Bias, Tensor::zeros(&[out_channels]), &mut params);
                    }
                }
                LayerSpec::LayerNorm { affine, .. } => {
                    let f: usize = shapes[i].iter().product();
                    if affine {
                        push(ParamRole::Gain, Tensor::full(&[f], 1.0), &mut params);
                        push(ParamRole::Shift, Tensor::zeros(&[f]), &mut params);
                    }
                }
                LayerSpec::BatchNorm { affine, .. } => {
                    let units = norm_layout(&shapes[i], 1).units();
                    if affine {
                        push(ParamRole::Gain, Tensor::full(&[units], 1.0), &mut params);
                        push(ParamRole::Shift, Tensor::zeros(&[units]), &mut params);
                    }
                    buffer = Some(RunningStats {
                        mean: vec![0.0; units],
                        var: vec![1.0; units],
                    });
                }
                LayerSpec::Flatten | LayerSpec::Activation { .. } | LayerSpec::DecomposedNorm { .. } => {}
            }
            layer_params.push(idx);
            buffers.push(buffer);
            init_layer_norms.push(init_norm);
        }

        Ok(Self {
            spec: spec.clone(),
            shapes,
            params,
            layer_params,
            buffers,
            init_layer_norms,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn num_layers(&self) -> usize {
        self.spec.layers.len()
    }

    /// Per-sample shape at each layer boundary.
    pub fn boundary_shape(&self, boundary: usize) -> &[usize] {
        &self.shapes[boundary]
    }

    pub fn input_dim(&self) -> usize {
        self.shapes[0].iter().product()
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().unwrap().iter().product()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Indices into [`Network::params`] owned by a layer.
    pub fn layer_param_indices(&self, layer: usize) -> &[usize] {
        &self.layer_params[layer]
    }

    /// Index of the weight parameter of a dense/conv layer.
    pub fn weight_index(&self, layer: usize) -> Option<usize> {
        self.layer_params[layer]
            .iter()
            .copied()
            .find(|&p| self.params[p].role == ParamRole::Weight)
    }

    pub fn bias_index(&self, layer: usize) -> Option<usize> {
        self.layer_params[layer]
            .iter()
            .copied()
            .find(|&p| self.params[p].role == ParamRole::Bias)
    }

    pub fn buffers(&self) -> &[Option<RunningStats>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Option<RunningStats>] {
        &mut self.buffers
    }

    /// Frobenius norm of each weight tensor at initialization (`None` for
    /// layers without weights).
    pub fn init_layer_norms(&self) -> &[Option<f64>] {
        &self.init_layer_norms
    }

    /// Standard deviation of the initialization distribution for the weights
    /// of `layer`.
    pub fn init_std(&self, layer: usize) -> f64 {
        init_std(&self.spec, layer)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// All parameters concatenated in layer order, each tensor row-major.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for p in &self.params {
            out.extend_from_slice(p.value.data());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.num_scalars(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Rebuilds a network from stored parameters and buffers.
    pub fn from_parts(
        spec: NetworkSpec,
        params: Vec<Tensor>,
        buffers: Vec<Option<RunningStats>>,
        init_layer_norms: Vec<Option<f64>>,
    ) -> Result<Self> {
        let mut net = Self::init(&spec, 0)?;
        if params.len() != net.params.len() {
            return Err(Error::invalid(format!(
                "spec has {} parameter tensors, got {}",
                net.params.len(),
                params.len()
            )));
        }
        for (slot, value) in net.params.iter_mut().zip(params) {
            if slot.value.shape() != value.shape() {
                return Err(Error::shape(
                    slot.layer,
                    format!("{} expects {:?}, got {:?}", slot.name, slot.value.shape(), value.shape()),
                ));
            }
            slot.value = value;
        }
        if buffers.len() != net.buffers.len()
            || buffers.iter().zip(&net.buffers).any(|(a, b)| {
                a.as_ref().map(|s| s.mean.len()) != b.as_ref().map(|s| s.mean.len())
                    || a.as_ref().map(|s| s.var.len()) != b.as_ref().map(|s| s.var.len())
            })
        {
            return Err(Error::invalid("buffer layout does not match spec"));
        }
        if init_layer_norms.len() != net.init_layer_norms.len() {
            return Err(Error::invalid("init norm list does not match spec"));
        }
        net.buffers = buffers;
        net.init_layer_norms = init_layer_norms;
        Ok(net)
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        if x.shape().is_empty() || x.rows() == 0 {
            return Err(Error::shape(None, "batch must have a leading dimension >= 1"));
        }
        if x.row_len() != self.input_dim() {
            return Err(Error::shape(
                0,
                format!("input has {} features per sample, network expects {:?}", x.row_len(), self.shapes[0]),
            ));
        }
        Ok(x.rows())
    }

    /// Forward pass. Pure in both modes: train mode normalizes with batch
    /// statistics but leaves running statistics untouched (see
    /// [`Network::forward_train`]).
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, ForwardTrace)> {
        let batch = self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        let mut caches = Vec::with_capacity(self.num_layers());
        let mut shape0 = vec![batch];
        shape0.extend_from_slice(&self.shapes[0]);
        activations.push(Tensor::from_parts(shape0, x.data().to_vec()));

        for (i, layer) in self.spec.layers.iter().enumerate() {
            let input = activations.last().unwrap();
            let in_shape = &self.shapes[i];
            let mut out_shape = vec![batch];
            out_shape.extend_from_slice(&self.shapes[i + 1]);
            let (data, cache) = match *layer {
                LayerSpec::Dense { input: din, output, .. } => {
                    let w = &self.params[self.weight_index(i).unwrap()].value;
                    let mut y = vec![0.0; batch * output];
                    gemm(false, true, batch, din, output, input.data(), w.data(), 0.0, &mut y);
                    if let Some(b) = self.bias_index(i) {
                        let b = self.params[b].value.data();
                        for row in y.chunks_mut(output) {
                            row.iter_mut().zip(b).for_each(|(v, bv)| *v += bv);
                        }
                    }
                    (y, LayerCache::None)
                }
                LayerSpec::Conv2d { .. } => {
                    let dims = self.conv_dims(i);
                    let w = &self.params[self.weight_index(i).unwrap()].value;
                    let b = self.bias_index(i).map(|b| self.params[b].value.data());
                    (conv::forward(input.data(), batch, &dims, w.data(), b), LayerCache::None)
                }
                LayerSpec::Flatten => (input.data().to_vec(), LayerCache::None),
                LayerSpec::Activation { function, input_offset } => (
                    input.data().iter().map(|&z| function.apply(z + input_offset)).collect(),
                    LayerCache::None,
                ),
                LayerSpec::LayerNorm { eps, affine } => {
                    let layout = norm_layout(in_shape, batch);
                    let cache = norm::normalize(
                        input.data(),
                        layout,
                        Some(Grouping::Sample),
                        Some(Grouping::Sample),
                        eps,
                    );
                    let mut y = cache.normalized.clone();
                    if affine {
                        self.apply_affine(i, &mut y, layout, false);
                    }
                    (y, LayerCache::Norm { cache, batch_stats: None })
                }
                LayerSpec::BatchNorm { eps, affine, .. } => {
                    let layout = norm_layout(in_shape, batch);
                    match mode {
                        Mode::Train => {
                            if batch < 2 {
                                return Err(Error::shape(i, "batch norm in train mode needs a batch of at least 2"));
                            }
                            let cache = norm::normalize(
                                input.data(),
                                layout,
                                Some(Grouping::Unit),
                                Some(Grouping::Unit),
                                eps,
                            );
                            let stats = norm::group_stats(input.data(), layout, Grouping::Unit);
                            let mut y = cache.normalized.clone();
                            if affine {
                                self.apply_affine(i, &mut y, layout, true);
                            }
                            (
                                y,
                                LayerCache::Norm {
                                    cache,
                                    batch_stats: Some(stats),
                                },
                            )
                        }
                        Mode::Eval => {
                            let stats = self.buffers[i].as_ref().unwrap();
                            let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                            let mut normalized = input.data().to_vec();
                            for row in normalized.chunks_mut(layout.features) {
                                for (f, v) in row.iter_mut().enumerate() {
                                    let u = f / layout.spatial;
                                    *v = (*v - stats.mean[u]) * inv_std[u];
                                }
                            }
                            let mut y = normalized.clone();
                            if affine {
                                self.apply_affine(i, &mut y, layout, true);
                            }
                            (y, LayerCache::FixedNorm { normalized, inv_std })
                        }
                    }
                }
                LayerSpec::DecomposedNorm { center, scale, eps } => {
                    if batch < 2 && (center == NormAxis::Batch || scale == NormAxis::Batch) {
                        return Err(Error::shape(i, "batch-axis normalization needs a batch of at least 2"));
                    }
                    let layout = norm_layout(in_shape, batch);
                    let cache = norm::normalize(input.data(), layout, axis_grouping(center), axis_grouping(scale), eps);
                    (cache.normalized.clone(), LayerCache::Norm { cache, batch_stats: None })
                }
            };
            activations.push(Tensor::from_parts(out_shape, data));
            caches.push(cache);
        }

        let output = activations.last().unwrap().clone();
        Ok((
            output,
            ForwardTrace {
                mode,
                batch,
                activations,
                caches,
            },
        ))
    }

    /// Train-mode forward pass that also folds batch statistics into the
    /// batch-norm running averages:
    /// `running <- (1 - momentum) * running + momentum * batch_stat`.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, ForwardTrace)> {
        let (out, trace) = self.forward(x, Mode::Train)?;
        self.update_running_stats(&trace);
        Ok((out, trace))
    }

    pub fn update_running_stats(&mut self, trace: &ForwardTrace) {
        if trace.mode != Mode::Train {
            return;
        }
        for (i, cache) in trace.caches.iter().enumerate() {
            if let (LayerCache::Norm {
                batch_stats: Some((mean, var)),
                ..
            }, LayerSpec::BatchNorm { momentum, .. }) = (cache, &self.spec.layers[i])
            {
                let running = self.buffers[i].as_mut().unwrap();
                for (r, b) in running.mean.iter_mut().zip(mean) {
                    *r = (1.0 - momentum) * *r + momentum * b;
                }
                for (r, b) in running.var.iter_mut().zip(var) {
                    *r = (1.0 - momentum) * *r + momentum * b;
                }
            }
        }
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x, Mode::Eval)?.0)
    }

    fn conv_dims(&self, layer: usize) -> ConvDims {
        let LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            ..
        } = self.spec.layers[layer]
        else {
            unreachable!("conv_dims on non-conv layer")
        };
        let s = &self.shapes[layer];
        ConvDims {
            in_channels,
            out_channels,
            geo: ConvGeometry::new(s[1], s[2], kernel, stride, padding).unwrap(),
        }
    }

    fn apply_affine(&self, layer: usize, y: &mut [f64], layout: Layout, per_unit: bool) {
        let idx = &self.layer_params[layer];
        let gain = self.params[idx[0]].value.data();
        let shift = self.params[idx[1]].value.data();
        for row in y.chunks_mut(layout.features) {
            for (f, v) in row.iter_mut().enumerate() {
                let k = if per_unit { f / layout.spatial } else { f };
                *v = gain[k] * *v + shift[k];
            }
        }
    }

    pub fn backward(&self, trace: &ForwardTrace, output_grad: &Tensor) -> Result<Gradients> {
        self.backward_with(trace, output_grad, &BackwardOptions::default())
    }

    /// Reverse-mode pass over a trace produced by [`Network::forward`] on
    /// this network.
    pub fn backward_with(
        &self,
        trace: &ForwardTrace,
        output_grad: &Tensor,
        opts: &BackwardOptions<'_>,
    ) -> Result<Gradients> {
        if trace.caches.len() != self.num_layers() {
            return Err(Error::invalid(format!(
                "trace has {} layers, network has {}",
                trace.caches.len(),
                self.num_layers()
            )));
        }
        for (b, act) in trace.activations.iter().enumerate() {
            if act.row_len() != self.shapes[b].iter().product::<usize>() {
                return Err(Error::shape(b.min(self.num_layers().saturating_sub(1)), "trace does not match network"));
            }
        }
        let batch = trace.batch;
        if output_grad.len() != trace.output().len() {
            return Err(Error::shape(
                self.num_layers() - 1,
                format!("output gradient shape {:?} vs output {:?}", output_grad.shape(), trace.output().shape()),
            ));
        }

        let mut param_grads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        let mut layer_grads: Vec<Tensor> = Vec::new();
        let mut grad = output_grad.data().to_vec();
        let inject = |boundary: usize, grad: &mut Vec<f64>| {
            for (b, extra) in &opts.injections {
                if *b == boundary {
                    grad.iter_mut().zip(extra.data()).for_each(|(g, e)| *g += e);
                }
            }
        };
        inject(self.num_layers(), &mut grad);

        for i in (0..self.num_layers()).rev() {
            let x = trace.activations[i].data();
            let in_shape = &self.shapes[i];
            let dx = match (&self.spec.layers[i], &trace.caches[i]) {
                (&LayerSpec::Dense { input, output, .. }, _) => {
                    let wi = self.weight_index(i).unwrap();
                    gemm(true, false, output, batch, input, &grad, x, 1.0, param_grads[wi].data_mut());
                    if let Some(bi) = self.bias_index(i) {
                        let db = param_grads[bi].data_mut();
                        for row in grad.chunks(output) {
                            db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                        }
                    }
                    let mut dx = vec![0.0; batch * input];
                    gemm(false, false, batch, output, input, &grad, self.params[wi].value.data(), 0.0, &mut dx);
                    dx
                }
                (LayerSpec::Conv2d { .. }, _) => {
                    let dims = self.conv_dims(i);
                    let wi = self.weight_index(i).unwrap();
                    let (dx, dw, db) = conv::backward(x, batch, &dims, self.params[wi].value.data(), &grad);
                    param_grads[wi].data_mut().iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
                    if let Some(bi) = self.bias_index(i) {
                        param_grads[bi].data_mut().iter_mut().zip(&db).for_each(|(a, b)| *a += b);
                    }
                    dx
                }
                (LayerSpec::Flatten, _) => grad.clone(),
                (&LayerSpec::Activation { function, input_offset }, _) => x
                    .iter()
                    .zip(&grad)
                    .map(|(&z, &g)| g * function.derivative(z + input_offset))
                    .collect(),
                (&LayerSpec::LayerNorm { affine, .. }, LayerCache::Norm { cache, .. }) => {
                    let layout = norm_layout(in_shape, batch);
                    let dn = self.affine_backward(i, affine, false, layout, &cache.normalized, &grad, &mut param_grads);
                    norm::normalize_backward(x, layout, cache, &dn)
                }
                (&LayerSpec::BatchNorm { affine, .. }, LayerCache::Norm { cache, .. }) => {
                    let layout = norm_layout(in_shape, batch);
                    let dn = self.affine_backward(i, affine, true, layout, &cache.normalized, &grad, &mut param_grads);
                    norm::normalize_backward(x, layout, cache, &dn)
                }
                (&LayerSpec::BatchNorm { affine, .. }, LayerCache::FixedNorm { normalized, inv_std }) => {
                    let layout = norm_layout(in_shape, batch);
                    let mut dn = self.affine_backward(i, affine, true, layout, normalized, &grad, &mut param_grads);
                    for row in dn.chunks_mut(layout.features) {
                        for (f, v) in row.iter_mut().enumerate() {
                            *v *= inv_std[f / layout.spatial];
                        }
                    }
                    dn
                }
                (LayerSpec::DecomposedNorm { .. }, LayerCache::Norm { cache, .. }) => {
                    norm::normalize_backward(x, norm_layout(in_shape, batch), cache, &grad)
                }
                _ => return Err(Error::invalid(format!("trace cache does not match layer {i}"))),
            };
            grad = dx;
            inject(i, &mut grad);
            if opts.record_layer_grads {
                let mut shape = vec![batch];
                shape.extend_from_slice(in_shape);
                layer_grads.push(Tensor::from_parts(shape, grad.clone()));
            }
        }
        layer_grads.reverse();

        let mut input_shape = vec![batch];
        input_shape.extend_from_slice(&self.shapes[0]);
        Ok(Gradients {
            params: param_grads,
            input: Tensor::from_parts(input_shape, grad),
            layer_inputs: opts.record_layer_grads.then_some(layer_grads),
        })
    }

    /// Accumulates gain/shift gradients and returns the gradient flowing into
    /// the normalized values.
    #[allow(clippy::too_many_arguments)]
    fn affine_backward(
        &self,
        layer: usize,
        affine: bool,
        per_unit: bool,
        layout: Layout,
        normalized: &[f64],
        grad: &[f64],
        param_grads: &mut [Tensor],
    ) -> Vec<f64> {
        if !affine {
            return grad.to_vec();
        }
        let idx = &self.layer_params[layer];
        let gain = self.params[idx[0]].value.data();
        let mut dn = grad.to_vec();
        let mut dgain = vec![0.0; gain.len()];
        let mut dshift = vec![0.0; gain.len()];
        for (n, row) in dn.chunks_mut(layout.features).enumerate() {
            for (f, v) in row.iter_mut().enumerate() {
                let k = if per_unit { f / layout.spatial } else { f };
                let e = n * layout.features + f;
                dgain[k] += grad[e] * normalized[e];
                dshift[k] += grad[e];
                *v *= gain[k];
            }
        }
        param_grads[idx[0]].data_mut().iter_mut().zip(&dgain).for_each(|(a, b)| *a += b);
        param_grads[idx[1]].data_mut().iter_mut().zip(&dshift).for_each(|(a, b)| *a += b);
        dn
    }

    /// Index of the last dense layer; its input is the penultimate feature
    /// representation.
    pub fn head_layer(&self) -> Option<usize> {
        self.spec
            .layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Dense { .. }))
    }
}

fn init_std(spec: &NetworkSpec, layer: usize) -> f64 {
    let fan_in = match spec.layers[layer] {
        LayerSpec::Dense { input, .. } => input,
        LayerSpec::Conv2d {
            in_channels, kernel, ..
        } => in_channels * kernel * kernel,
        _ => return 0.0,
    };
    let mut gain = 1.0;
    if spec.init == InitScheme::HeGaussian {
        for next in &spec.layers[layer + 1..] {
            match next {
                LayerSpec::Activation { function, .. } => {
                    if function.is_relu_family() {
                        gain = 2.0;
                    }
                    break;
                }
                LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } => break,
                _ => {}
            }
        }
    }
    (gain / fan_in as f64).sqrt()
}

pub(crate) fn gaussian(shape: &[usize], std: f64, rng: &mut rng::Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{ActivationKind, NormPlacement};

    #[test]
    fn init_is_deterministic_and_biases_zero() {
        let spec = NetworkSpec::mlp(5, &[7, 7], 3, ActivationKind::Relu, NormPlacement::LayerNorm);
        let a = Network::init(&spec, 11).unwrap();
        let b = Network::init(&spec, 11).unwrap();
        let c = Network::init(&spec, 12).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_ne!(a.flat_params(), c.flat_params());
        for p in a.params() {
            match p.role {
                ParamRole::Bias | ParamRole::Shift => assert!(p.value.data().iter().all(|&v| v == 0.0)),
                ParamRole::Gain => assert!(p.value.data().iter().all(|&v| v == 1.0)),
                ParamRole::Weight => {}
            }
        }
    }

    #[test]
    fn dense_identity_relu_example() {
        let spec = NetworkSpec {
            input_shape: vec![2],
            layers: vec![LayerSpec::dense(2, 2), LayerSpec::act(ActivationKind::Relu)],
            init: InitScheme::HeGaussian,
        };
        let mut net = Network::init(&spec, 0).unwrap();
        net.params_mut()[0].value = Tensor::new(vec![2, 2], vec![1., 0., 0., 1.]).unwrap();
        let x = Tensor::new(vec![1, 2], vec![3.0, -2.0]).unwrap();
        let (y, _) = net.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data(), &[3.0, 0.0]);
    }

    #[test]
    fn layer_norm_example() {
        let spec = NetworkSpec {
            input_shape: vec![2],
            layers: vec![LayerSpec::LayerNorm {
                eps: 1e-300,
                affine: false,
            }],
            init: InitScheme::HeGaussian,
        };
        let net = Network::init(&spec, 0).unwrap();
        let (y, _) = net.forward(&Tensor::new(vec![1, 2], vec![1.0, 3.0]).unwrap(), Mode::Eval).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-12 && (y.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn abs_activation_example() {
        let spec = NetworkSpec {
            input_shape: vec![2],
            layers: vec![LayerSpec::act(ActivationKind::Abs)],
            init: InitScheme::HeGaussian,
        };
        let net = Network::init(&spec, 0).unwrap();
        let (y, _) = net.forward(&Tensor::new(vec![1, 2], vec![-2.0, 5.0]).unwrap(), Mode::Eval).unwrap();
        assert_eq!(y.data(), &[2.0, 5.0]);
    }

    #[test]
    fn batch_norm_train_needs_two_samples_and_eval_is_pure() {
        let spec = NetworkSpec::mlp(3, &[4], 2, ActivationKind::Relu, NormPlacement::BatchNorm);
        let mut net = Network::init(&spec, 1).unwrap();
        let one = Tensor::new(vec![1, 3], vec![0.1, 0.2, 0.3]).unwrap();
        assert!(matches!(net.forward(&one, Mode::Train), Err(Error::Shape { layer: Some(1), .. })));
        let before = net.buffers()[1].clone();
        net.forward(&one, Mode::Eval).unwrap();
        assert_eq!(before, net.buffers()[1]);
        let two = Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, -1.0, 2.0, 0.5]).unwrap();
        net.forward_train(&two).unwrap();
        assert_ne!(before, net.buffers()[1]);
    }

    #[test]
    fn dead_relu_unit_gets_zero_incoming_gradient() {
        let spec = NetworkSpec::mlp(3, &[4], 1, ActivationKind::Relu, NormPlacement::None);
        let mut net = Network::init(&spec, 2).unwrap();
        // Unit 0: strongly negative bias kills it on these inputs.
        net.params_mut()[1].value.data_mut()[0] = -100.0;
        let x = Tensor::new(vec![3, 3], vec![0.1, 0.2, 0.3, -0.5, 0.4, 0.1, 0.9, -0.2, 0.3]).unwrap();
        let (y, trace) = net.forward(&x, Mode::Train).unwrap();
        let g = net.backward(&trace, &y).unwrap();
        assert!(g.params[0].row(0).iter().all(|&v| v == 0.0));
        assert_eq!(g.params[1].data()[0], 0.0);
    }

    #[test]
    fn linear_mse_closed_form() {
        // f(x) = w.x, loss = mean (f - y)^2, dL/dw = 2 X^T (Xw - y) / n
        let spec = NetworkSpec {
            input_shape: vec![3],
            layers: vec![LayerSpec::Dense {
                input: 3,
                output: 1,
                bias: false,
            }],
            init: InitScheme::FanInGaussian,
        };
        let net = Network::init(&spec, 3).unwrap();
        let x = Tensor::new(vec![4, 3], (0..12).map(|i| (i as f64 * 0.9).sin()).collect()).unwrap();
        let y = Tensor::new(vec![4, 1], vec![0.5, -1.0, 2.0, 0.1]).unwrap();
        let (pred, trace) = net.forward(&x, Mode::Train).unwrap();
        let (_, dl) = crate::nn::loss::mse_loss(&pred, &y).unwrap();
        let g = net.backward(&trace, &dl).unwrap();
        let w = net.params()[0].value.data();
        let mut expect = [0.0; 3];
        for n in 0..4 {
            let r: f64 = (0..3).map(|j| x.row(n)[j] * w[j]).sum::<f64>() - y.data()[n];
            for j in 0..3 {
                expect[j] += 2.0 * x.row(n)[j] * r / 4.0;
            }
        }
        for j in 0..3 {
            assert!((g.params[0].data()[j] - expect[j]).abs() < 1e-12);
        }
    }
}
