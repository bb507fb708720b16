//! Central finite-difference checks of the analytic backward pass.
//!
//! Each case builds a small network from a random template, draws an input
//! batch and targets, and compares every parameter gradient (plus the input
//! gradient) against `(L(theta + h) - L(theta - h)) / 2h`. Coordinates whose
//! perturbation flips the sign pattern of a piecewise-linear activation are
//! skipped, since the loss is not differentiable across the kink.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{evaluate, BatchTargets, LossKind};
use crate::nn::{ActivationKind, InitScheme, LayerSpec, Mode, Network, NetworkSpec, NormAxis, Padding};
use crate::par::Exec;
use crate::rng::{derive_seed, substream, Rng, Stream};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const FLOOR: f64 = 1e-3;
pub const DEFAULT_CASES: usize = 120;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckCase {
    pub name: String,
    pub spec: NetworkSpec,
    pub loss: LossKind,
    pub batch: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseReport {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Parameter name (or `input`) where the worst error occurred.
    pub worst: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub cases: Vec<CaseReport>,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

const ACTIVATIONS: [ActivationKind; 6] = [
    ActivationKind::Relu,
    ActivationKind::LeakyRelu(0.1),
    ActivationKind::Gelu,
    ActivationKind::Tanh,
    ActivationKind::Abs,
    ActivationKind::Identity,
];

const AXES: [NormAxis; 3] = [NormAxis::None, NormAxis::Batch, NormAxis::Feature];

fn act(rng: &mut Rng, i: usize) -> LayerSpec {
    let offset = if rng.random_bool(0.3) { rng.random_range(-0.5..0.5) } else { 0.0 };
    LayerSpec::Activation {
        function: ACTIVATIONS[i % ACTIVATIONS.len()],
        input_offset: offset,
    }
}

fn norm_layer(rng: &mut Rng, which: usize) -> LayerSpec {
    match which % 3 {
        0 => LayerSpec::LayerNorm {
            eps: 1e-5,
            affine: rng.random_bool(0.7),
        },
        1 => LayerSpec::BatchNorm {
            eps: 1e-5,
            momentum: 0.1,
            affine: rng.random_bool(0.7),
        },
        _ => LayerSpec::DecomposedNorm {
            center: *AXES.choose(rng).unwrap(),
            scale: *AXES.choose(rng).unwrap(),
            eps: 1e-5,
        },
    }
}

/// Templates cycle through dense, normalized and convolutional stacks;
/// losses and activations cycle independently so every combination of
/// layer kind and loss appears within the first few dozen cases.
pub fn generate_cases(count: usize, seed: u64) -> Vec<GradcheckCase> {
    (0..count)
        .map(|i| {
            let case_seed = derive_seed(seed, Stream::Init, i as u64);
            let mut rng = substream(case_seed, Stream::Data, 0);
            let loss = match (i / 7) % 3 {
                0 => LossKind::Mse,
                1 => LossKind::Xent {
                    smoothing: *[0.0, 0.1].choose(&mut rng).unwrap(),
                },
                _ => LossKind::TwoHot {
                    bound: rng.random_range(1..=3),
                    smoothing: *[0.0, 0.1].choose(&mut rng).unwrap(),
                },
            };
            let outputs = loss.output_width(rng.random_range(2..=3));
            let template = i % 7;
            let (input_shape, layers, name) = match template {
                0..=3 => {
                    let d = rng.random_range(2..=5);
                    let h = rng.random_range(3..=6);
                    let mut layers = vec![LayerSpec::Dense {
                        input: d,
                        output: h,
                        bias: template != 3,
                    }];
                    let name = if template == 0 {
                        "dense"
                    } else {
                        layers.push(norm_layer(&mut rng, template - 1));
                        ["", "dense+layer_norm", "dense+batch_norm", "dense(no bias)+decomposed_norm"][template]
                    };
                    layers.push(act(&mut rng, i / 21));
                    layers.push(LayerSpec::dense(h, h));
                    layers.push(act(&mut rng, i / 21 + 1));
                    layers.push(LayerSpec::dense(h, outputs));
                    (vec![d], layers, name)
                }
                _ => {
                    let c = rng.random_range(1..=2);
                    let hw: usize = rng.random_range(4..=5);
                    let oc = rng.random_range(2..=3);
                    let kernel = rng.random_range(1..=3);
                    let stride = rng.random_range(1..=2);
                    let padding = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
                    let conv = LayerSpec::Conv2d {
                        in_channels: c,
                        out_channels: oc,
                        kernel,
                        stride,
                        padding,
                        bias: rng.random_bool(0.7),
                    };
                    let (oh, ow) = match padding {
                        Padding::Same => (hw.div_ceil(stride), hw.div_ceil(stride)),
                        Padding::Valid => ((hw - kernel) / stride + 1, (hw - kernel) / stride + 1),
                    };
                    let mut layers = vec![conv];
                    if template > 4 {
                        let which = template - 5 + rng.random_range(0..2);
                        layers.push(norm_layer(&mut rng, which));
                    }
                    layers.push(act(&mut rng, i / 21));
                    layers.push(LayerSpec::Flatten);
                    layers.push(LayerSpec::dense(oc * oh * ow, outputs));
                    let name = ["conv", "conv+norm", "conv+norm"][template - 4];
                    (vec![c, hw, hw], layers, name)
                }
            };
            let spec = NetworkSpec {
                input_shape,
                layers,
                init: if rng.random_bool(0.5) {
                    InitScheme::HeGaussian
                } else {
                    InitScheme::FanInGaussian
                },
            };
            GradcheckCase {
                name: format!("{i:03} {name} {loss:?}"),
                spec,
                loss,
                batch: rng.random_range(3..=6),
                seed: case_seed,
            }
        })
        .collect()
}

struct Problem {
    x: Tensor,
    labels: Vec<usize>,
    values: Tensor,
    classes: usize,
    loss: LossKind,
}

impl Problem {
    fn targets(&self) -> BatchTargets<'_> {
        match self.loss {
            LossKind::Xent { .. } => BatchTargets::Labels {
                labels: &self.labels,
                num_classes: self.classes,
            },
            _ => BatchTargets::Values(&self.values),
        }
    }

    fn loss(&self, net: &Network) -> Result<f64> {
        Ok(evaluate(self.loss, &net.forward(&self.x, Mode::Train)?.0, self.targets())?.loss)
    }

    fn loss_at_input(&self, net: &Network, x: &Tensor) -> Result<f64> {
        Ok(evaluate(self.loss, &net.forward(x, Mode::Train)?.0, self.targets())?.loss)
    }

    /// Which side of the kink every piecewise-linear activation input is on.
    fn pattern(&self, net: &Network, x: &Tensor) -> Result<Vec<bool>> {
        let (_, trace) = net.forward(x, Mode::Train)?;
        let mut out = Vec::new();
        for (i, layer) in net.spec().layers.iter().enumerate() {
            if let LayerSpec::Activation { function, input_offset } = *layer {
                if function.is_piecewise_linear() {
                    out.extend(trace.layer_input(i).data().iter().map(|z| z + input_offset > 0.0));
                }
            }
        }
        Ok(out)
    }
}

fn problem(case: &GradcheckCase, net: &Network) -> Result<Problem> {
    let mut rng = substream(case.seed, Stream::Data, 1);
    let dim = net.input_dim();
    let x: Vec<f64> = (0..case.batch * dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut shape = vec![case.batch];
    shape.extend_from_slice(&case.spec.input_shape);
    let x = Tensor::new(shape, x)?;
    let width = net.output_dim();
    let (classes, cols, bound) = match case.loss {
        LossKind::TwoHot { bound, .. } => (0, case.loss.codec().map_or(1, |c| width / c.num_atoms()), bound as f64),
        _ => (width, width, 1.0),
    };
    let labels = (0..case.batch).map(|_| rng.random_range(0..width)).collect();
    let values: Vec<f64> = (0..case.batch * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Ok(Problem {
        x,
        labels,
        values: Tensor::new(vec![case.batch, cols], values)?,
        classes,
        loss: case.loss,
    })
}

/// Compares the analytic gradient of one case against central differences.
pub fn check_case(case: &GradcheckCase) -> Result<CaseReport> {
    let mut net = Network::init(&case.spec, case.seed)?;
    let prob = problem(case, &net)?;
    let (out, trace) = net.forward(&prob.x, Mode::Train)?;
    let eval = evaluate(case.loss, &out, prob.targets())?;
    let grads = net.backward(&trace, &eval.grad)?;
    let base = prob.pattern(&net, &prob.x)?;

    let mut report = CaseReport {
        name: case.name.clone(),
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        worst: String::new(),
    };
    let note = |report: &mut CaseReport, analytic: f64, numeric: f64, what: &str| {
        let e = rel_error(analytic, numeric);
        report.checked += 1;
        if e > report.max_rel_error || e.is_nan() {
            report.max_rel_error = if e.is_nan() { f64::INFINITY } else { e };
            report.worst = what.to_string();
        }
    };

    for p in 0..net.params().len() {
        for j in 0..net.params()[p].value.len() {
            let orig = net.params()[p].value.data()[j];
            let mut eval_at = |v: f64| -> Result<(f64, bool)> {
                net.params_mut()[p].value.data_mut()[j] = v;
                let same = prob.pattern(&net, &prob.x)? == base;
                Ok((prob.loss(&net)?, same))
            };
            let (up, same_up) = eval_at(orig + STEP)?;
            let (down, same_down) = eval_at(orig - STEP)?;
            net.params_mut()[p].value.data_mut()[j] = orig;
            if !(same_up && same_down) {
                report.skipped += 1;
                continue;
            }
            let name = net.params()[p].name.clone();
            note(&mut report, grads.params[p].data()[j], (up - down) / (2.0 * STEP), &name);
        }
    }

    let mut x = prob.x.clone();
    for j in 0..x.len() {
        let orig = x.data()[j];
        x.data_mut()[j] = orig + STEP;
        let (up, same_up) = (prob.loss_at_input(&net, &x)?, prob.pattern(&net, &x)? == base);
        x.data_mut()[j] = orig - STEP;
        let (down, same_down) = (prob.loss_at_input(&net, &x)?, prob.pattern(&net, &x)? == base);
        x.data_mut()[j] = orig;
        if !(same_up && same_down) {
            report.skipped += 1;
            continue;
        }
        note(&mut report, grads.input.data()[j], (up - down) / (2.0 * STEP), "input");
    }
    if report.checked == 0 {
        return Err(Error::Precondition(format!("{}: every coordinate sat on a kink", case.name)));
    }
    Ok(report)
}

/// Runs every case and reports the worst relative error.
pub fn run_gradcheck(cases: &[GradcheckCase], exec: Exec) -> Result<GradcheckReport> {
    let reports = exec.map_slice(cases, check_case).into_iter().collect::<Result<Vec<_>>>()?;
    let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        passed: max_rel_error < TOLERANCE,
        cases: reports,
        max_rel_error,
    })
}
