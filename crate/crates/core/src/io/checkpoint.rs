use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Network, NetworkSpec, RunningStats};
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Network plus optional optimizer state and bookkeeping.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub network: Network,
    pub optimizer: Option<OptimizerState>,
    pub seed: u64,
    pub step: u64,
}

/// Hex SHA-256 of the compact JSON encoding of a spec.
pub fn spec_hash(spec: &NetworkSpec) -> String {
    let text = serde_json::to_string(spec).expect("specs always serialize");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn number(v: f64) -> Result<Box<RawValue>> {
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("cannot checkpoint {v}")));
    }
    Ok(RawValue::from_string(format!("{v:.16e}"))?)
}

fn numbers(v: &[f64]) -> Result<Vec<Box<RawValue>>> {
    v.iter().map(|&x| number(x)).collect()
}

#[derive(Serialize)]
struct TensorOut<'a> {
    name: &'a str,
    shape: &'a [usize],
    values: Vec<Box<RawValue>>,
}

#[derive(Serialize)]
struct StatsOut {
    mean: Vec<Box<RawValue>>,
    var: Vec<Box<RawValue>>,
}

#[derive(Serialize)]
struct OptimizerOut<'a> {
    config: &'a OptimizerConfig,
    step: u64,
    first_moment: Vec<Vec<Box<RawValue>>>,
    second_moment: Vec<Vec<Box<RawValue>>>,
}

#[derive(Serialize)]
struct CheckpointOut<'a> {
    version: u32,
    spec_hash: String,
    spec: &'a NetworkSpec,
    seed: u64,
    step: u64,
    tensors: Vec<TensorOut<'a>>,
    buffers: Vec<Option<StatsOut>>,
    init_norms: Vec<Option<Box<RawValue>>>,
    optimizer: Option<OptimizerOut<'a>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorIn {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerIn {
    config: OptimizerConfig,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointIn {
    version: u32,
    spec_hash: String,
    spec: NetworkSpec,
    seed: u64,
    step: u64,
    tensors: Vec<TensorIn>,
    buffers: Vec<Option<RunningStats>>,
    init_norms: Vec<Option<f64>>,
    optimizer: Option<OptimizerIn>,
}

#[derive(Deserialize)]
struct VersionOnly {
    version: u32,
}

/// Serializes a checkpoint; floats are written with 17 significant digits.
pub fn checkpoint_to_string(ck: &Checkpoint) -> Result<String> {
    let net = &ck.network;
    let tensors = net
        .params()
        .iter()
        .map(|p| {
            Ok(TensorOut {
                name: &p.name,
                shape: p.value.shape(),
                values: numbers(p.value.data())?,
            })
        })
        .collect::<Result<_>>()?;
    let buffers = net
        .buffers()
        .iter()
        .map(|b| {
            b.as_ref()
                .map(|s| {
                    Ok(StatsOut {
                        mean: numbers(&s.mean)?,
                        var: numbers(&s.var)?,
                    })
                })
                .transpose()
        })
        .collect::<Result<_>>()?;
    let init_norms = net
        .init_layer_norms()
        .iter()
        .map(|n| n.map(number).transpose())
        .collect::<Result<_>>()?;
    let moments = |m: &[Tensor]| m.iter().map(|t| numbers(t.data())).collect::<Result<Vec<_>>>();
    let optimizer = ck
        .optimizer
        .as_ref()
        .map(|o| {
            Ok::<_, Error>(OptimizerOut {
                config: &o.config,
                step: o.step,
                first_moment: moments(&o.first_moment)?,
                second_moment: moments(&o.second_moment)?,
            })
        })
        .transpose()?;
    let out = CheckpointOut {
        version: CHECKPOINT_VERSION,
        spec_hash: spec_hash(net.spec()),
        spec: net.spec(),
        seed: ck.seed,
        step: ck.step,
        tensors,
        buffers,
        init_norms,
        optimizer,
    };
    let mut text = serde_json::to_string(&out)?;
    text.push('\n');
    Ok(text)
}

fn format_error(text: &str, e: serde_json::Error) -> Error {
    let before: usize = text.split_inclusive('\n').take(e.line().saturating_sub(1)).map(str::len).sum();
    Error::Format {
        offset: (before + e.column()) as u64,
        message: e.to_string(),
    }
}

pub fn checkpoint_from_str(text: &str) -> Result<Checkpoint> {
    if let Ok(v) = serde_json::from_str::<VersionOnly>(text) {
        if v.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                v.version
            )));
        }
    }
    let raw: CheckpointIn = serde_json::from_str(text).map_err(|e| format_error(text, e))?;
    if raw.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("checkpoint version {} is not supported", raw.version)));
    }
    let hash = spec_hash(&raw.spec);
    if hash != raw.spec_hash {
        return Err(Error::Checkpoint(format!(
            "spec hash mismatch: file says {}, spec hashes to {hash}",
            raw.spec_hash
        )));
    }
    let params = raw
        .tensors
        .into_iter()
        .map(|t| Tensor::new(t.shape, t.values).map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", t.name))))
        .collect::<Result<Vec<_>>>()?;
    let network = Network::from_parts(raw.spec, params, raw.buffers, raw.init_norms)?;
    let optimizer = match raw.optimizer {
        None => None,
        Some(o) => {
            let rebuild = |m: Vec<Vec<f64>>| -> Result<Vec<Tensor>> {
                if m.len() != network.params().len() {
                    return Err(Error::Checkpoint("optimizer moments do not match parameters".into()));
                }
                m.into_iter()
                    .zip(network.params())
                    .map(|(v, p)| Tensor::new(p.value.shape().to_vec(), v))
                    .collect()
            };
            Some(OptimizerState {
                config: o.config,
                first_moment: rebuild(o.first_moment)?,
                second_moment: rebuild(o.second_moment)?,
                step: o.step,
            })
        }
    };
    Ok(Checkpoint {
        network,
        optimizer,
        seed: raw.seed,
        step: raw.step,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    checkpoint_from_str(&std::fs::read_to_string(path)?)
}

impl Checkpoint {
    /// Errors unless the checkpoint was taken from a network with `spec`.
    pub fn check_spec(&self, spec: &NetworkSpec) -> Result<()> {
        let (a, b) = (spec_hash(self.network.spec()), spec_hash(spec));
        if a != b {
            return Err(Error::Checkpoint(format!("spec hash {a} does not match expected {b}")));
        }
        Ok(())
    }
}
