use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::diagnostics::predictive_entropy;
use crate::nn::{accuracy, mse_loss, xent_loss, TwoHotCodec};
use crate::tensor::Tensor;

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    /// Squared error; class labels are regressed as one-hot vectors.
    Mse,
    Xent {
        #[serde(default)]
        smoothing: f64,
    },
    /// Cross-entropy against two-hot encodings over `{-bound, ..., bound}`,
    /// one block of `2 * bound + 1` logits per regression output.
    TwoHot {
        bound: u32,
        #[serde(default)]
        smoothing: f64,
    },
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::Mse => Ok(()),
            LossKind::Xent { smoothing } => {
                if (0.0..1.0).contains(&smoothing) {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("smoothing {smoothing} not in [0, 1)")))
                }
            }
            LossKind::TwoHot { bound, smoothing } => TwoHotCodec::new(bound, smoothing).map(|_| ()),
        }
    }

    /// Network output width needed for `targets` outputs (or classes).
    pub fn output_width(&self, targets: usize) -> usize {
        match *self {
            LossKind::TwoHot { bound, .. } => targets * (2 * bound as usize + 1),
            _ => targets,
        }
    }

    pub fn codec(&self) -> Option<TwoHotCodec> {
        match *self {
            LossKind::TwoHot { bound, smoothing } => Some(TwoHotCodec { bound, smoothing }),
            _ => None,
        }
    }
}

/// Targets for one batch.
#[derive(Clone, Copy, Debug)]
pub enum BatchTargets<'a> {
    Labels { labels: &'a [usize], num_classes: usize },
    Values(&'a Tensor),
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub grad: Tensor,
    pub accuracy: Option<f64>,
    pub entropy: Option<f64>,
}

fn one_hot(labels: &[usize], k: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), k]);
    for (i, &l) in labels.iter().enumerate() {
        t.row_mut(i)[l] = 1.0;
    }
    t
}

/// Two-hot cross-entropy with one logit block per target column.
pub fn two_hot_blocks(codec: &TwoHotCodec, out: &Tensor, values: &Tensor) -> Result<(f64, Tensor)> {
    let k = codec.num_atoms();
    let outputs = values.row_len();
    if out.row_len() != outputs * k || out.rows() != values.rows() {
        return Err(Error::shape(
            None,
            format!("{:?} logits for {:?} two-hot targets over {k} atoms", out.shape(), values.shape()),
        ));
    }
    let n = out.rows();
    let mut grad = vec![0.0; out.len()];
    let mut loss = 0.0;
    for i in 0..n {
        for j in 0..outputs {
            let range = i * outputs * k + j * k..i * outputs * k + (j + 1) * k;
            loss += codec.row_loss(&out.data()[range.clone()], values.row(i)[j], &mut grad[range])?;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n as f64);
    Ok((loss / n as f64, Tensor::from_parts(out.shape().to_vec(), grad)))
}

/// Loss, output gradient and summary statistics of `out` against `targets`.
pub fn evaluate(kind: LossKind, out: &Tensor, targets: BatchTargets<'_>) -> Result<Evaluation> {
    match (kind, targets) {
        (LossKind::Mse, BatchTargets::Labels { labels, num_classes }) => {
            let (loss, grad) = mse_loss(out, &one_hot(labels, num_classes))?;
            Ok(Evaluation {
                loss,
                grad,
                accuracy: Some(accuracy(out, labels)),
                entropy: Some(predictive_entropy(out)),
            })
        }
        (LossKind::Xent { smoothing }, BatchTargets::Labels { labels, .. }) => {
            let (loss, grad) = xent_loss(out, labels, smoothing)?;
            Ok(Evaluation {
                loss,
                grad,
                accuracy: Some(accuracy(out, labels)),
                entropy: Some(predictive_entropy(out)),
            })
        }
        (LossKind::Mse, BatchTargets::Values(values)) => {
            let (loss, grad) = mse_loss(out, values)?;
            Ok(Evaluation {
                loss,
                grad,
                accuracy: None,
                entropy: None,
            })
        }
        (LossKind::TwoHot { bound, smoothing }, BatchTargets::Values(values)) => {
            let (loss, grad) = two_hot_blocks(&TwoHotCodec { bound, smoothing }, out, values)?;
            Ok(Evaluation {
                loss,
                grad,
                accuracy: None,
                entropy: None,
            })
        }
        (kind, BatchTargets::Labels { .. }) => Err(Error::invalid(format!("{kind:?} loss needs real-valued targets"))),
        (kind, BatchTargets::Values(_)) => Err(Error::invalid(format!("{kind:?} loss needs class labels"))),
    }
}
