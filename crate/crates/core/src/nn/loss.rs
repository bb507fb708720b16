//! Losses. Every loss averages over the batch and returns the gradient with
//! respect to the network output under that convention.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean over the batch of the squared error summed over outputs.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            None,
            format!("prediction {:?} vs target {:?}", pred.shape(), target.shape()),
        ));
    }
    let n = pred.rows() as f64;
    let mut loss = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, Tensor::from_parts(pred.shape().to_vec(), grad)))
}

/// Numerically stable softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// `log softmax` of one row.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Cross-entropy of one row of logits against a target distribution. Writes
/// `softmax - target` (unscaled) into `grad`.
pub(crate) fn soft_cross_entropy_row(logits: &[f64], target: &[f64], grad: &mut [f64]) -> f64 {
    let logp = log_softmax(logits);
    let mut loss = 0.0;
    for k in 0..logits.len() {
        loss -= target[k] * logp[k];
        grad[k] = logp[k].exp() - target[k];
    }
    loss
}

/// Softmax cross-entropy against `(1 - smoothing) * onehot + smoothing * uniform`.
pub fn xent_loss(logits: &Tensor, labels: &[usize], smoothing: f64) -> Result<(f64, Tensor)> {
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::invalid(format!("label smoothing {smoothing} not in [0, 1)")));
    }
    let n = logits.rows();
    if labels.len() != n {
        return Err(Error::shape(None, format!("{} labels for a batch of {n}", labels.len())));
    }
    let k = logits.row_len();
    let mut grad = vec![0.0; n * k];
    let mut target = vec![0.0; k];
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::invalid(format!("label {label} out of range for {k} classes")));
        }
        target.fill(smoothing / k as f64);
        target[label] += 1.0 - smoothing;
        loss += soft_cross_entropy_row(logits.row(i), &target, &mut grad[i * k..(i + 1) * k]);
    }
    grad.iter_mut().for_each(|g| *g /= n as f64);
    Ok((loss / n as f64, Tensor::from_parts(logits.shape().to_vec(), grad)))
}

/// Fraction of rows whose arg-max equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(i, &l)| argmax(logits.row(*i)) == l)
        .count();
    correct as f64 / labels.len().max(1) as f64
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
