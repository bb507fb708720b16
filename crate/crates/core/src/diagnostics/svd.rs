use serde::Serialize;

use super::linalg::svd_top;
use crate::error::{Error, Result};
use crate::nn::{Mode, Network};
use crate::tensor::{gemm, Tensor};

pub const SRANK_DELTA: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SVDReport {
    /// Singular values of the `n x d` feature matrix, descending.
    pub singular_values: Vec<f64>,
    pub delta: f64,
    /// `srank_delta`: number of singular values above `delta * sigma_1`.
    pub srank: usize,
    /// Head-layer weights applied to the features projected onto the top
    /// right singular direction, `[n, outputs]` row-major.
    pub top_direction_outputs: Vec<f64>,
}

/// Effective rank from singular values sorted descending.
pub fn srank(singular_values: &[f64], delta: f64) -> usize {
    match singular_values.first() {
        Some(&s1) if s1 > 0.0 => singular_values.iter().filter(|&&s| s / s1 > delta).count(),
        _ => 0,
    }
}

/// SVD of a feature matrix `[n, d]` with an optional head weight `[out, d]`.
pub fn feature_matrix_svd(features: &Tensor, head_weight: Option<&Tensor>, delta: f64) -> SVDReport {
    let (n, d) = (features.rows(), features.row_len());
    let (singular_values, v) = svd_top(n, d, features.data());
    let mut top_direction_outputs = Vec::new();
    if let Some(w) = head_weight {
        let out = w.rows();
        // P = F v v^T, outputs = P W^T.
        let coef: Vec<f64> = (0..n).map(|r| crate::tensor::dot(features.row(r), &v)).collect();
        let projected: Vec<f64> = coef.iter().flat_map(|&c| v.iter().map(move |x| c * x)).collect();
        top_direction_outputs = vec![0.0; n * out];
        gemm(false, true, n, d, out, &projected, w.data(), 0.0, &mut top_direction_outputs);
    }
    SVDReport {
        srank: srank(&singular_values, delta),
        singular_values,
        delta,
        top_direction_outputs,
    }
}

/// SVD of the penultimate features (input of the last dense layer).
pub fn feature_svd(net: &Network, batch: &Tensor) -> Result<SVDReport> {
    let head = net
        .head_layer()
        .ok_or_else(|| Error::invalid("feature SVD needs a dense head layer"))?;
    let (_, trace) = net.forward(batch, Mode::Eval)?;
    let phi = trace.layer_input(head);
    let features = Tensor::from_parts(vec![phi.rows(), phi.row_len()], phi.data().to_vec());
    let w = &net.params()[net.weight_index(head).unwrap()].value;
    Ok(feature_matrix_svd(&features, Some(w), SRANK_DELTA))
}
