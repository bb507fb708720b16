use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::census::LinearizationProbe;
use super::linalg::{numeric_rank, singular_values, symmetric_eigen, symmetric_eigenvalues};
use crate::error::{Error, Result};
use crate::nn::{per_sample_output_gradient, LayerSpec, Mode, Network};
use crate::par::Exec;
use crate::tensor::{dot, Tensor};

pub const MAX_ENTK_BATCH: usize = 64;

/// Relative threshold separating structural zeros from rounding noise.
pub const RANK_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ENTKReport {
    pub n: usize,
    /// Row-major `n x n` gram matrix of per-sample output gradients.
    pub gram: Vec<f64>,
    /// `D^{-1/2} K D^{-1/2}`; rows/columns of zero-gradient samples are 0.
    pub cosine: Vec<f64>,
    /// `false` where the sample's gradient vanished and cosines are undefined.
    pub cosine_defined: Vec<bool>,
    pub eigenvalues: Vec<f64>,
    pub diag_rank1_residual: f64,
}

impl ENTKReport {
    pub fn numeric_rank(&self, threshold: f64) -> usize {
        numeric_rank(&self.eigenvalues, threshold)
    }
}

/// Per-sample gradient rows `J` (`n x P`), computed in parallel.
pub fn jacobian(net: &Network, batch: &Tensor, output_index: usize, exec: Exec) -> Result<Vec<Vec<f64>>> {
    exec.map(batch.rows(), |i| per_sample_output_gradient(net, batch.row(i), output_index))
        .into_iter()
        .collect()
}

pub(crate) fn gram_of(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = dot(&rows[i], &rows[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Empirical NTK of one scalar output over a batch of at most 64 inputs.
pub fn entk_gram(net: &Network, batch: &Tensor, output_index: usize, exec: Exec) -> Result<ENTKReport> {
    let n = batch.rows();
    if n > MAX_ENTK_BATCH {
        return Err(Error::invalid(format!("eNTK batch of {n} exceeds {MAX_ENTK_BATCH}")));
    }
    let rows = jacobian(net, batch, output_index, exec)?;
    let gram = gram_of(&rows);
    let diag: Vec<f64> = (0..n).map(|i| gram[i * n + i]).collect();
    let cosine_defined: Vec<bool> = diag.iter().map(|&d| d > 0.0).collect();
    let mut cosine = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if cosine_defined[i] && cosine_defined[j] {
                cosine[i * n + j] = if i == j {
                    1.0
                } else {
                    (gram[i * n + j] / (diag[i].sqrt() * diag[j].sqrt())).clamp(-1.0, 1.0)
                };
            }
        }
    }
    Ok(ENTKReport {
        n,
        eigenvalues: symmetric_eigenvalues(n, &gram),
        diag_rank1_residual: diag_rank1_residual(n, &gram),
        gram,
        cosine,
        cosine_defined,
    })
}

/// Alternating fit; returns the rank-1 term as `(lambda, v)`.
fn alternate(n: usize, k: &[f64], mut d: Vec<f64>) -> (f64, Vec<f64>) {
    let mut last = f64::INFINITY;
    let mut best = (0.0, vec![0.0; n]);
    for _ in 0..50 {
        let mut m = k.to_vec();
        for i in 0..n {
            m[i * n + i] -= d[i];
        }
        let (vals, vecs) = symmetric_eigen(n, &m);
        // Best rank-1 term in Frobenius norm: eigenpair of largest |lambda|.
        let top = if vals[0].abs() >= vals[n - 1].abs() { 0 } else { n - 1 };
        let lambda = vals[top];
        let v: Vec<f64> = (0..n).map(|r| vecs[r * n + top]).collect();
        for i in 0..n {
            d[i] = k[i * n + i] - lambda * v[i] * v[i];
        }
        let cost = offdiag_cost(n, k, &v.iter().map(|x| x * lambda.abs().sqrt()).collect::<Vec<_>>(), lambda.signum());
        best = (lambda, v);
        if (last - cost).abs() < 1e-12 * (1.0 + cost) {
            break;
        }
        last = cost;
    }
    best
}

/// `sum_{i != j} (K_ij - s u_i u_j)^2`.
fn offdiag_cost(n: usize, k: &[f64], u: &[f64], s: f64) -> f64 {
    let mut c = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                c += (k[i * n + j] - s * u[i] * u[j]).powi(2);
            }
        }
    }
    c
}

/// Levenberg-Marquardt on the off-diagonal residuals; the diagonal term
/// absorbs the diagonal exactly, so only `u` is free.
fn polish(n: usize, k: &[f64], mut u: Vec<f64>, s: f64) -> f64 {
    let mut cost = offdiag_cost(n, k, &u, s);
    let mut mu = 1e-3;
    for _ in 0..500 {
        let sq: f64 = u.iter().map(|x| x * x).sum();
        let mut jtj = DMatrix::zeros(n, n);
        let mut jtr = DVector::zeros(n);
        for a in 0..n {
            let mut g = 0.0;
            for j in 0..n {
                if j != a {
                    g += u[j] * (k[a * n + j] - s * u[a] * u[j]);
                    jtj[(a, j)] = u[a] * u[j];
                }
            }
            jtj[(a, a)] = sq - u[a] * u[a];
            jtr[a] = s * g;
        }
        let mut lhs = jtj.clone();
        for a in 0..n {
            lhs[(a, a)] += mu * (1.0 + jtj[(a, a)]);
        }
        let Some(step) = lhs.cholesky().map(|c| c.solve(&jtr)) else {
            mu *= 10.0;
            continue;
        };
        let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let c = offdiag_cost(n, k, &trial, s);
        if c < cost {
            let gain = cost - c;
            u = trial;
            cost = c;
            mu = (mu * 0.3).max(1e-15);
            if gain < 1e-24 * (1.0 + cost) {
                break;
            }
        } else {
            mu *= 10.0;
            if mu > 1e12 {
                break;
            }
        }
    }
    cost
}

/// Relative Frobenius residual of the best fit `K ~ diag(d) + s u u^T`.
///
/// Candidates come from alternating between the rank-1 term (top eigenpair
/// of `K - diag(d)`) and the diagonal, started from `d = 0` and
/// `d = diag(K)`, and from the extreme eigenvectors of the off-diagonal
/// part. Each candidate is refined by Levenberg-Marquardt on the
/// off-diagonal residuals and the smallest residual is returned.
pub fn diag_rank1_residual(n: usize, k: &[f64]) -> f64 {
    let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || n == 0 {
        return 0.0;
    }
    let mut starts = Vec::new();
    for d in [vec![0.0; n], (0..n).map(|i| k[i * n + i]).collect()] {
        let (lambda, v) = alternate(n, k, d);
        let scale = lambda.abs().sqrt();
        starts.push((v.iter().map(|x| x * scale).collect::<Vec<_>>(), if lambda < 0.0 { -1.0 } else { 1.0 }));
    }
    let mut off = k.to_vec();
    (0..n).for_each(|i| off[i * n + i] = 0.0);
    let (vals, vecs) = symmetric_eigen(n, &off);
    for idx in [0, 1.min(n - 1), n.saturating_sub(2), n - 1] {
        let scale = vals[idx].abs().sqrt().max(1e-3 * norm.sqrt());
        let v: Vec<f64> = (0..n).map(|r| vecs[r * n + idx] * scale).collect();
        starts.push((v.clone(), 1.0));
        starts.push((v, -1.0));
    }
    let best = starts
        .into_iter()
        .map(|(u, s)| polish(n, k, u, s))
        .fold(f64::INFINITY, f64::min);
    // Each off-diagonal pair appears twice in the cost, matching the full
    // Frobenius norm of the residual matrix.
    best.sqrt() / norm
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankBound {
    pub rank_k: usize,
    pub rank_x: usize,
    pub bound_holds: bool,
}

/// Checks `rank K(X, X) <= rank X` for a network whose activations are all
/// linearized on `X`. With biases the bound is taken against `[X, 1]`.
pub fn rank_bound_check(net: &Network, x: &Tensor, output_index: usize, exec: Exec) -> Result<RankBound> {
    if net.spec().layers.iter().any(LayerSpec::is_norm) {
        return Err(Error::Precondition("rank bound needs a network without normalization layers".into()));
    }
    let (_, trace) = net.forward(x, Mode::Eval)?;
    let probe = LinearizationProbe::new(net, &trace);
    if !probe.fully_linearized() {
        return Err(Error::Precondition(format!(
            "activations not linearized on the batch: {:?}",
            probe.layers
        )));
    }
    let rows = jacobian(net, x, output_index, exec)?;
    let n = rows.len();
    let rank_k = numeric_rank(&symmetric_eigenvalues(n, &gram_of(&rows)), RANK_THRESHOLD);
    let has_bias = net.params().iter().any(|p| p.role == crate::nn::ParamRole::Bias);
    let d = x.row_len();
    let (cols, data) = if has_bias {
        let mut data = Vec::with_capacity(n * (d + 1));
        for r in 0..n {
            data.extend_from_slice(x.row(r));
            data.push(1.0);
        }
        (d + 1, data)
    } else {
        (d, x.data().to_vec())
    };
    let rank_x = numeric_rank(&singular_values(n, cols, &data), RANK_THRESHOLD);
    Ok(RankBound {
        rank_k,
        rank_x,
        bound_holds: rank_k <= rank_x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_outer_product_have_zero_residual() {
        let n = 5;
        let mut eye = vec![0.0; n * n];
        (0..n).for_each(|i| eye[i * n + i] = 1.0);
        assert!(diag_rank1_residual(n, &eye) < 1e-10);
        let v = [1.0, -2.0, 0.5, 3.0, 1.5];
        let outer: Vec<f64> = (0..n * n).map(|e| v[e / n] * v[e % n]).collect();
        assert!(diag_rank1_residual(n, &outer) < 1e-10);
    }
}
