//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use plab::rng::{substream, Stream};
use plab::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussians(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, Stream::Data, 0xfeed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    Tensor::new(vec![rows, cols], gaussians(rows * cols, seed)).unwrap()
}

pub fn random_symmetric(n: usize, seed: u64) -> Vec<f64> {
    let g = gaussians(n * n, seed);
    (0..n * n).map(|e| 0.5 * (g[e] + g[(e % n) * n + e / n])).collect()
}

pub fn random_psd(n: usize, seed: u64) -> Vec<f64> {
    let g = gaussians(n * n, seed + 1000);
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            k[i * n + j] = (0..n).map(|t| g[i * n + t] * g[j * n + t]).sum();
        }
    }
    k
}

/// `rows x cols` matrix of exact rank `rank` (with probability one).
pub fn low_rank_inputs(rows: usize, cols: usize, rank: usize, seed: u64) -> Tensor {
    let a = gaussians(rows * rank, seed);
    let b = gaussians(rank * cols, seed + 77);
    let data = (0..rows * cols)
        .map(|e| (0..rank).map(|t| a[(e / cols) * rank + t] * b[t * cols + e % cols]).sum())
        .collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// Cyclic Jacobi eigenvalue iteration for a symmetric matrix.
pub fn jacobi_eigenvalues(n: usize, a: &[f64]) -> Vec<f64> {
    let mut m = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n * n).filter(|e| e / n != e % n).map(|e| m[e] * m[e]).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig
}

fn solve(n: usize, mut a: Vec<f64>, mut b: Vec<f64>) -> Vec<f64> {
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs())).unwrap();
        for k in 0..n {
            a.swap(c * n + k, piv * n + k);
        }
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r * n + c] / a[c * n + c];
            for k in c..n {
                a[r * n + k] -= f * a[c * n + k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    x
}

/// Best `diag(d) + s u u^T` fit of `K` by Levenberg-Marquardt on the
/// off-diagonal residuals (the diagonal is absorbed by `d`), restarted from
/// random `u` for both signs `s`. Returns the smallest relative residual.
pub fn lm_diag_rank1_oracle(n: usize, k: &[f64], restarts: usize, seed: u64) -> f64 {
    let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let cost = |u: &[f64], s: f64| -> f64 {
        2.0 * pairs.iter().map(|&(i, j)| (k[i * n + j] - s * u[i] * u[j]).powi(2)).sum::<f64>()
    };
    let mut best = f64::INFINITY;
    for r in 0..restarts {
        for s in [1.0, -1.0] {
            let mut u: Vec<f64> = gaussians(n, seed * 1000 + r as u64);
            let mut mu = 1e-3;
            let mut c = cost(&u, s);
            for _ in 0..2000 {
                // Residuals r_ij = K_ij - s u_i u_j; Jacobian dr/du.
                let mut jtj = vec![0.0; n * n];
                let mut jtr = vec![0.0; n];
                for &(i, j) in &pairs {
                    let res = k[i * n + j] - s * u[i] * u[j];
                    let mut row = vec![0.0; n];
                    row[i] = -s * u[j];
                    row[j] = -s * u[i];
                    for a in [i, j] {
                        jtr[a] += row[a] * res;
                        for b in [i, j] {
                            jtj[a * n + b] += row[a] * row[b];
                        }
                    }
                }
                let mut lhs = jtj.clone();
                (0..n).for_each(|a| lhs[a * n + a] += mu * (1.0 + jtj[a * n + a]));
                let step = solve(n, lhs, jtr.iter().map(|v| -v).collect());
                let trial: Vec<f64> = u.iter().zip(&step).map(|(a, b)| a + b).collect();
                let ct = cost(&trial, s);
                if ct < c {
                    let gain = c - ct;
                    u = trial;
                    c = ct;
                    mu = (mu * 0.3).max(1e-15);
                    if gain < 1e-24 * (1.0 + c) {
                        break;
                    }
                } else {
                    mu *= 10.0;
                    if mu > 1e12 {
                        break;
                    }
                }
            }
            best = best.min(c.sqrt() / norm);
        }
    }
    best
}

/// JSON text of a small synthetic classification experiment.
pub fn small_config(mode: serde_json::Value, steps_per_task: u64, num_tasks: usize) -> String {
    let spec = plab::nn::NetworkSpec::mlp(
        8,
        &[32, 32],
        4,
        plab::nn::ActivationKind::Relu,
        plab::nn::NormPlacement::None,
    );
    serde_json::json!({
        "version": 1,
        "network": spec,
        "data": {"source": "synthetic", "num_classes": 4, "input_dim": 8, "n_per_class": 25, "seed": 3},
        "task": {"mode": mode, "steps_per_task": steps_per_task, "num_tasks": num_tasks},
        "loss": {"kind": "xent"},
        "optimizer": {"lr": 0.003},
        "batch_size": 32,
        "cadence": 10,
        "heavy_cadence": 40,
        "eval_size": 100,
        "seeds": [0, 1]
    })
    .to_string()
}
