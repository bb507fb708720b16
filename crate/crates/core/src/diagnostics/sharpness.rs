use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::rng::{substream, Stream};
use crate::tensor::{dot, norm};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SharpnessOptions {
    pub iters: usize,
    /// Stop when successive estimates differ by less than `tol` (relative).
    pub tol: f64,
    pub seed: u64,
}

impl Default for SharpnessOptions {
    fn default() -> Self {
        Self {
            iters: 100,
            tol: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SharpnessReport {
    /// Rayleigh quotient `v^T H v` at the final iterate; the dominant
    /// (largest magnitude) eigenvalue, sign included.
    pub eigenvalue: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration on finite-difference Hessian-vector products
/// `Hv ~ (g(theta + h v) - g(theta - h v)) / 2h`,
/// `h = 1e-4 (1 + |theta|) / |v|`, where `grad` evaluates the loss gradient.
pub fn sharpness_top_eig(
    theta: &[f64],
    mut grad: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    opts: SharpnessOptions,
) -> Result<SharpnessReport> {
    let p = theta.len();
    let mut rng = substream(opts.seed, Stream::Probe, 0x5ba7);
    let mut v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let scale = 1e-4 * (1.0 + norm(theta));
    let mut shifted = vec![0.0; p];
    let mut estimate = f64::NAN;
    for it in 1..=opts.iters {
        let h = scale / norm(&v);
        shifted.iter_mut().zip(theta).zip(&v).for_each(|((s, t), d)| *s = t + h * d);
        let gp = grad(&shifted)?;
        shifted.iter_mut().zip(theta).zip(&v).for_each(|((s, t), d)| *s = t - h * d);
        let gm = grad(&shifted)?;
        let hv: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let next = dot(&v, &hv);
        let nh = norm(&hv);
        if nh == 0.0 {
            return Ok(SharpnessReport {
                eigenvalue: 0.0,
                iterations: it,
                converged: true,
            });
        }
        let done = (next - estimate).abs() < opts.tol * next.abs();
        estimate = next;
        if done {
            return Ok(SharpnessReport {
                eigenvalue: estimate,
                iterations: it,
                converged: true,
            });
        }
        v = hv.iter().map(|x| x / nh).collect();
    }
    Ok(SharpnessReport {
        eigenvalue: estimate,
        iterations: opts.iters,
        converged: false,
    })
}
