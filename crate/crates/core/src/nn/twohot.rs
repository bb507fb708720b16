//! Two-hot encoding of real-valued regression targets over the integer grid
//! `{-M, ..., M}`, with optional label smoothing toward the uniform
//! distribution over atoms.

use serde::{Deserialize, Serialize};

use super::loss::soft_cross_entropy_row;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoHotCodec {
    pub bound: u32,
    pub smoothing: f64,
}

impl TwoHotCodec {
    pub fn new(bound: u32, smoothing: f64) -> Result<Self> {
        if bound == 0 {
            return Err(Error::invalid("two-hot bound must be positive"));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::invalid(format!("smoothing {smoothing} not in [0, 1)")));
        }
        Ok(Self { bound, smoothing })
    }

    pub fn num_atoms(&self) -> usize {
        2 * self.bound as usize + 1
    }

    pub fn atoms(&self) -> Vec<f64> {
        let m = self.bound as i64;
        (-m..=m).map(|a| a as f64).collect()
    }

    fn atom_index(&self, atom: f64) -> usize {
        (atom as i64 + self.bound as i64) as usize
    }

    /// Distribution with `P(floor c) = ceil c - c`, `P(ceil c) = 1 - P(floor c)`,
    /// then mixed with the uniform distribution by the smoothing weight.
    pub fn encode(&self, c: f64) -> Result<Vec<f64>> {
        let m = self.bound as f64;
        if !c.is_finite() || c.abs() > m {
            return Err(Error::TwoHotRange {
                value: c,
                bound: self.bound,
            });
        }
        let k = self.num_atoms();
        let mut p = vec![self.smoothing / k as f64; k];
        let lo = c.floor();
        let hi = c.ceil();
        let keep = 1.0 - self.smoothing;
        if lo == hi {
            p[self.atom_index(lo)] += keep;
        } else {
            let p_lo = hi - c;
            p[self.atom_index(lo)] += keep * p_lo;
            p[self.atom_index(hi)] += keep * (1.0 - p_lo);
        }
        Ok(p)
    }

    /// Expectation over atoms.
    pub fn decode(&self, p: &[f64]) -> f64 {
        let m = self.bound as f64;
        p.iter().enumerate().map(|(i, &pi)| pi * (i as f64 - m)).sum()
    }

    /// Expected value under the softmax of a row of logits.
    pub fn decode_logits(&self, logits: &[f64]) -> f64 {
        self.decode(&super::loss::softmax(logits))
    }

    /// Mean cross-entropy between softmax(logits) and the smoothed encodings
    /// of `targets`; logits are `[N, 2M+1]`.
    pub fn loss(&self, logits: &Tensor, targets: &[f64]) -> Result<(f64, Tensor)> {
        let k = self.num_atoms();
        if logits.row_len() != k || logits.rows() != targets.len() {
            return Err(Error::shape(
                None,
                format!("logits {:?} for {} targets over {k} atoms", logits.shape(), targets.len()),
            ));
        }
        let n = targets.len();
        let mut grad = vec![0.0; n * k];
        let mut loss = 0.0;
        for (i, &c) in targets.iter().enumerate() {
            let target = self.encode(c)?;
            loss += soft_cross_entropy_row(logits.row(i), &target, &mut grad[i * k..(i + 1) * k]);
        }
        grad.iter_mut().for_each(|g| *g /= n as f64);
        Ok((loss / n as f64, Tensor::from_parts(logits.shape().to_vec(), grad)))
    }

    /// Cross-entropy for a single row, writing the unscaled gradient.
    pub(crate) fn row_loss(&self, logits: &[f64], c: f64, grad: &mut [f64]) -> Result<f64> {
        let target = self.encode(c)?;
        Ok(soft_cross_entropy_row(logits, &target, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_examples() {
        let codec = TwoHotCodec::new(10, 0.0).unwrap();
        let p = codec.encode(3.4).unwrap();
        assert!((p[codec.atom_index(3.0)] - 0.6).abs() < 1e-12);
        assert!((p[codec.atom_index(4.0)] - 0.4).abs() < 1e-12);
        let p = codec.encode(5.0).unwrap();
        assert_eq!(p[codec.atom_index(5.0)], 1.0);
        assert_eq!(p.iter().filter(|&&v| v != 0.0).count(), 1);
        assert!(matches!(codec.encode(10.5), Err(Error::TwoHotRange { .. })));
        assert!(codec.encode(-10.0).is_ok());
    }

    #[test]
    fn smoothing_scales_decoded_mean() {
        let codec = TwoHotCodec::new(8, 0.1).unwrap();
        for &c in &[-7.3, 0.0, 2.5, 8.0] {
            let p = codec.encode(c).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((codec.decode(&p) - 0.9 * c).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let codec = TwoHotCodec::new(3, 0.1).unwrap();
        let logits = Tensor::new(vec![2, 7], (0..14).map(|i| (i as f64 * 0.77).sin()).collect()).unwrap();
        let targets = [1.3, -2.6];
        let (_, g) = codec.loss(&logits, &targets).unwrap();
        let h = 1e-6;
        for e in 0..14 {
            let mut lp = logits.clone();
            lp.data_mut()[e] += h;
            let mut lm = logits.clone();
            lm.data_mut()[e] -= h;
            let fd = (codec.loss(&lp, &targets).unwrap().0 - codec.loss(&lm, &targets).unwrap().0) / (2.0 * h);
            assert!((fd - g.data()[e]).abs() < 1e-8);
        }
    }
}
