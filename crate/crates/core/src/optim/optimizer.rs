use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sgd,
    #[default]
    Adam,
}

fn d_lr() -> f64 {
    1e-3
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(d_lr())
    }
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            algorithm: Algorithm::Adam,
            lr,
            beta1: d_beta1(),
            beta2: d_beta2(),
            eps: d_eps(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self {
            algorithm: Algorithm::Sgd,
            ..Self::adam(lr)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("adam betas must lie in [0, 1)"));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::invalid("adam eps must be non-negative"));
        }
        Ok(())
    }
}

/// Optimizer hyperparameters plus per-parameter moment estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, params: &[Param]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
        }
    }

    fn check(&self, params: &[Param], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::invalid(format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(Error::shape(p.layer, format!("gradient for {} has shape {:?}", p.name, g.shape())));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, params: &mut [Param], grads: &[Tensor]) -> Result<()> {
        match self.config.algorithm {
            Algorithm::Adam => self.adam_step(params, grads),
            Algorithm::Sgd => self.sgd_step(params, grads),
        }
    }

    /// Bias-corrected Adam update.
    pub fn adam_step(&mut self, params: &mut [Param], grads: &[Tensor]) -> Result<()> {
        self.check(params, grads)?;
        self.step += 1;
        let OptimizerConfig {
            lr, beta1, beta2, eps, ..
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            let theta = p.value.data_mut();
            for (((th, &gi), mi), vi) in theta.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *th -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// `theta <- theta - lr * g`.
    pub fn sgd_step(&mut self, params: &mut [Param], grads: &[Tensor]) -> Result<()> {
        self.check(params, grads)?;
        self.step += 1;
        let lr = self.config.lr;
        for (p, g) in params.iter_mut().zip(grads) {
            p.value.data_mut().iter_mut().zip(g.data()).for_each(|(th, gi)| *th -= lr * gi);
        }
        Ok(())
    }

    /// Zeroes the moments and the step counter, keeping hyperparameters.
    pub fn reset(&mut self) {
        for m in self.first_moment.iter_mut().chain(self.second_moment.iter_mut()) {
            m.data_mut().fill(0.0);
        }
        self.step = 0;
    }
}

pub fn reset_optimizer_state(state: &mut OptimizerState) {
    state.reset();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamRole;
    use proptest::prelude::*;

    fn scalar(v: f64) -> Vec<Param> {
        vec![Param {
            name: "theta".into(),
            layer: 0,
            role: ParamRole::Weight,
            value: Tensor::new(vec![1], vec![v]).unwrap(),
        }]
    }

    fn g(v: f64) -> Vec<Tensor> {
        vec![Tensor::from_parts(vec![1], vec![v])]
    }

    #[test]
    fn first_adam_step_has_magnitude_lr() {
        for &grad in &[0.3, -2.0, 1e3] {
            let mut p = scalar(1.0);
            let mut s = OptimizerState::new(OptimizerConfig::adam(0.01), &p);
            s.adam_step(&mut p, &g(grad)).unwrap();
            let delta = (p[0].value.data()[0] - 1.0).abs();
            let expect = 0.01 * grad.abs() / (grad.abs() + 1e-8);
            assert!((delta - expect).abs() < 1e-15);
            assert_eq!(s.step, 1);
        }
    }

    #[test]
    fn zero_gradients_leave_parameters() {
        let mut p = scalar(2.5);
        let mut s = OptimizerState::new(OptimizerConfig::adam(0.1), &p);
        for _ in 0..100 {
            s.adam_step(&mut p, &g(0.0)).unwrap();
        }
        assert_eq!(p[0].value.data()[0], 2.5);
        let mut s = OptimizerState::new(OptimizerConfig::sgd(0.1), &p);
        s.sgd_step(&mut p, &g(0.0)).unwrap();
        assert_eq!(p[0].value.data()[0], 2.5);
    }

    #[test]
    fn adam_solves_quadratic() {
        let mut p = scalar(0.0);
        let mut s = OptimizerState::new(OptimizerConfig::adam(1e-2), &p);
        let mut hit = None;
        for step in 0..5000 {
            let th = p[0].value.data()[0];
            if (th - 3.0).abs() < 1e-3 {
                hit = Some(step);
                break;
            }
            s.adam_step(&mut p, &g(2.0 * (th - 3.0))).unwrap();
        }
        assert!(hit.is_some(), "final theta {}", p[0].value.data()[0]);
    }

    #[test]
    fn sgd_example_and_nan_rejection() {
        let mut p = scalar(1.0);
        let mut s = OptimizerState::new(OptimizerConfig::sgd(0.1), &p);
        s.sgd_step(&mut p, &g(1.0)).unwrap();
        assert!((p[0].value.data()[0] - 0.9).abs() < 1e-15);
        match s.apply(&mut p, &g(f64::NAN)) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "theta"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn adam_without_momentum_is_sign_scaled_sgd() {
        // beta1 = beta2 = 0: update = lr * g / (|g| + eps), i.e. SGD with the
        // per-coordinate step size lr / (|g| + eps).
        let cfg = OptimizerConfig {
            beta1: 0.0,
            beta2: 0.0,
            ..OptimizerConfig::adam(0.05)
        };
        let mut pa = scalar(1.0);
        let mut sa = OptimizerState::new(cfg, &pa);
        let mut theta: f64 = 1.0;
        for k in 0..20 {
            let grad = (k as f64 * 0.7).sin() * 3.0;
            sa.adam_step(&mut pa, &g(grad)).unwrap();
            let mut ps = scalar(theta);
            let mut ss = OptimizerState::new(OptimizerConfig::sgd(0.05 / (grad.abs() + 1e-8)), &ps);
            ss.sgd_step(&mut ps, &g(grad)).unwrap();
            theta = ps[0].value.data()[0];
            assert!((theta - pa[0].value.data()[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn reset_matches_fresh_and_is_idempotent() {
        let mut p = scalar(1.0);
        let mut s = OptimizerState::new(OptimizerConfig::adam(0.01), &p);
        for k in 0..10 {
            s.adam_step(&mut p, &g(k as f64)).unwrap();
        }
        reset_optimizer_state(&mut s);
        let once = s.clone();
        reset_optimizer_state(&mut s);
        assert_eq!(once, s);
        let mut fresh = OptimizerState::new(OptimizerConfig::adam(0.01), &p);
        let mut p2 = p.clone();
        s.adam_step(&mut p, &g(0.7)).unwrap();
        fresh.adam_step(&mut p2, &g(0.7)).unwrap();
        assert_eq!(p, p2);
    }

    proptest! {
        #[test]
        fn adam_steps_stay_bounded(history in proptest::collection::vec(-1e4f64..1e4, 1..200), scale in 1e-8f64..1e8) {
            let mut p = scalar(0.0);
            let mut s = OptimizerState::new(OptimizerConfig::adam(1e-3), &p);
            for h in history {
                let before = p[0].value.data()[0];
                s.adam_step(&mut p, &g(h * scale)).unwrap();
                prop_assert!((p[0].value.data()[0] - before).abs() <= 1e-3 * 10.0);
            }
        }
    }
}
