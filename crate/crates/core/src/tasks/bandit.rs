use rand::Rng as _;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Contextual bandit over a labelled dataset: the state is a sample, the
/// rewarded action its label, and the next state is drawn independently of
/// the action.
#[derive(Clone, Debug, PartialEq)]
pub struct BanditMDP {
    pub dataset: Dataset,
    pub reward_scale: f64,
    pub gamma: f64,
}

impl BanditMDP {
    pub fn new(dataset: Dataset, reward_scale: f64, gamma: f64) -> Result<Self> {
        if dataset.labels().is_none() {
            return Err(Error::invalid("bandit needs a classification dataset"));
        }
        if !(reward_scale.is_finite() && reward_scale > 0.0) {
            return Err(Error::invalid(format!("reward scale {reward_scale} must be > 0")));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("gamma {gamma} outside [0, 1)")));
        }
        Ok(Self {
            dataset,
            reward_scale,
            gamma,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.dataset.num_classes().unwrap()
    }

    /// Samples a state uniformly; returns its dataset index and label.
    pub fn transition(&self, rng: &mut Rng) -> (usize, usize) {
        let i = rng.random_range(0..self.dataset.len());
        (i, self.dataset.labels().unwrap()[i])
    }

    pub fn reward(&self, action: usize, label: usize) -> f64 {
        if action == label {
            self.reward_scale
        } else {
            0.0
        }
    }
}

pub fn bandit_transition(mdp: &BanditMDP, rng: &mut Rng) -> (usize, usize) {
    mdp.transition(rng)
}

pub fn bandit_reward(mdp: &BanditMDP, action: usize, label: usize) -> f64 {
    mdp.reward(action, label)
}
