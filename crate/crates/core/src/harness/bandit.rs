use std::collections::VecDeque;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::objective::LossKind;
use crate::error::{Error, Result};
use crate::nn::{argmax, ActivationKind, Network, NetworkSpec, NormPlacement, TwoHotCodec};
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::rng::{derive_seed, substream, Rng, Stream};
use crate::tasks::BanditMDP;
use crate::tensor::Tensor;

pub const DEFAULT_REPLAY_CAPACITY: usize = 100_000;

/// One environment transition. States are dataset indices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// FIFO replay memory.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be >= 1"));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends `item`, evicting and returning the oldest entry when full.
    pub fn push(&mut self, item: T) -> Option<T> {
        let evicted = if self.items.len() == self.capacity {
            self.items.pop_front()
        } else {
            None
        };
        self.items.push_back(item);
        evicted
    }

    /// Entries oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// `n` entries drawn uniformly with replacement.
    pub fn sample(&self, rng: &mut Rng, n: usize) -> Vec<&T> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

fn d_hidden() -> Vec<usize> {
    vec![256, 256]
}
fn d_activation() -> ActivationKind {
    ActivationKind::Relu
}
fn d_steps() -> u64 {
    10_000
}
fn d_batch() -> usize {
    128
}
fn d_period() -> u64 {
    500
}
fn d_capacity() -> usize {
    DEFAULT_REPLAY_CAPACITY
}
fn d_cadence() -> u64 {
    100
}
fn d_head() -> LossKind {
    LossKind::Mse
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditConfig {
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "d_activation")]
    pub activation: ActivationKind,
    /// `mse` or `two_hot`.
    #[serde(default = "d_head")]
    pub head: LossKind,
    #[serde(default = "d_steps")]
    pub steps: u64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    /// Steps between target-network refreshes.
    #[serde(default = "d_period")]
    pub target_period: u64,
    #[serde(default = "d_capacity")]
    pub capacity: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "d_cadence")]
    pub cadence: u64,
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            hidden: d_hidden(),
            activation: d_activation(),
            head: d_head(),
            steps: d_steps(),
            batch_size: d_batch(),
            target_period: d_period(),
            capacity: d_capacity(),
            optimizer: OptimizerConfig::default(),
            cadence: d_cadence(),
            checkpoint_every: None,
            seed: 0,
        }
    }
}

impl BanditConfig {
    pub fn validate(&self, mdp: &BanditMDP) -> Result<()> {
        if self.batch_size == 0 || self.target_period == 0 || self.cadence == 0 || self.checkpoint_every == Some(0) {
            return Err(Error::invalid("bandit batch size and periods must be >= 1"));
        }
        self.optimizer.validate()?;
        match self.head {
            LossKind::Mse => Ok(()),
            LossKind::TwoHot { bound, smoothing } => {
                TwoHotCodec::new(bound, smoothing)?;
                let scale = mdp.reward_scale / (1.0 - mdp.gamma);
                if (bound as f64) < scale {
                    return Err(Error::TwoHotRange { value: scale, bound });
                }
                Ok(())
            }
            LossKind::Xent { .. } => Err(Error::invalid("bandit head must be mse or two_hot")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditRecord {
    pub step: u64,
    pub loss: f64,
    /// Mean over the batch of `max_a Q(s, a)`.
    pub mean_max_q: f64,
}

#[derive(Clone, Debug)]
pub struct BanditRun {
    pub records: Vec<BanditRecord>,
    pub checkpoints: Vec<(u64, Network)>,
    pub net: Network,
    pub codec: Option<TwoHotCodec>,
}

/// Q-values `[N, actions]`, decoding two-hot logit blocks by their
/// expectation.
pub fn q_values(net: &Network, codec: Option<&TwoHotCodec>, x: &Tensor, actions: usize) -> Result<Tensor> {
    let out = net.predict(x)?;
    Ok(match codec {
        None => out,
        Some(c) => {
            let k = c.num_atoms();
            let data = (0..out.rows())
                .flat_map(|i| (0..actions).map(move |a| (i, a)))
                .map(|(i, a)| c.decode_logits(&out.row(i)[a * k..(a + 1) * k]))
                .collect();
            Tensor::from_parts(vec![out.rows(), actions], data)
        }
    })
}

/// Q-learning under a uniform random behaviour policy with a replay buffer
/// and a periodically refreshed target network.
pub fn run_bandit_dqn(mdp: &BanditMDP, config: &BanditConfig) -> Result<BanditRun> {
    config.validate(mdp)?;
    let actions = mdp.num_actions();
    let codec = config.head.codec();
    let width = codec.map_or(1, |c| c.num_atoms());
    let spec = NetworkSpec::mlp(
        mdp.dataset.input_dim(),
        &config.hidden,
        actions * width,
        config.activation,
        NormPlacement::None,
    );
    let mut net = Network::init(&spec, derive_seed(config.seed, Stream::Init, 0))?;
    let mut target = net.clone();
    let mut opt = OptimizerState::new(config.optimizer, net.params());
    let mut env_rng = substream(config.seed, Stream::Bandit, 0);
    let mut replay_rng = substream(config.seed, Stream::Bandit, 1);
    let mut buffer = ReplayBuffer::new(config.capacity)?;
    let inputs = mdp.dataset.inputs.clone().reshape(vec![mdp.dataset.len(), mdp.dataset.input_dim()])?;
    let labels = mdp.dataset.labels().unwrap();

    let mut records = Vec::new();
    let mut checkpoints = Vec::new();
    let (mut state, _) = mdp.transition(&mut env_rng);
    for step in 1..=config.steps {
        let action = env_rng.random_range(0..actions);
        let reward = mdp.reward(action, labels[state]);
        let (next_state, _) = mdp.transition(&mut env_rng);
        buffer.push(Transition {
            state,
            action,
            reward,
            next_state,
        });
        state = next_state;

        let batch = buffer.sample(&mut replay_rng, config.batch_size);
        let n = batch.len();
        let s: Vec<usize> = batch.iter().map(|t| t.state).collect();
        let s2: Vec<usize> = batch.iter().map(|t| t.next_state).collect();
        let q_next = q_values(&target, codec.as_ref(), &inputs.select_rows(&s2), actions)?;
        let (out, trace) = net.forward_train(&inputs.select_rows(&s))?;
        let mut grad = vec![0.0; out.len()];
        let mut loss = 0.0;
        let mut max_q = 0.0;
        for (i, t) in batch.iter().enumerate() {
            let row = q_next.row(i);
            let y = t.reward + mdp.gamma * row[argmax(row)];
            let o = out.row(i);
            let g = &mut grad[i * out.row_len()..(i + 1) * out.row_len()];
            match &codec {
                None => {
                    let d = o[t.action] - y;
                    loss += d * d;
                    g[t.action] = 2.0 * d;
                    max_q += o[argmax(o)];
                }
                Some(c) => {
                    let block = t.action * width..(t.action + 1) * width;
                    loss += c.row_loss(&o[block.clone()], y, &mut g[block])?;
                    max_q += (0..actions)
                        .map(|a| c.decode_logits(&o[a * width..(a + 1) * width]))
                        .fold(f64::NEG_INFINITY, f64::max);
                }
            }
        }
        grad.iter_mut().for_each(|v| *v /= n as f64);
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step: step as usize });
        }
        let grads = net.backward(&trace, &Tensor::from_parts(out.shape().to_vec(), grad))?.params;
        opt.apply(net.params_mut(), &grads)?;

        if step % config.target_period == 0 {
            target = net.clone();
        }
        if step % config.cadence == 0 || step == config.steps {
            records.push(BanditRecord {
                step,
                loss,
                mean_max_q: max_q / n as f64,
            });
        }
        if config.checkpoint_every.is_some_and(|c| step % c == 0) {
            checkpoints.push((step, net.clone()));
        }
    }
    Ok(BanditRun {
        records,
        checkpoints,
        net,
        codec,
    })
}
