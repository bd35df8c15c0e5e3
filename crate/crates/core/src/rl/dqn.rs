//! Deep Q-network with uniform experience replay and a periodically synced
//! target network.

use std::path::Path;

use super::env::{Environment, Policy};
use super::{argmax, epsilon};
use crate::cnn::layers::Dense;
use crate::cnn::{AdamConfig, AdamState, Layer, Network, Tensor};
use crate::rng::{split, SplitMix64};
use crate::{Error, Result};

pub const DQN_MAGIC: &[u8; 6] = b"UAVQN1";

#[derive(Debug, Clone, PartialEq)]
pub struct DqnConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Environment steps between target-network copies.
    pub target_sync: usize,
    pub hidden: [usize; 2],
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_fraction: f64,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            episodes: 6000,
            gamma: 0.99,
            lr: 1e-3,
            batch_size: 32,
            replay_capacity: 100_000,
            target_sync: 1000,
            hidden: [128, 64],
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_fraction: 0.5,
            seed: 0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("dqn discount must be in (0,1], got {}", self.gamma)));
        }
        if self.episodes == 0 || self.batch_size == 0 || self.target_sync == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("dqn episodes, batch size, target sync and hidden widths must be positive".into()));
        }
        if self.replay_capacity < self.batch_size || !(self.lr > 0.0) {
            return Err(Error::Config("dqn replay capacity must hold a batch and lr must be positive".into()));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.eps_start) || !unit(self.eps_end) || !(self.eps_decay_fraction > 0.0 && self.eps_decay_fraction <= 1.0) {
            return Err(Error::Config("dqn epsilon schedule values must lie in [0,1]".into()));
        }
        Ok(())
    }
}

/// Action-value network: features → hidden → hidden → one value per action.
#[derive(Debug, Clone, PartialEq)]
pub struct DqnModel {
    pub net: Network<f64>,
}

impl DqnModel {
    pub fn new(inputs: usize, n_actions: usize, hidden: [usize; 2], seed: u64) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let layers = vec![
            Layer::Dense(Dense::init(inputs, hidden[0], &mut rng)),
            Layer::Relu,
            Layer::Dense(Dense::init(hidden[0], hidden[1], &mut rng)),
            Layer::Relu,
            Layer::Dense(Dense::init(hidden[1], n_actions, &mut rng)),
        ];
        Ok(Self { net: Network::new([inputs, 1, 1], layers)? })
    }

    pub fn n_actions(&self) -> usize {
        self.net.output_shape().map(|s| s[0]).unwrap_or(0)
    }

    pub fn q_values(&self, features: &[f64]) -> Result<Vec<f64>> {
        let x = Tensor::vectors(features.len(), 1, features.to_vec())?;
        Ok(self.net.forward(&x)?.data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.net.to_bytes(DQN_MAGIC)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(Self { net: Network::from_bytes(bytes, DQN_MAGIC)? })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl Policy for DqnModel {
    fn act(&self, env: &dyn Environment) -> usize {
        argmax(&self.q_values(&env.features()).expect("environment features match the network input"))
    }
}

type Sparse = Vec<(u32, f32)>;

fn sparse(v: &[f64]) -> Sparse {
    v.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, &x)| (i as u32, x as f32)).collect()
}

struct Transition {
    s: Sparse,
    a: usize,
    r: f64,
    s2: Sparse,
    terminal: bool,
}

/// Fixed-capacity ring buffer; observations are stored sparsely.
struct Replay {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl Replay {
    fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }
}

fn dense_batch(rows: &[&Sparse], len: usize) -> Tensor<f64> {
    let n = rows.len();
    let mut t = Tensor::zeros(len, n, 1, 1);
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row.iter() {
            t.data[j as usize * n + i] = v as f64;
        }
    }
    t
}

/// `r + γ·max_a Q_target(s′, a)`, without the bootstrap for terminal
/// transitions. `next` is a `features × batch` tensor.
pub fn td_targets(target: &Network<f64>, rewards: &[f64], next: &Tensor<f64>, terminal: &[bool], gamma: f64) -> Result<Vec<f64>> {
    let q = target.forward(next)?;
    let n = next.n;
    Ok((0..n)
        .map(|i| {
            if terminal[i] {
                rewards[i]
            } else {
                let best = (0..q.c).map(|a| q.data[a * n + i]).fold(f64::NEG_INFINITY, f64::max);
                rewards[i] + gamma * best
            }
        })
        .collect())
}

/// Trains a DQN on `env`. Weights come from `split(seed, 0)`, exploration
/// and replay sampling from `split(seed, 1)`.
pub fn dqn_train(env: &mut dyn Environment, cfg: &DqnConfig) -> Result<DqnModel> {
    cfg.validate()?;
    let inputs = env.feature_len();
    let n_actions = env.n_actions();
    let mut online = DqnModel::new(inputs, n_actions, cfg.hidden, split(cfg.seed, 0))?;
    let mut target = online.net.clone();
    let mut adam = AdamState::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, online.net.param_sizes());
    let mut rng = SplitMix64::new(split(cfg.seed, 1));
    let mut replay = Replay { items: Vec::new(), capacity: cfg.replay_capacity, next: 0 };
    let mut steps = 0usize;
    for ep in 0..cfg.episodes {
        let eps = epsilon(ep, cfg.episodes, cfg.eps_start, cfg.eps_end, cfg.eps_decay_fraction);
        env.reset(ep);
        let mut obs = env.features();
        loop {
            let a = if rng.next_f64() < eps { rng.below(n_actions) } else { argmax(&online.q_values(&obs)?) };
            let step = env.step(a);
            let obs2 = env.features();
            replay.push(Transition { s: sparse(&obs), a, r: step.reward, s2: sparse(&obs2), terminal: step.terminal });
            steps += 1;
            if replay.items.len() >= cfg.batch_size {
                learn(&mut online, &target, &mut adam, &replay, cfg, inputs, &mut rng)?;
            }
            if steps % cfg.target_sync == 0 {
                target = online.net.clone();
            }
            if step.done {
                break;
            }
            obs = obs2;
        }
    }
    Ok(online)
}

fn learn(
    online: &mut DqnModel,
    target: &Network<f64>,
    adam: &mut AdamState<f64>,
    replay: &Replay,
    cfg: &DqnConfig,
    inputs: usize,
    rng: &mut SplitMix64,
) -> Result<()> {
    let batch: Vec<&Transition> = (0..cfg.batch_size).map(|_| &replay.items[rng.below(replay.items.len())]).collect();
    let n = batch.len();
    let s = dense_batch(&batch.iter().map(|t| &t.s).collect::<Vec<_>>(), inputs);
    let s2 = dense_batch(&batch.iter().map(|t| &t.s2).collect::<Vec<_>>(), inputs);
    let rewards: Vec<f64> = batch.iter().map(|t| t.r).collect();
    let terminal: Vec<bool> = batch.iter().map(|t| t.terminal).collect();
    let y = td_targets(target, &rewards, &s2, &terminal, cfg.gamma)?;
    let (q, caches) = online.net.forward_train(&s)?;
    let mut grad = Tensor::zeros(q.c, n, 1, 1);
    let mut loss = 0.0;
    for (i, t) in batch.iter().enumerate() {
        let d = q.data[t.a * n + i] - y[i];
        loss += d * d / n as f64;
        grad.data[t.a * n + i] = 2.0 * d / n as f64;
    }
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("non-finite DQN loss {loss}")));
    }
    let (_, grads) = online.net.backward(&caches, grad)?;
    adam.step(&mut online.net.params_mut(), &grads);
    Ok(())
}
