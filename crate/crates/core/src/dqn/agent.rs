//! Q-learning agent: epsilon-greedy control, TD targets from a slowly
//! tracking target copy, MSE loss over replay batches, Adam updates, and a
//! versioned checkpoint sufficient for bit-exact resume.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::net::{backward, forward, AdamState, Mlp, MlpGrads, MlpScratch};
use super::replay::{ReplayMemory, Transition};
use crate::rng;

/// Trainer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub soft_tau: f64,
    pub learning_rate: f64,
    pub replay_capacity: usize,
    /// Minimum transitions before training starts.
    pub warmup: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Environment steps over which epsilon decays linearly.
    pub eps_decay_steps: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![4, 8, 8, 4],
            dropout: 0.10,
            batch_size: 128,
            gamma: 0.95,
            soft_tau: 1e-3,
            learning_rate: 1e-3,
            replay_capacity: 200_000,
            warmup: 1000,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_steps: 86_400,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 || self.batch_size > self.replay_capacity {
            return Err("batch_size must be in 1..=replay_capacity".into());
        }
        if !(self.soft_tau > 0.0 && self.soft_tau <= 1.0) {
            return Err("soft_tau must be in (0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err("gamma must be in [0, 1)".into());
        }
        Ok(())
    }
}

/// One TD target: r + gamma * max_a Q_target(s', a), or just r at terminals.
pub fn td_target(reward: f64, terminal: bool, gamma: f64, max_next_q: f64) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * max_next_q
    }
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Loss/epsilon sample for training-curve logs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStat {
    pub train_step: u64,
    pub loss: f64,
    pub epsilon: f64,
    pub mean_q: f64,
}

#[derive(Debug)]
pub struct DqnAgent {
    pub cfg: DqnConfig,
    pub online: Mlp,
    pub target: Mlp,
    pub replay: ReplayMemory,
    adam: AdamState,
    scratch: MlpScratch,
    scratch_target: MlpScratch,
    grads: MlpGrads,
    rng_action: ChaCha8Rng,
    rng_dropout: ChaCha8Rng,
    rng_replay: ChaCha8Rng,
    pub env_steps: u64,
    pub train_steps: u64,
    last_loss: f64,
    last_mean_q: f64,
}

impl DqnAgent {
    pub fn new(input_dim: usize, num_actions: usize, cfg: DqnConfig, seed: u64) -> Self {
        cfg.validate().expect("valid trainer config");
        let mut sizes = Vec::with_capacity(cfg.hidden.len() + 2);
        sizes.push(input_dim);
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(num_actions);
        let mut init_rng = rng::stream(seed, rng::streams::AGENT_INIT);
        let online = Mlp::new(&sizes, &mut init_rng);
        let target = online.clone();
        let scratch = MlpScratch::for_net(&online);
        let scratch_target = scratch.clone();
        let grads = MlpGrads::for_net(&online);
        let adam = AdamState::new(&online, cfg.learning_rate);
        Self {
            replay: ReplayMemory::new(cfg.replay_capacity),
            online,
            target,
            adam,
            scratch,
            scratch_target,
            grads,
            rng_action: rng::stream(seed, rng::streams::AGENT_ACTION),
            rng_dropout: rng::stream(seed, rng::streams::AGENT_DROPOUT),
            rng_replay: rng::stream(seed, rng::streams::AGENT_REPLAY),
            cfg,
            env_steps: 0,
            train_steps: 0,
            last_loss: 0.0,
            last_mean_q: 0.0,
        }
    }

    pub fn num_actions(&self) -> usize {
        self.online.output_dim()
    }

    /// Linear epsilon schedule over environment steps.
    pub fn epsilon(&self) -> f64 {
        let c = &self.cfg;
        if c.eps_decay_steps == 0 {
            return c.eps_end;
        }
        let frac = (self.env_steps as f64 / c.eps_decay_steps as f64).min(1.0);
        c.eps_start + (c.eps_end - c.eps_start) * frac
    }

    /// Epsilon-greedy action for the schedule's current epsilon.
    pub fn select_action(&mut self, state: &[f64]) -> usize {
        let eps = self.epsilon();
        self.select_action_with(state, eps)
    }

    /// Epsilon-greedy with an explicit epsilon; greedy evaluation never
    /// applies dropout.
    pub fn select_action_with(&mut self, state: &[f64], epsilon: f64) -> usize {
        debug_assert!((0.0..=1.0).contains(&epsilon));
        let n = self.num_actions();
        if epsilon > 0.0 && self.rng_action.gen::<f64>() < epsilon {
            return self.rng_action.gen_range(0..n);
        }
        let q = forward(&self.online, state, None, &mut self.scratch);
        argmax(q)
    }

    /// Greedy Q-values for inspection; no dropout.
    pub fn q_values(&mut self, state: &[f64]) -> Vec<f64> {
        forward(&self.online, state, None, &mut self.scratch).to_vec()
    }

    pub fn record(&mut self, t: Transition) {
        self.replay.push(t);
        self.env_steps += 1;
    }

    /// Runs one training step if the replay holds enough transitions;
    /// returns the batch MSE loss, or `None` when warming up.
    pub fn try_train(&mut self) -> Option<f64> {
        let need = self.cfg.batch_size.max(self.cfg.warmup);
        if self.replay.len() < need {
            return None;
        }
        let batch = self.replay.sample_indices(&mut self.rng_replay, self.cfg.batch_size);
        self.grads.zero();
        let mut loss = 0.0;
        let mut mean_q = 0.0;
        let inv_b = 1.0 / batch.len() as f64;
        let mut grad_out = vec![0.0; self.num_actions()];
        for &i in &batch {
            // targets first, from the frozen copy without dropout
            let (reward, terminal, action) = {
                let tr = self.replay.get(i);
                (tr.reward, tr.terminal, tr.action)
            };
            let max_next = if terminal {
                0.0
            } else {
                let tr = self.replay.get(i);
                let qn = forward(&self.target, &tr.next_state, None, &mut self.scratch_target);
                qn[argmax(qn)]
            };
            let y = td_target(reward, terminal, self.cfg.gamma, max_next);
            let q = {
                let tr = self.replay.get(i);
                forward(
                    &self.online,
                    &tr.state,
                    Some((self.cfg.dropout, &mut self.rng_dropout)),
                    &mut self.scratch,
                )
            };
            let diff = q[action] - y;
            loss += diff * diff * inv_b;
            mean_q += q[action] * inv_b;
            grad_out.iter_mut().for_each(|g| *g = 0.0);
            grad_out[action] = 2.0 * diff * inv_b;
            backward(&self.online, &mut self.scratch, &grad_out, &mut self.grads);
        }
        self.adam.apply(&mut self.online, &self.grads);
        self.target.soft_update_from(&self.online, self.cfg.soft_tau);
        self.train_steps += 1;
        self.last_loss = loss;
        self.last_mean_q = mean_q;
        Some(loss)
    }

    pub fn last_stat(&self) -> TrainStat {
        TrainStat {
            train_step: self.train_steps,
            loss: self.last_loss,
            epsilon: self.epsilon(),
            mean_q: self.last_mean_q,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            cfg: self.cfg.clone(),
            online: self.online.clone(),
            target: self.target.clone(),
            adam: self.adam.clone(),
            replay: self.replay.clone(),
            rng_action: RngState::capture(&self.rng_action),
            rng_dropout: RngState::capture(&self.rng_dropout),
            rng_replay: RngState::capture(&self.rng_replay),
            env_steps: self.env_steps,
            train_steps: self.train_steps,
        };
        let json = serde_json::to_string(&ck)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let json = fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&json)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(ck.version));
        }
        let scratch = MlpScratch::for_net(&ck.online);
        let grads = MlpGrads::for_net(&ck.online);
        Ok(Self {
            cfg: ck.cfg,
            scratch: scratch.clone(),
            scratch_target: scratch,
            grads,
            online: ck.online,
            target: ck.target,
            adam: ck.adam,
            replay: ck.replay,
            rng_action: ck.rng_action.restore(),
            rng_dropout: ck.rng_dropout.restore(),
            rng_replay: ck.rng_replay.restore(),
            env_steps: ck.env_steps,
            train_steps: ck.train_steps,
            last_loss: 0.0,
            last_mean_q: 0.0,
        })
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint encoding: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
}

/// ChaCha stream position; restoring replays the generator bit-exact.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    stream: u64,
    word_pos: (u64, u64),
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        let pos = rng.get_word_pos();
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: ((pos >> 64) as u64, pos as u64),
        }
    }

    fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(((self.word_pos.0 as u128) << 64) | self.word_pos.1 as u128);
        rng
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    cfg: DqnConfig,
    online: Mlp,
    target: Mlp,
    adam: AdamState,
    replay: ReplayMemory,
    rng_action: RngState,
    rng_dropout: RngState,
    rng_replay: RngState,
    env_steps: u64,
    train_steps: u64,
}
