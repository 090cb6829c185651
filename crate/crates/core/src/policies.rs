//! Baseline policies and the policy abstraction shared with the learned
//! agent: greedy (transmit when affordable), threshold (transmit above half
//! battery, else detect locally), alternating (cycle the joint-action set),
//! and the Q-learning policy wrapper.

use crate::dqn::{DqnAgent, Transition, TrainStat};
use crate::energy::EnergyParams;
use crate::env::{CameraMode, EnvState, JointAction};

/// Decision context handed to a policy each epoch.
pub struct PolicyContext<'a> {
    pub state: &'a EnvState,
    /// Raw battery charge per camera, in joules.
    pub energies_j: &'a [f64],
    pub e_max_j: f64,
    pub epoch_index: u64,
    /// Per-bit transmission cost in effect for this epoch.
    pub e_tr_now: f64,
    pub params: &'a EnergyParams,
    pub cameras: usize,
    /// Full-epoch cost of transmitting raw (action frames plus guard).
    pub projected_transmit_cost_j: f64,
}

/// Transition handed back after the epoch resolves.
pub struct TransitionView<'a> {
    pub state: &'a EnvState,
    pub action: usize,
    pub reward: f64,
    pub next_state: &'a EnvState,
    pub terminal: bool,
}

pub trait Policy {
    fn name(&self) -> &str;
    fn decide(&mut self, ctx: &PolicyContext) -> JointAction;
    /// Learned policies train here; baselines ignore it.
    fn learn(&mut self, _transition: &TransitionView) {}
}

/// Transmit whenever the battery can fund the whole epoch, else stand by.
pub fn greedy_action(energies_j: &[f64], projected_transmit_cost_j: f64) -> JointAction {
    JointAction::from_modes(
        energies_j
            .iter()
            .map(|&e| {
                if e >= projected_transmit_cost_j {
                    CameraMode::TransmitRaw
                } else {
                    CameraMode::StandBy
                }
            })
            .collect(),
    )
}

/// Transmit above half capacity (strictly), otherwise detect locally.
pub fn threshold_action(energies_j: &[f64], e_max_j: f64) -> JointAction {
    JointAction::from_modes(
        energies_j
            .iter()
            .map(|&e| {
                if e > 0.5 * e_max_j {
                    CameraMode::TransmitRaw
                } else {
                    CameraMode::DetectLocal
                }
            })
            .collect(),
    )
}

/// Cycle deterministically through the whole joint-action set.
pub fn alternating_action(epoch_index: u64, cameras: usize) -> JointAction {
    let n = JointAction::num_actions(cameras) as u64;
    JointAction::from_index((epoch_index % n) as usize, cameras).expect("index in range")
}

pub struct GreedyPolicy;

impl Policy for GreedyPolicy {
    fn name(&self) -> &str {
        "greedy"
    }

    fn decide(&mut self, ctx: &PolicyContext) -> JointAction {
        greedy_action(ctx.energies_j, ctx.projected_transmit_cost_j)
    }
}

pub struct ThresholdPolicy;

impl Policy for ThresholdPolicy {
    fn name(&self) -> &str {
        "threshold"
    }

    fn decide(&mut self, ctx: &PolicyContext) -> JointAction {
        threshold_action(ctx.energies_j, ctx.e_max_j)
    }
}

pub struct AlternatingPolicy;

impl Policy for AlternatingPolicy {
    fn name(&self) -> &str {
        "alternating"
    }

    fn decide(&mut self, ctx: &PolicyContext) -> JointAction {
        alternating_action(ctx.epoch_index, ctx.cameras)
    }
}

/// Repeats one joint action forever; useful as a probe.
pub struct FixedPolicy {
    action: JointAction,
}

impl FixedPolicy {
    pub fn new(action: JointAction) -> Self {
        Self { action }
    }
}

impl Policy for FixedPolicy {
    fn name(&self) -> &str {
        "fixed"
    }

    fn decide(&mut self, _ctx: &PolicyContext) -> JointAction {
        self.action.clone()
    }
}

/// Q-learning policy: epsilon-greedy selection, one training step per
/// decision epoch once the replay warms up.
pub struct DqnPolicy {
    pub agent: DqnAgent,
    name: String,
    /// Training-curve samples, captured every `curve_every` training steps.
    pub curve: Vec<TrainStat>,
    pub curve_every: u64,
}

impl DqnPolicy {
    pub fn new(agent: DqnAgent, name: impl Into<String>) -> Self {
        Self {
            agent,
            name: name.into(),
            curve: Vec::new(),
            curve_every: 1000,
        }
    }
}

impl Policy for DqnPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn decide(&mut self, ctx: &PolicyContext) -> JointAction {
        let idx = self.agent.select_action(ctx.state.as_slice());
        JointAction::from_index(idx, ctx.cameras).expect("agent action in range")
    }

    fn learn(&mut self, t: &TransitionView) {
        self.agent.record(Transition {
            state: t.state.as_slice().into(),
            action: t.action,
            reward: t.reward,
            next_state: t.next_state.as_slice().into(),
            terminal: t.terminal,
        });
        if self.agent.try_train().is_some()
            && self.curve_every > 0
            && self.agent.train_steps % self.curve_every == 0
        {
            self.curve.push(self.agent.last_stat());
        }
    }
}
