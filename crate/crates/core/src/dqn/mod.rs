//! From-scratch deep Q-learning: dense network with backprop, Adam,
//! experience replay with FIFO eviction, soft target updates, and
//! epsilon-greedy control.

mod agent;
mod net;
mod replay;

pub use agent::{argmax, td_target, CheckpointError, DqnAgent, DqnConfig, TrainStat};
pub use net::{backward, forward, AdamState, Mlp, MlpGrads, MlpScratch};
pub use replay::{ReplayMemory, Transition};
