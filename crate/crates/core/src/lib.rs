//! Simulation core for networks of energy-harvesting cameras that choose,
//! per decision epoch, whether to transmit a raw image to an edge server,
//! detect objects locally, or stand by.
//!
//! Modules:
//! - [`energy`]: harvesting traces, battery model, per-mode consumption
//! - [`world`]: scene ground truth, stochastic detectors, recall
//! - [`env`]: the decision environment (guard frames, reward, rollouts)
//! - [`dqn`]: from-scratch deep Q-learning (network, replay, Adam, target)
//! - [`gpforecast`]: periodic-kernel GP forecasts of harvestable energy
//! - [`policies`]: baseline policies and the learned-policy wrapper

pub mod dqn;
pub mod energy;
pub mod env;
pub mod gpforecast;
pub mod policies;
pub mod rng;
pub mod world;
