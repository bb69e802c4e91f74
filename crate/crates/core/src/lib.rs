//! Factory-wide dynamic flexible job-shop scheduling.
//!
//! The crate is organised bottom-up:
//!
//! * [`scenario`]: static world description, file loading, synthetic generation and
//!   per-episode demand sampling.
//! * [`factory`]: domain records (machines, lots, assignments), the trace format and an
//!   independent constraint validator.
//! * [`sim`]: the decision-point simulator driving machines, queues and shift rewards.
//! * [`guard`]: urgency scoring and the rule-based conversion override.
//! * [`nn`], [`dist`]: small dense networks, Adam and the action distributions.
//! * [`agents`]: state encoders, follower/leader policies and checkpoints.
//! * [`learner`]: rollouts, GAE, PPO updates, training and rolling-horizon inference.
//! * [`baselines`]: dispatching rules, rule-selection agents and ablation variants.
//! * [`eval`]: metrics, paired benchmarks and comparison tables.

pub mod agents;
pub mod baselines;
pub mod dist;
pub mod error;
pub mod eval;
pub mod factory;
pub mod guard;
pub mod ids;
pub mod learner;
pub mod nn;
pub mod rng;
pub mod runner;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
pub use ids::{MachineId, OpId, ProductId};
