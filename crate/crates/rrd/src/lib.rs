//! Reward redistribution for episodic reinforcement learning with
//! trajectory feedback.
//!
//! In the episodic-feedback setting the agent observes a reward of zero on
//! every step and receives a single scalar, the episodic return, at the end
//! of each trajectory. This crate turns that one number into a dense
//! per-step proxy reward by *randomized return decomposition*: a reward
//! model is regressed so that a scaled random subsequence of its per-step
//! outputs predicts the episodic return. The library carries the whole
//! objective family (the deterministic least-squares decomposition, the
//! randomized surrogate, an unbiased variant built on the
//! sampling-without-replacement variance estimator, and non-parametric
//! uniform redistribution), a tabular Q-learning training loop driven by
//! the learned proxies, and exhaustive brute-force oracles that check the
//! decomposition identities exactly on small instances.
//!
//! ## Examples
//!
//! The `examples/` directory is the guided tour; each file is runnable on
//! its own:
//!
//! ```bash
//! cargo run --release -p rrd --example train_chain        # full training loop on a chain
//! cargo run --release -p rrd --example decompose_rewards  # recover hidden rewards from returns
//! cargo run --release -p rrd --example compare_objectives # all objectives side by side
//! cargo run --release -p rrd --example sweep_k            # subsequence-length ablation
//! cargo run --release -p rrd --example keydoor            # sparse key-then-door gridworld
//! cargo run --release -p rrd --example verify_identities  # certificate checks, JSON lines
//! ```
//!
//! ## Command line
//!
//! The `rrd` binary drives the same machinery from JSON configs:
//!
//! ```bash
//! rrd run experiment.json          # per-seed CSVs + summary.json
//! rrd verify all --n 100 --seed 1  # certificate JSON lines, exit 0 iff all pass
//! rrd sweep-k experiment.json --k 1,2,4
//! rrd dump-env env.json dump.json --rollouts 3
//! ```
//!
//! ## Module map
//!
//! - [`core`]: trajectories, the replay buffer, seeded RNG streams.
//! - [`envs`]: episodic-feedback environments with hidden reward tables.
//! - [`reward_model`]: tabular / linear / network proxy reward functions
//!   with exact gradients.
//! - [`redistribution`]: subsequence sampling, the return estimator, and
//!   the loss family.
//! - [`oracle`]: exhaustive enumeration references and certificate checks.
//! - [`trainer`]: the interleaved reward-model + Q-learning loop.
//! - [`cli`]: the command implementations behind the `rrd` binary.

pub mod cli;
pub mod core;
pub mod envs;
pub mod oracle;
pub mod redistribution;
pub mod reward_model;
pub mod trainer;

pub use crate::core::{ActionId, ReplayBuffer, RngStream, StateId, Trajectory, Transition};
pub use crate::envs::{
    make_chain_env, make_keydoor_gridworld, make_random_additive_env, Agent, EnvSpec,
    EpisodicFeedbackEnv, TabularMdp,
};
pub use crate::redistribution::{LossReport, MiniBatchSpec, SubsequenceIndexSet};
pub use crate::reward_model::{Activation, GradientVector, Optimizer, RewardModel};
pub use crate::trainer::{
    evaluate_policy, proxy_truth_correlation, train, EpsilonSchedule, Objective, Policy, RunLog,
    TrainerConfig,
};
