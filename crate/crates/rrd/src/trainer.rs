//! The outer training loop: collect a rollout, push it into the replay
//! buffer, refine the reward model on the configured redistribution
//! objective, then run tabular Q-learning on the proxy rewards.
//!
//! Reward-model training sees only `(trajectory, episodic_return)` pairs;
//! the environment's hidden reward table crosses this boundary solely for
//! the `oracle_dense` skyline baseline and for reporting the proxy/truth
//! correlation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{ActionId, CoreError, ReplayBuffer, RngStream, StateId, Trajectory};
use crate::envs::{Agent, EpisodicFeedbackEnv};
use crate::redistribution::{
    loss_rand_rd_grad_on_sets, loss_rand_rd_on_sets, loss_rd_unbiased_grad_on_sets,
    loss_rd_unbiased_on_sets, sample_index_sets, LossError, LossReport,
};
use crate::reward_model::{Activation, ModelError, Optimizer, RewardModel};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("correlation undefined: inputs have zero variance")]
    ZeroVariance,
    #[error("correlation needs at least two paired samples")]
    NotEnoughData,
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Tabular epsilon-greedy policy. The greedy action is the argmax of the
/// Q-table with ties broken toward the lowest action index.
#[derive(Debug, Clone)]
pub struct Policy {
    state_count: usize,
    action_count: usize,
    q: Vec<f64>,
    pub epsilon: f64,
}

impl Policy {
    pub fn new(state_count: usize, action_count: usize) -> Self {
        Self {
            state_count,
            action_count,
            q: vec![0.0; state_count * action_count],
            epsilon: 0.0,
        }
    }

    pub fn q_value(&self, s: StateId, a: ActionId) -> f64 {
        self.q[s.0 * self.action_count + a.0]
    }

    pub fn greedy_action(&self, s: StateId) -> ActionId {
        let row = &self.q[s.0 * self.action_count..(s.0 + 1) * self.action_count];
        let mut best = 0;
        for (a, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = a;
            }
        }
        ActionId(best)
    }

    pub fn max_q(&self, s: StateId) -> f64 {
        let row = &self.q[s.0 * self.action_count..(s.0 + 1) * self.action_count];
        row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    /// One Q-learning backup with a zero bootstrap at terminal states.
    #[allow(clippy::too_many_arguments)]
    pub fn td_update(
        &mut self,
        s: StateId,
        a: ActionId,
        reward: f64,
        next: StateId,
        next_terminal: bool,
        gamma: f64,
        lr: f64,
    ) {
        let bootstrap = if next_terminal { 0.0 } else { self.max_q(next) };
        let idx = s.0 * self.action_count + a.0;
        self.q[idx] += lr * (reward + gamma * bootstrap - self.q[idx]);
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }
}

impl Agent for Policy {
    fn act(&self, state: StateId, rng: &mut RngStream) -> ActionId {
        let u = rng.next_f64();
        if u < self.epsilon {
            ActionId(rng.gen_range(0..self.action_count))
        } else {
            self.greedy_action(state)
        }
    }
}

/// Linear decay from `start` to `end` over `decay_steps` episodes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: usize,
}

impl EpsilonSchedule {
    pub fn value_at(&self, episode: usize) -> f64 {
        if episode >= self.decay_steps {
            return self.end;
        }
        let frac = episode as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// Which redistribution drives the proxy rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Randomized return decomposition on sampled subsequences.
    RandRd,
    /// The unbiased estimate of the deterministic decomposition loss.
    RdUnbiased,
    /// Non-parametric uniform redistribution (mean containing return).
    Ircr,
    /// Length-normalized uniform redistribution (mean return over length).
    UniformScaled,
    /// Skyline: trains the policy directly on the hidden ground truth.
    OracleDense,
}

impl Objective {
    fn is_parametric(self) -> bool {
        matches!(self, Objective::RandRd | Objective::RdUnbiased)
    }
}

/// Reward-model architecture selection for parametric objectives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RewardModelKind {
    #[default]
    Tabular,
    Mlp {
        hidden: Vec<usize>,
    },
}

fn default_reward_model() -> RewardModelKind {
    RewardModelKind::default()
}

fn default_sets_per_trajectory() -> usize {
    1
}

fn default_eval_every() -> usize {
    50
}

fn default_eval_episodes() -> usize {
    20
}

fn default_q_batch() -> usize {
    256
}

fn default_use_adam() -> bool {
    false
}

/// Full configuration of one training run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub objective: Objective,
    /// Transitions per sampled subsequence.
    pub k: usize,
    /// Trajectories per reward-model mini-batch.
    pub m: usize,
    pub reward_lr: f64,
    pub reward_steps_per_episode: usize,
    pub q_lr: f64,
    pub gamma: f64,
    pub epsilon_schedule: EpsilonSchedule,
    pub buffer_capacity: usize,
    pub total_episodes: usize,
    pub seed: u64,
    #[serde(default = "default_reward_model")]
    pub reward_model: RewardModelKind,
    #[serde(default = "default_use_adam")]
    pub use_adam: bool,
    /// Index sets sampled per trajectory in each mini-batch.
    #[serde(default = "default_sets_per_trajectory")]
    pub sets_per_trajectory: usize,
    /// Episodes between evaluation points.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Greedy episodes averaged per evaluation point.
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Transitions swept uniformly from the buffer per Q-learning update.
    #[serde(default = "default_q_batch")]
    pub q_batch: usize,
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail =
            |field: &'static str, reason: String| Err(TrainError::InvalidConfig { field, reason });
        if self.k == 0 {
            return fail("k", "must be at least 1".into());
        }
        if self.objective == Objective::RdUnbiased && self.k < 2 {
            return fail(
                "k",
                "must be at least 2 for the rd_unbiased objective".into(),
            );
        }
        if self.m == 0 {
            return fail("m", "must be at least 1".into());
        }
        if self.reward_lr.is_nan() || self.reward_lr <= 0.0 {
            return fail(
                "reward_lr",
                format!("must be positive (got {})", self.reward_lr),
            );
        }
        if self.q_lr.is_nan() || self.q_lr <= 0.0 {
            return fail("q_lr", format!("must be positive (got {})", self.q_lr));
        }
        if self.gamma.is_nan() || self.gamma <= 0.0 || self.gamma > 1.0 {
            return fail("gamma", format!("must lie in (0, 1] (got {})", self.gamma));
        }
        for (value, name) in [
            (self.epsilon_schedule.start, "epsilon_schedule.start"),
            (self.epsilon_schedule.end, "epsilon_schedule.end"),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return fail(
                    "epsilon_schedule",
                    format!("{name} must lie in [0, 1] (got {value})"),
                );
            }
        }
        if self.buffer_capacity == 0 {
            return fail("buffer_capacity", "must be at least 1".into());
        }
        if self.sets_per_trajectory == 0 {
            return fail("sets_per_trajectory", "must be at least 1".into());
        }
        if self.eval_every == 0 {
            return fail("eval_every", "must be at least 1".into());
        }
        if self.eval_episodes == 0 {
            return fail("eval_episodes", "must be at least 1".into());
        }
        Ok(())
    }
}

/// One evaluation point of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub episode: usize,
    pub true_return: f64,
    pub loss_total: Option<f64>,
    pub loss_rd: Option<f64>,
    pub loss_var: Option<f64>,
    pub corr: Option<f64>,
}

/// The evaluation-point log of one run, serializable as CSV with header
/// `episode,true_return,loss_total,loss_rd,loss_var,corr`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub records: Vec<EvalRecord>,
}

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("episode,true_return,loss_total,loss_rd,loss_var,corr\n");
        for r in &self.records {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.episode,
                r.true_return,
                opt(r.loss_total),
                opt(r.loss_rd),
                opt(r.loss_var),
                opt(r.corr),
            ));
        }
        out
    }

    /// True return at the last evaluation point, if any.
    pub fn final_return(&self) -> Option<f64> {
        self.records.last().map(|r| r.true_return)
    }

    /// Proxy/truth correlation at the last evaluation point, if recorded.
    pub fn final_corr(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.corr)
    }
}

/// Per-pair uniform-redistribution statistics over the current buffer.
/// Rebuilt once per episode, after the push, so lookups stay cheap during
/// the Q sweep while matching the non-parametric proxy exactly.
struct IrcrTable {
    action_count: usize,
    count: Vec<usize>,
    sum: Vec<f64>,
    sum_scaled: Vec<f64>,
}

impl IrcrTable {
    fn build(buffer: &ReplayBuffer, state_count: usize, action_count: usize) -> Self {
        let pairs = state_count * action_count;
        let mut table = Self {
            action_count,
            count: vec![0; pairs],
            sum: vec![0.0; pairs],
            sum_scaled: vec![0.0; pairs],
        };
        for trajectory in buffer.entries() {
            let mut seen = vec![false; pairs];
            let ret = trajectory.episodic_return();
            let scaled = ret / trajectory.len() as f64;
            for tr in trajectory.transitions() {
                let idx = tr.state.0 * action_count + tr.action.0;
                if !seen[idx] {
                    seen[idx] = true;
                    table.count[idx] += 1;
                    table.sum[idx] += ret;
                    table.sum_scaled[idx] += scaled;
                }
            }
        }
        table
    }

    /// Mean (optionally length-normalized) return of containing
    /// trajectories; pairs without support fall back to 0.
    fn proxy(&self, s: StateId, a: ActionId, scaled: bool) -> f64 {
        let idx = s.0 * self.action_count + a.0;
        if self.count[idx] == 0 {
            return 0.0;
        }
        let sum = if scaled {
            self.sum_scaled[idx]
        } else {
            self.sum[idx]
        };
        sum / self.count[idx] as f64
    }
}

enum ProxySource<'a> {
    Model(&'a RewardModel),
    Table { table: &'a IrcrTable, scaled: bool },
    Hidden(&'a EpisodicFeedbackEnv),
}

impl ProxySource<'_> {
    fn reward(&self, s: StateId, a: ActionId) -> Result<f64, TrainError> {
        match self {
            ProxySource::Model(model) => Ok(model.eval(s, a)?),
            ProxySource::Table { table, scaled } => Ok(table.proxy(s, a, *scaled)),
            ProxySource::Hidden(env) => Ok(env.mdp().hidden_reward(s, a)),
        }
    }
}

/// Runs the full interleaved loop and returns the evaluation log.
pub fn train(env: &EpisodicFeedbackEnv, config: &TrainerConfig) -> Result<RunLog, TrainError> {
    config.validate()?;
    let state_count = env.mdp().state_count();
    let action_count = env.mdp().action_count();

    let mut master = RngStream::new(config.seed);
    let mut init_rng = master.fork();
    let mut rollout_rng = master.fork();
    let mut reward_rng = master.fork();
    let mut q_rng = master.fork();
    let mut eval_rng = master.fork();

    let mut model = match &config.reward_model {
        RewardModelKind::Tabular => RewardModel::tabular(state_count, action_count),
        RewardModelKind::Mlp { hidden } => RewardModel::mlp(
            state_count,
            action_count,
            hidden,
            Activation::Tanh,
            &mut init_rng,
        )?,
    };
    let mut optimizer = if config.use_adam {
        Optimizer::adam(model.param_count(), config.reward_lr)
    } else {
        Optimizer::sgd(config.reward_lr)
    };
    let mut policy = Policy::new(state_count, action_count);
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut records = Vec::new();
    let mut last_loss: Option<LossReport> = None;

    for episode in 0..config.total_episodes {
        policy.epsilon = config.epsilon_schedule.value_at(episode);
        let trajectory = env.rollout(&policy, &mut rollout_rng);
        buffer.push(trajectory.clone());

        if config.objective.is_parametric() {
            for _ in 0..config.reward_steps_per_episode {
                let mut batch = buffer.sample_trajectories(config.m, &mut reward_rng)?;
                if config.sets_per_trajectory > 1 {
                    // Multiple index sets per trajectory enter the batch
                    // mean as repeated entries.
                    let base = batch.clone();
                    for _ in 1..config.sets_per_trajectory {
                        batch.extend(base.iter().cloned());
                    }
                }
                let sets = sample_index_sets(&batch, config.k, &mut reward_rng)?;
                let (loss, grad) = match config.objective {
                    Objective::RandRd => (
                        loss_rand_rd_on_sets(&model, &batch, &sets)?,
                        loss_rand_rd_grad_on_sets(&model, &batch, &sets)?,
                    ),
                    Objective::RdUnbiased => (
                        loss_rd_unbiased_on_sets(&model, &batch, &sets)?,
                        loss_rd_unbiased_grad_on_sets(&model, &batch, &sets)?,
                    ),
                    _ => unreachable!("non-parametric objectives skip reward updates"),
                };
                model = optimizer.update(&model, &grad)?;
                last_loss = Some(loss);
            }
        }

        let ircr_table = match config.objective {
            Objective::Ircr | Objective::UniformScaled => {
                Some(IrcrTable::build(&buffer, state_count, action_count))
            }
            _ => None,
        };
        let proxy = match config.objective {
            Objective::RandRd | Objective::RdUnbiased => ProxySource::Model(&model),
            Objective::Ircr => ProxySource::Table {
                table: ircr_table.as_ref().expect("built above"),
                scaled: false,
            },
            Objective::UniformScaled => ProxySource::Table {
                table: ircr_table.as_ref().expect("built above"),
                scaled: true,
            },
            Objective::OracleDense => ProxySource::Hidden(env),
        };

        // Replay the newest trajectory once, in order.
        for tr in trajectory.transitions() {
            let reward = proxy.reward(tr.state, tr.action)?;
            policy.td_update(
                tr.state,
                tr.action,
                reward,
                tr.next_state,
                env.mdp().is_terminal(tr.next_state),
                config.gamma,
                config.q_lr,
            );
        }

        // One uniform sweep over buffered transitions.
        let cumulative: Vec<usize> = buffer
            .entries()
            .scan(0usize, |acc, t| {
                *acc += t.len();
                Some(*acc)
            })
            .collect();
        let total_transitions = buffer.transition_count();
        for _ in 0..config.q_batch {
            let pick = q_rng.gen_range(0..total_transitions);
            let traj_idx = cumulative.partition_point(|&c| c <= pick);
            let trajectory = buffer.get(traj_idx).expect("index within buffer");
            let offset = pick
                - (cumulative
                    .get(traj_idx.wrapping_sub(1))
                    .copied()
                    .unwrap_or(0));
            let tr = &trajectory.transitions()[offset];
            let reward = proxy.reward(tr.state, tr.action)?;
            policy.td_update(
                tr.state,
                tr.action,
                reward,
                tr.next_state,
                env.mdp().is_terminal(tr.next_state),
                config.gamma,
                config.q_lr,
            );
        }

        let is_eval_point =
            (episode + 1) % config.eval_every == 0 || episode + 1 == config.total_episodes;
        if is_eval_point {
            let true_return = evaluate_policy(env, &policy, config.eval_episodes, &mut eval_rng);
            let corr = match config.objective {
                Objective::RandRd | Objective::RdUnbiased => {
                    let batch: Vec<Trajectory> = buffer.entries().cloned().collect();
                    proxy_truth_correlation(&model, env, &batch).ok()
                }
                Objective::Ircr | Objective::UniformScaled => {
                    let table = ircr_table.as_ref().expect("built above");
                    let scaled = config.objective == Objective::UniformScaled;
                    ircr_truth_correlation(table, env, &buffer, scaled).ok()
                }
                Objective::OracleDense => None,
            };
            records.push(EvalRecord {
                episode: episode + 1,
                true_return,
                loss_total: last_loss.map(|l| l.total),
                loss_rd: last_loss.and_then(|l| l.rd_component),
                loss_var: last_loss.and_then(|l| l.variance_component),
                corr,
            });
        }
    }

    Ok(RunLog { records })
}

/// Mean true episodic return of the greedy (epsilon = 0) version of the
/// policy over `n_episodes` fresh rollouts.
pub fn evaluate_policy(
    env: &EpisodicFeedbackEnv,
    policy: &Policy,
    n_episodes: usize,
    rng: &mut RngStream,
) -> f64 {
    assert!(n_episodes >= 1, "evaluation needs at least one episode");
    let mut greedy = policy.clone();
    greedy.epsilon = 0.0;
    let total: f64 = (0..n_episodes)
        .map(|_| env.rollout(&greedy, rng).episodic_return())
        .sum();
    total / n_episodes as f64
}

/// Pearson correlation between the model's proxy rewards and the hidden
/// ground-truth rewards over every transition of the given trajectories.
pub fn proxy_truth_correlation(
    model: &RewardModel,
    env: &EpisodicFeedbackEnv,
    trajectories: &[Trajectory],
) -> Result<f64, TrainError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for trajectory in trajectories {
        for tr in trajectory.transitions() {
            xs.push(model.eval(tr.state, tr.action)?);
            ys.push(env.mdp().hidden_reward(tr.state, tr.action));
        }
    }
    pearson(&xs, &ys)
}

fn ircr_truth_correlation(
    table: &IrcrTable,
    env: &EpisodicFeedbackEnv,
    buffer: &ReplayBuffer,
    scaled: bool,
) -> Result<f64, TrainError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for trajectory in buffer.entries() {
        for tr in trajectory.transitions() {
            xs.push(table.proxy(tr.state, tr.action, scaled));
            ys.push(env.mdp().hidden_reward(tr.state, tr.action));
        }
    }
    pearson(&xs, &ys)
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, TrainError> {
    if xs.len() < 2 {
        return Err(TrainError::NotEnoughData);
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(TrainError::ZeroVariance);
    }
    Ok(cov / (var_x * var_y).sqrt())
}
