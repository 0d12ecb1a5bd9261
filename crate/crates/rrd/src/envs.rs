//! Episodic-feedback environments: tabular MDPs whose per-step rewards are
//! hidden from the agent. Every step observes reward 0; the sum of hidden
//! rewards along the realized path is revealed once, at episode end.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{ActionId, RngStream, StateId, Trajectory, Transition};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("chain environments need at least 2 states (got {0})")]
    TooFewChainStates(usize),
    #[error("grid must be at least 2x2 (got {width}x{height})")]
    GridTooSmall { width: usize, height: usize },
    #[error("state_count, action_count, and horizon must all be at least 1")]
    EmptyDimension,
    #[error("transition row for state {state}, action {action} sums to {sum:e}, expected 1")]
    UnnormalizedRow {
        state: usize,
        action: usize,
        sum: f64,
    },
    #[error("initial distribution sums to {sum:e}, expected 1")]
    UnnormalizedInitial { sum: f64 },
    #[error("mdp table has wrong shape: {0}")]
    TableShape(String),
}

const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Finite MDP with an explicit hidden per-step reward table.
///
/// The hidden rewards define the ground truth the episodic feedback is the
/// sum of; nothing outside this module and the skyline training baseline
/// reads them during learning.
#[derive(Debug, Clone, Serialize)]
pub struct TabularMdp {
    state_count: usize,
    action_count: usize,
    /// `transition_rows[s * A + a]` is a probability vector over next states.
    transition_rows: Vec<Vec<f64>>,
    /// `hidden_rewards[s * A + a]` is the ground-truth per-step reward.
    hidden_rewards: Vec<f64>,
    initial_distribution: Vec<f64>,
    horizon: usize,
    terminal: Vec<bool>,
}

impl TabularMdp {
    pub fn new(
        state_count: usize,
        action_count: usize,
        transition_rows: Vec<Vec<f64>>,
        hidden_rewards: Vec<f64>,
        initial_distribution: Vec<f64>,
        horizon: usize,
        terminal: Vec<bool>,
    ) -> Result<Self, EnvError> {
        if state_count == 0 || action_count == 0 || horizon == 0 {
            return Err(EnvError::EmptyDimension);
        }
        let pairs = state_count * action_count;
        if transition_rows.len() != pairs {
            return Err(EnvError::TableShape(format!(
                "expected {pairs} transition rows, got {}",
                transition_rows.len()
            )));
        }
        if hidden_rewards.len() != pairs {
            return Err(EnvError::TableShape(format!(
                "expected {pairs} hidden rewards, got {}",
                hidden_rewards.len()
            )));
        }
        if initial_distribution.len() != state_count || terminal.len() != state_count {
            return Err(EnvError::TableShape(
                "initial distribution and terminal flags must have one entry per state".into(),
            ));
        }
        for (i, row) in transition_rows.iter().enumerate() {
            if row.len() != state_count {
                return Err(EnvError::TableShape(format!(
                    "transition row {i} has {} entries, expected {state_count}",
                    row.len()
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(EnvError::UnnormalizedRow {
                    state: i / action_count,
                    action: i % action_count,
                    sum,
                });
            }
        }
        let init_sum: f64 = initial_distribution.iter().sum();
        if (init_sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(EnvError::UnnormalizedInitial { sum: init_sum });
        }
        Ok(Self {
            state_count,
            action_count,
            transition_rows,
            hidden_rewards,
            initial_distribution,
            horizon,
            terminal,
        })
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn hidden_reward(&self, s: StateId, a: ActionId) -> f64 {
        self.hidden_rewards[s.0 * self.action_count + a.0]
    }

    pub fn is_terminal(&self, s: StateId) -> bool {
        self.terminal[s.0]
    }

    pub fn transition_row(&self, s: StateId, a: ActionId) -> &[f64] {
        &self.transition_rows[s.0 * self.action_count + a.0]
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial_distribution
    }

    pub fn terminal_states(&self) -> Vec<StateId> {
        (0..self.state_count)
            .filter(|&s| self.terminal[s])
            .map(StateId)
            .collect()
    }
}

/// Chooses actions during rollouts. Implemented by trained policies and by
/// plain `Fn(StateId) -> ActionId` closures for scripted behavior.
pub trait Agent {
    fn act(&self, state: StateId, rng: &mut RngStream) -> ActionId;
}

impl<F: Fn(StateId) -> ActionId> Agent for F {
    fn act(&self, state: StateId, _rng: &mut RngStream) -> ActionId {
        self(state)
    }
}

/// Picks uniformly among all actions.
pub struct UniformRandomAgent {
    pub action_count: usize,
}

impl Agent for UniformRandomAgent {
    fn act(&self, _state: StateId, rng: &mut RngStream) -> ActionId {
        use rand::Rng;
        ActionId(rng.gen_range(0..self.action_count))
    }
}

/// An MDP wrapped so that rollouts reveal rewards only as one episodic sum.
#[derive(Debug, Clone, Serialize)]
pub struct EpisodicFeedbackEnv {
    mdp: TabularMdp,
}

impl EpisodicFeedbackEnv {
    pub fn new(mdp: TabularMdp) -> Self {
        Self { mdp }
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    /// Runs one episode: ends on entering a terminal state or after
    /// `horizon` transitions, whichever comes first. The trajectory's
    /// episodic return is the sum of hidden rewards along the realized path.
    pub fn rollout(&self, agent: &impl Agent, rng: &mut RngStream) -> Trajectory {
        let mut state = StateId(sample_categorical(self.mdp.initial_distribution(), rng));
        debug_assert!(
            !self.mdp.is_terminal(state),
            "initial states must be non-terminal"
        );
        let mut transitions = Vec::new();
        let mut total = 0.0;
        for t in 0..self.mdp.horizon() {
            let action = agent.act(state, rng);
            let next = StateId(sample_categorical(
                self.mdp.transition_row(state, action),
                rng,
            ));
            total += self.mdp.hidden_reward(state, action);
            transitions.push(Transition {
                state,
                action,
                next_state: next,
                timestep: t,
            });
            state = next;
            if self.mdp.is_terminal(state) {
                break;
            }
        }
        Trajectory::new(transitions, total).expect("rollout produces a valid trajectory")
    }
}

fn sample_categorical(probs: &[f64], rng: &mut RngStream) -> usize {
    let u = rng.next_f64();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// 1-D chain: action 0 moves left (clamped at state 0), action 1 moves
/// right; the rightmost state is terminal. Hidden reward is
/// `step_reward_right` for every right move and `step_reward_left` for
/// every left move, regardless of position.
pub fn make_chain_env(
    n_states: usize,
    step_reward_right: f64,
    step_reward_left: f64,
    horizon: usize,
) -> Result<EpisodicFeedbackEnv, EnvError> {
    if n_states < 2 {
        return Err(EnvError::TooFewChainStates(n_states));
    }
    let mut rows = Vec::with_capacity(n_states * 2);
    let mut rewards = Vec::with_capacity(n_states * 2);
    for s in 0..n_states {
        for a in 0..2 {
            let dest = if a == 0 {
                s.saturating_sub(1)
            } else {
                (s + 1).min(n_states - 1)
            };
            let mut row = vec![0.0; n_states];
            row[dest] = 1.0;
            rows.push(row);
            rewards.push(if a == 0 {
                step_reward_left
            } else {
                step_reward_right
            });
        }
    }
    let mut initial = vec![0.0; n_states];
    initial[0] = 1.0;
    let mut terminal = vec![false; n_states];
    terminal[n_states - 1] = true;
    let mdp = TabularMdp::new(n_states, 2, rows, rewards, initial, horizon, terminal)?;
    Ok(EpisodicFeedbackEnv::new(mdp))
}

/// Random MDP with Dirichlet(1) transition rows and hidden rewards drawn
/// i.i.d. uniform on [-1, 1]. No terminal states: every episode runs to the
/// horizon, so all trajectories share the same length.
pub fn make_random_additive_env(
    state_count: usize,
    action_count: usize,
    horizon: usize,
    rng: &mut RngStream,
) -> Result<EpisodicFeedbackEnv, EnvError> {
    if state_count == 0 || action_count == 0 || horizon == 0 {
        return Err(EnvError::EmptyDimension);
    }
    let pairs = state_count * action_count;
    let mut rows = Vec::with_capacity(pairs);
    let mut rewards = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        // A symmetric Dirichlet(1) draw is a vector of normalized
        // unit exponentials.
        let mut row: Vec<f64> = (0..state_count)
            .map(|_| -(1.0 - rng.next_f64()).ln())
            .collect();
        let sum: f64 = row.iter().sum();
        if sum == 0.0 {
            row = vec![1.0 / state_count as f64; state_count];
        } else {
            for p in &mut row {
                *p /= sum;
            }
        }
        // Force exact normalization so the constructor tolerance holds.
        let resid: f64 = 1.0 - row.iter().sum::<f64>();
        row[state_count - 1] += resid;
        rows.push(row);
        rewards.push(rng.next_f64() * 2.0 - 1.0);
    }
    let initial = {
        let mut init = vec![1.0 / state_count as f64; state_count];
        let resid: f64 = 1.0 - init.iter().sum::<f64>();
        init[state_count - 1] += resid;
        init
    };
    let mdp = TabularMdp::new(
        state_count,
        action_count,
        rows,
        rewards,
        initial,
        horizon,
        vec![false; state_count],
    )?;
    Ok(EpisodicFeedbackEnv::new(mdp))
}

/// Grid with a key cell and a door cell. Picking up the key (entering its
/// cell for the first time) hides +0.5 in the feedback; entering the door
/// while holding the key hides +1.0 and ends the episode. Without the key
/// the door is inert. States encode `(position, key_held)`, so
/// `state_count == width * height * 2`.
pub fn make_keydoor_gridworld(
    width: usize,
    height: usize,
    horizon: usize,
) -> Result<EpisodicFeedbackEnv, EnvError> {
    if width < 2 || height < 2 {
        return Err(EnvError::GridTooSmall { width, height });
    }
    let cells = width * height;
    let state_count = cells * 2;
    let action_count = 4; // up, down, left, right
    let key_pos = width - 1; // top-right corner
    let door_pos = (height - 1) * width + (width - 1); // bottom-right corner
    let move_to = |pos: usize, a: usize| -> usize {
        let (x, y) = (pos % width, pos / width);
        let (nx, ny) = match a {
            0 => (x, y.saturating_sub(1)),
            1 => (x, (y + 1).min(height - 1)),
            2 => (x.saturating_sub(1), y),
            _ => ((x + 1).min(width - 1), y),
        };
        ny * width + nx
    };

    let mut rows = Vec::with_capacity(state_count * action_count);
    let mut rewards = Vec::with_capacity(state_count * action_count);
    for state in 0..state_count {
        let pos = state / 2;
        let key = state % 2;
        for a in 0..action_count {
            let next_pos = move_to(pos, a);
            let next_key = if key == 1 || next_pos == key_pos {
                1
            } else {
                0
            };
            let mut reward = 0.0;
            if key == 0 && next_pos == key_pos {
                reward += 0.5;
            }
            if key == 1 && next_pos == door_pos {
                reward += 1.0;
            }
            let mut row = vec![0.0; state_count];
            row[next_pos * 2 + next_key] = 1.0;
            rows.push(row);
            rewards.push(reward);
        }
    }
    let mut initial = vec![0.0; state_count];
    initial[0] = 1.0; // top-left corner, no key
    let mut terminal = vec![false; state_count];
    terminal[door_pos * 2 + 1] = true;
    let mdp = TabularMdp::new(
        state_count,
        action_count,
        rows,
        rewards,
        initial,
        horizon,
        terminal,
    )?;
    Ok(EpisodicFeedbackEnv::new(mdp))
}

/// Declarative environment description, loadable from JSON:
/// `{"type": "chain" | "random" | "keydoor", ...parameters}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvSpec {
    Chain {
        n_states: usize,
        step_reward_right: f64,
        step_reward_left: f64,
        horizon: usize,
    },
    Random {
        state_count: usize,
        action_count: usize,
        horizon: usize,
        seed: u64,
    },
    Keydoor {
        width: usize,
        height: usize,
        horizon: usize,
    },
}

impl EnvSpec {
    pub fn build(&self) -> Result<EpisodicFeedbackEnv, EnvError> {
        match *self {
            EnvSpec::Chain {
                n_states,
                step_reward_right,
                step_reward_left,
                horizon,
            } => make_chain_env(n_states, step_reward_right, step_reward_left, horizon),
            EnvSpec::Random {
                state_count,
                action_count,
                horizon,
                seed,
            } => {
                let mut rng = RngStream::new(seed);
                make_random_additive_env(state_count, action_count, horizon, &mut rng)
            }
            EnvSpec::Keydoor {
                width,
                height,
                horizon,
            } => make_keydoor_gridworld(width, height, horizon),
        }
    }

    pub fn horizon(&self) -> usize {
        match *self {
            EnvSpec::Chain { horizon, .. }
            | EnvSpec::Random { horizon, .. }
            | EnvSpec::Keydoor { horizon, .. } => horizon,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn always_right() -> impl Agent {
        |_s: StateId| ActionId(1)
    }

    #[test]
    fn chain_rollout_sums_hidden_rewards() {
        let env = make_chain_env(3, 1.0, -1.0, 20).unwrap();
        let mut rng = RngStream::new(0);
        let tr = env.rollout(&always_right(), &mut rng);
        assert_eq!(tr.len(), 2);
        assert_eq!(tr.episodic_return(), 2.0);
    }

    #[test]
    fn chain_mixed_rewards() {
        // 3-state chain with per-move rewards 0.5 (right) and -0.25 (left):
        // right, left, right, right from state 0 gives 0.5*3 - 0.25.
        let env = make_chain_env(3, 0.5, -0.25, 20).unwrap();
        let script = [1usize, 0, 1, 1];
        let step = std::cell::Cell::new(0);
        let agent = move |_s: StateId| {
            let a = script[step.get()];
            step.set(step.get() + 1);
            ActionId(a)
        };
        let mut rng = RngStream::new(0);
        let tr = env.rollout(&agent, &mut rng);
        assert_eq!(tr.len(), 4);
        assert!((tr.episodic_return() - 1.25).abs() < 1e-12);
    }

    #[test]
    fn chain_optimal_returns() {
        let env = make_chain_env(5, 1.0, -1.0, 20).unwrap();
        let mut rng = RngStream::new(0);
        let tr = env.rollout(&always_right(), &mut rng);
        assert_eq!(tr.len(), 4);
        assert_eq!(tr.episodic_return(), 4.0);

        let env = make_chain_env(2, 1.0, 0.0, 20).unwrap();
        let tr = env.rollout(&always_right(), &mut rng);
        assert_eq!(tr.episodic_return(), 1.0);
    }

    #[test]
    fn chain_horizon_truncation() {
        let env = make_chain_env(5, 1.0, -1.0, 3).unwrap();
        let mut rng = RngStream::new(0);
        let tr = env.rollout(&always_right(), &mut rng);
        assert_eq!(tr.len(), 3);
        assert_eq!(tr.episodic_return(), 3.0);
    }

    #[test]
    fn chain_rejects_one_state() {
        assert!(matches!(
            make_chain_env(1, 1.0, -1.0, 5),
            Err(EnvError::TooFewChainStates(1))
        ));
    }

    #[test]
    fn rollout_is_deterministic() {
        let mut seed_rng = RngStream::new(7);
        let env = make_random_additive_env(4, 3, 6, &mut seed_rng).unwrap();
        let agent = UniformRandomAgent { action_count: 3 };
        let a = env.rollout(&agent, &mut RngStream::new(11));
        let b = env.rollout(&agent, &mut RngStream::new(11));
        assert_eq!(a, b);
    }

    #[test]
    fn random_env_generation_is_deterministic() {
        let a = make_random_additive_env(2, 2, 4, &mut RngStream::new(7)).unwrap();
        let b = make_random_additive_env(2, 2, 4, &mut RngStream::new(7)).unwrap();
        for s in 0..2 {
            for act in 0..2 {
                assert_eq!(
                    a.mdp().transition_row(StateId(s), ActionId(act)),
                    b.mdp().transition_row(StateId(s), ActionId(act))
                );
                assert_eq!(
                    a.mdp().hidden_reward(StateId(s), ActionId(act)),
                    b.mdp().hidden_reward(StateId(s), ActionId(act))
                );
            }
        }
    }

    #[test]
    fn random_env_rows_normalized() {
        let env = make_random_additive_env(5, 3, 4, &mut RngStream::new(3)).unwrap();
        for s in 0..5 {
            for a in 0..3 {
                let sum: f64 = env
                    .mdp()
                    .transition_row(StateId(s), ActionId(a))
                    .iter()
                    .sum();
                assert!((sum - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rollout_return_matches_hidden_resum() {
        // Oracle: re-walk the trajectory against the hidden table.
        let env = make_random_additive_env(4, 2, 9, &mut RngStream::new(19)).unwrap();
        let agent = UniformRandomAgent { action_count: 2 };
        for seed in 0..20 {
            let tr = env.rollout(&agent, &mut RngStream::new(seed));
            let resum: f64 = tr
                .transitions()
                .iter()
                .map(|t| env.mdp().hidden_reward(t.state, t.action))
                .sum();
            assert!((tr.episodic_return() - resum).abs() <= 1e-10);
        }
    }

    #[test]
    fn keydoor_optimal_path() {
        let env = make_keydoor_gridworld(2, 2, 10).unwrap();
        assert_eq!(env.mdp().state_count(), 8);
        // Start top-left without key; key top-right; door bottom-right.
        let agent = |s: StateId| {
            if s.0.is_multiple_of(2) {
                ActionId(3) // move right toward the key
            } else {
                ActionId(1) // key held: move down toward the door
            }
        };
        let mut rng = RngStream::new(0);
        let tr = env.rollout(&agent, &mut rng);
        assert_eq!(tr.len(), 2);
        assert!((tr.episodic_return() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn keydoor_without_key_scores_zero() {
        let env = make_keydoor_gridworld(3, 3, 12).unwrap();
        // Wander the left column only; the key sits in the right column.
        let script = [1usize, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0];
        let step = std::cell::Cell::new(0);
        let agent = move |_s: StateId| {
            let a = script[step.get() % script.len()];
            step.set(step.get() + 1);
            ActionId(a)
        };
        let mut rng = RngStream::new(0);
        let tr = env.rollout(&agent, &mut rng);
        assert_eq!(tr.len(), 12);
        assert_eq!(tr.episodic_return(), 0.0);
    }

    #[test]
    fn keydoor_state_count_encoding() {
        let env = make_keydoor_gridworld(4, 3, 5).unwrap();
        assert_eq!(env.mdp().state_count(), 4 * 3 * 2);
    }

    #[test]
    fn env_spec_round_trip() {
        let spec = EnvSpec::Chain {
            n_states: 10,
            step_reward_right: 1.0,
            step_reward_left: -1.0,
            horizon: 12,
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains(r#""type":"chain""#));
        let back: EnvSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        assert!(back.build().is_ok());
    }

    #[test]
    fn env_spec_rejects_unknown_fields() {
        let json = r#"{"type":"chain","n_states":5,"step_reward_right":1.0,"step_reward_left":-1.0,"horizon":3,"bogus":1}"#;
        assert!(serde_json::from_str::<EnvSpec>(json).is_err());
    }
}
