//! Shared domain types: states, actions, trajectories, the replay buffer,
//! and the deterministic RNG stream used everywhere else.

use std::collections::VecDeque;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a discrete environment state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId(pub usize);

/// Index of a discrete action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

/// One environment step: `(state, action) -> next_state` taken at `timestep`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub state: StateId,
    pub action: ActionId,
    pub next_state: StateId,
    pub timestep: usize,
}

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("trajectory must contain at least one transition")]
    EmptyTrajectory,
    #[error("transition at position {position} carries timestep {found}, expected {position}")]
    TimestepMismatch { position: usize, found: usize },
    #[error("transition {timestep} ends in a different state than transition {} starts from", timestep + 1)]
    BrokenChain { timestep: usize },
    #[error("cannot sample from an empty replay buffer")]
    EmptyBuffer,
    #[error("sample count must be at least 1")]
    ZeroSampleCount,
    #[error("invalid trajectory json: {0}")]
    Json(#[from] serde_json::Error),
}

/// A complete episode: an ordered, chained state-action sequence plus the
/// single scalar feedback revealed at its end.
///
/// Invariants enforced by the constructor: at least one transition,
/// `transitions[t].timestep == t`, and consecutive transitions chain
/// (`transitions[t].next_state == transitions[t + 1].state`).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    transitions: Vec<Transition>,
    episodic_return: f64,
}

/// Wire format: `{"transitions": [[s, a, s'], ...], "episodic_return": r}`.
#[derive(Serialize, Deserialize)]
struct TrajectoryWire {
    transitions: Vec<[usize; 3]>,
    episodic_return: f64,
}

impl Trajectory {
    pub fn new(transitions: Vec<Transition>, episodic_return: f64) -> Result<Self, CoreError> {
        if transitions.is_empty() {
            return Err(CoreError::EmptyTrajectory);
        }
        for (position, tr) in transitions.iter().enumerate() {
            if tr.timestep != position {
                return Err(CoreError::TimestepMismatch {
                    position,
                    found: tr.timestep,
                });
            }
        }
        for pair in transitions.windows(2) {
            if pair[0].next_state != pair[1].state {
                return Err(CoreError::BrokenChain {
                    timestep: pair[0].timestep,
                });
            }
        }
        Ok(Self {
            transitions,
            episodic_return,
        })
    }

    /// Builds a trajectory from bare `(state, action, next_state)` triples,
    /// assigning timesteps in order.
    pub fn from_steps(
        steps: &[(usize, usize, usize)],
        episodic_return: f64,
    ) -> Result<Self, CoreError> {
        let transitions = steps
            .iter()
            .enumerate()
            .map(|(t, &(s, a, s2))| Transition {
                state: StateId(s),
                action: ActionId(a),
                next_state: StateId(s2),
                timestep: t,
            })
            .collect();
        Self::new(transitions, episodic_return)
    }

    /// Number of transitions (the horizon T of this episode).
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    /// Always false: zero-length trajectories are rejected at construction.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn episodic_return(&self) -> f64 {
        self.episodic_return
    }

    /// True if `(s, a)` occurs at any timestep.
    pub fn contains_pair(&self, s: StateId, a: ActionId) -> bool {
        self.transitions
            .iter()
            .any(|tr| tr.state == s && tr.action == a)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trajectory serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<Self, CoreError> {
        let wire: TrajectoryWire = serde_json::from_str(json)?;
        let transitions = wire
            .transitions
            .iter()
            .enumerate()
            .map(|(t, &[s, a, s2])| Transition {
                state: StateId(s),
                action: ActionId(a),
                next_state: StateId(s2),
                timestep: t,
            })
            .collect();
        Self::new(transitions, wire.episodic_return)
    }
}

impl Serialize for Trajectory {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let wire = TrajectoryWire {
            transitions: self
                .transitions
                .iter()
                .map(|tr| [tr.state.0, tr.action.0, tr.next_state.0])
                .collect(),
            episodic_return: self.episodic_return,
        };
        wire.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Trajectory {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = TrajectoryWire::deserialize(deserializer)?;
        let transitions = wire
            .transitions
            .iter()
            .enumerate()
            .map(|(t, &[s, a, s2])| Transition {
                state: StateId(s),
                action: ActionId(a),
                next_state: StateId(s2),
                timestep: t,
            })
            .collect();
        Trajectory::new(transitions, wire.episodic_return).map_err(serde::de::Error::custom)
    }
}

/// Bounded FIFO store of complete trajectories.
///
/// Capacity is measured in transitions, eviction is whole-trajectory
/// oldest-first, and the most recent push is never evicted even when it
/// alone exceeds the capacity.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    entries: VecDeque<Trajectory>,
    capacity: usize,
    stored_transitions: usize,
}

impl ReplayBuffer {
    /// `capacity` is the maximum number of stored transitions; must be ≥ 1.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "buffer capacity must be at least 1");
        Self {
            entries: VecDeque::new(),
            capacity,
            stored_transitions: 0,
        }
    }

    /// Appends a trajectory, evicting oldest trajectories until the
    /// transition budget holds again. The pushed trajectory itself is
    /// always retained.
    pub fn push(&mut self, trajectory: Trajectory) {
        self.stored_transitions += trajectory.len();
        self.entries.push_back(trajectory);
        while self.stored_transitions > self.capacity && self.entries.len() > 1 {
            let evicted = self.entries.pop_front().expect("len checked above");
            self.stored_transitions -= evicted.len();
        }
    }

    /// Number of stored trajectories.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of stored transitions.
    pub fn transition_count(&self) -> usize {
        self.stored_transitions
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &Trajectory> {
        self.entries.iter()
    }

    pub fn get(&self, index: usize) -> Option<&Trajectory> {
        self.entries.get(index)
    }

    /// Draws `count` trajectories uniformly with replacement.
    pub fn sample_trajectories(
        &self,
        count: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<Trajectory>, CoreError> {
        if self.entries.is_empty() {
            return Err(CoreError::EmptyBuffer);
        }
        if count == 0 {
            return Err(CoreError::ZeroSampleCount);
        }
        Ok((0..count)
            .map(|_| self.entries[rng.gen_range(0..self.entries.len())].clone())
            .collect())
    }
}

/// Seeded deterministic random stream.
///
/// Backed by the ChaCha12 generator: a fixed algorithm whose output for a
/// given seed is identical on every platform, so any operation taking an
/// `RngStream` is reproducible bit-for-bit from its seed.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent child stream; advances this stream by one draw.
    pub fn fork(&mut self) -> RngStream {
        RngStream::new(self.rng.next_u64())
    }

    /// Uniform draw from [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}
