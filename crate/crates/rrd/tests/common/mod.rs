//! Shared test oracles.

use rrd::core::{ActionId, StateId};
use rrd::envs::TabularMdp;

/// Finite-horizon value iteration on the known MDP: the optimal expected
/// episodic return under the hidden reward table, with terminal absorption
/// and horizon truncation. Independent of everything the trainer does.
pub fn optimal_episodic_return(mdp: &TabularMdp) -> f64 {
    let states = mdp.state_count();
    let mut value = vec![0.0; states];
    for _ in 0..mdp.horizon() {
        let mut next = vec![0.0; states];
        for (s, entry) in next.iter_mut().enumerate() {
            if mdp.is_terminal(StateId(s)) {
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            for a in 0..mdp.action_count() {
                let mut q = mdp.hidden_reward(StateId(s), ActionId(a));
                for (s2, p) in mdp
                    .transition_row(StateId(s), ActionId(a))
                    .iter()
                    .enumerate()
                {
                    q += p * value[s2];
                }
                best = best.max(q);
            }
            *entry = best;
        }
        value = next;
    }
    mdp.initial_distribution()
        .iter()
        .enumerate()
        .map(|(s, p)| p * value[s])
        .sum()
}
