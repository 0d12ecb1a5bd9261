//! Subsequence-length ablation at a fixed transition budget: every arm
//! trains on mini-batches of m * k = 8 transitions, so longer subsequences
//! mean fewer of them. Short subsequences act like uniform redistribution
//! (strong variance regularization, poor credit separation); the full-sum
//! end recovers plain return decomposition.

use rrd::envs::make_chain_env;
use rrd::trainer::{train, EpsilonSchedule, Objective, RewardModelKind, TrainerConfig};

fn main() {
    let env = make_chain_env(10, 1.0, -1.0, 12).expect("valid chain");
    let budget = 8usize;
    let seeds = 10u64;

    println!("chain(10), horizon 12, budget m*k = {budget}, {seeds} seeds per arm\n");
    println!(
        "{:>4} {:>4} {:>12} {:>12} {:>10}",
        "k", "m", "mean_final", "std_final", "mean_corr"
    );
    for k in [1usize, 2, 4, 8] {
        let m = (budget / k).max(1);
        let mut finals = Vec::new();
        let mut corrs = Vec::new();
        for seed in 0..seeds {
            let config = TrainerConfig {
                objective: Objective::RandRd,
                k,
                m,
                reward_lr: 3e-3,
                reward_steps_per_episode: 4,
                q_lr: 0.2,
                gamma: 0.5,
                epsilon_schedule: EpsilonSchedule {
                    start: 1.0,
                    end: 0.05,
                    decay_steps: 1000,
                },
                buffer_capacity: 4000,
                total_episodes: 2000,
                seed,
                reward_model: RewardModelKind::Tabular,
                use_adam: true,
                sets_per_trajectory: 1,
                eval_every: 200,
                eval_episodes: 20,
                q_batch: 256,
            };
            let log = train(&env, &config).expect("training succeeds");
            finals.push(log.final_return().unwrap_or(0.0));
            if let Some(corr) = log.final_corr() {
                corrs.push(corr);
            }
        }
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        let var = finals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / finals.len() as f64;
        let corr = corrs.iter().sum::<f64>() / corrs.len().max(1) as f64;
        println!(
            "{k:>4} {m:>4} {mean:>12.3} {:>12.3} {corr:>10.3}",
            var.sqrt()
        );
    }
}
