//! Every redistribution objective on the same chain task, ten seeds each:
//! the ground-truth skyline, randomized return decomposition, its unbiased
//! variant, and the two non-parametric uniform baselines.

use rrd::envs::make_chain_env;
use rrd::trainer::{train, EpsilonSchedule, Objective, RewardModelKind, TrainerConfig};

fn main() {
    let env = make_chain_env(10, 1.0, -1.0, 12).expect("valid chain");
    let seeds = 10u64;
    let objectives = [
        Objective::OracleDense,
        Objective::RandRd,
        Objective::RdUnbiased,
        Objective::UniformScaled,
        Objective::Ircr,
    ];

    println!("chain(10), horizon 12, optimal return 9; {seeds} seeds per objective\n");
    println!(
        "{:<16} {:>12} {:>12} {:>10}",
        "objective", "mean_final", "std_final", "mean_corr"
    );
    for objective in objectives {
        let mut finals = Vec::new();
        let mut corrs = Vec::new();
        for seed in 0..seeds {
            let config = TrainerConfig {
                objective,
                k: 4,
                m: 2,
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
        let corr = if corrs.is_empty() {
            "-".to_string()
        } else {
            format!("{:.3}", corrs.iter().sum::<f64>() / corrs.len() as f64)
        };
        println!(
            "{:<16} {:>12.3} {:>12.3} {:>10}",
            format!("{objective:?}"),
            mean,
            var.sqrt(),
            corr
        );
    }
}
