//! Acceptance suite: every release criterion, one test each, printing one
//! pass/fail line per criterion. Run with
//! `cargo test -p rrd --test acceptance -- --nocapture`.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use rrd::cli::{cmd_run, cmd_sweep_k, ExperimentConfig};
use rrd::core::{RngStream, Trajectory};
use rrd::envs::{make_chain_env, EnvSpec};
use rrd::oracle::{
    finite_difference_grad, verify_gradients, verify_loss_decomposition,
    verify_objective_gap_chain, verify_unbiased_rd_estimator,
};
use rrd::redistribution::{
    loss_rand_rd_grad_on_sets, loss_rand_rd_on_sets, loss_rd, loss_rd_unbiased_on_sets,
    sample_index_sets, sample_subsequence, SubsequenceIndexSet,
};
use rrd::reward_model::RewardModel;
use rrd::trainer::{train, EpsilonSchedule, Objective, RewardModelKind, TrainerConfig};

fn criterion(number: usize, name: &str, check: impl FnOnce() -> Result<String, String>) {
    match check() {
        Ok(detail) => println!("acceptance criterion {number} ({name}): PASS [{detail}]"),
        Err(reason) => {
            println!("acceptance criterion {number} ({name}): FAIL [{reason}]");
            panic!("criterion {number} ({name}) failed: {reason}");
        }
    }
}

#[test]
fn criterion_1_loss_decomposition_identity() {
    criterion(1, "loss decomposition identity", || {
        let start = Instant::now();
        let cert = verify_loss_decomposition(100, &mut RngStream::new(1));
        let elapsed = start.elapsed();
        if !cert.passed {
            return Err(format!(
                "max deviation {} above tolerance {}",
                cert.max_abs_error, cert.tolerance
            ));
        }
        if elapsed.as_secs() >= 10 {
            return Err(format!("expected < 10 s, took {elapsed:?}"));
        }
        Ok(format!(
            "100 instances, max deviation {:.2e} <= 1e-10, {elapsed:?}",
            cert.max_abs_error
        ))
    });
}

#[test]
fn criterion_2_objective_gap_chain() {
    criterion(2, "monotone objective chain", || {
        let cert = verify_objective_gap_chain(100, &mut RngStream::new(2));
        if !cert.passed {
            return Err(format!(
                "worst ordering violation {} above slack {}",
                cert.max_abs_error, cert.tolerance
            ));
        }
        Ok(format!(
            "100 instances, worst violation {:.2e} <= 1e-12",
            cert.max_abs_error
        ))
    });
}

#[test]
fn criterion_3_unbiased_estimator() {
    criterion(3, "unbiased loss estimator", || {
        let cert = verify_unbiased_rd_estimator(100, &mut RngStream::new(3));
        if !cert.passed {
            return Err(format!(
                "exhaustive mean deviates by {} from the plain loss",
                cert.max_abs_error
            ));
        }

        // Worked micro-instance: proxy rewards [1,2,3,4], K=2. The variance
        // estimates over the six subsets and their mean are fixed numbers.
        let model = RewardModel::tabular(4, 1)
            .with_params(vec![1.0, 2.0, 3.0, 4.0])
            .unwrap();
        let trajectory =
            Trajectory::from_steps(&[(0, 0, 1), (1, 0, 2), (2, 0, 3), (3, 0, 4)], 10.0).unwrap();
        let subsets = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];
        let expected = [2.0, 8.0, 18.0, 2.0, 8.0, 2.0];
        let mut penalties = Vec::new();
        for subset in subsets {
            let idx = SubsequenceIndexSet::new(subset.to_vec(), 4).unwrap();
            let sampled = loss_rand_rd_on_sets(
                &model,
                std::slice::from_ref(&trajectory),
                std::slice::from_ref(&idx),
            )
            .unwrap()
            .total;
            let unbiased = loss_rd_unbiased_on_sets(
                &model,
                std::slice::from_ref(&trajectory),
                std::slice::from_ref(&idx),
            )
            .unwrap()
            .total;
            penalties.push(sampled - unbiased);
        }
        for (got, want) in penalties.iter().zip(expected) {
            if (got - want).abs() > 1e-10 {
                return Err(format!(
                    "penalty values {penalties:?}, expected {expected:?}"
                ));
            }
        }
        let mean = penalties.iter().sum::<f64>() / penalties.len() as f64;
        if (mean - 20.0 / 3.0).abs() > 1e-10 {
            return Err(format!("penalty mean {mean}, expected 20/3"));
        }
        Ok(format!(
            "100 instances, max deviation {:.2e} <= 1e-10; micro-instance penalties {penalties:?} with mean 20/3",
            cert.max_abs_error
        ))
    });
}

#[test]
fn criterion_4_uniform_fixed_point() {
    criterion(4, "uniform redistribution fixed point", || {
        // Equal-length frozen buffer; no pair repeats inside a trajectory,
        // so set membership and occurrence counting agree.
        let trajectories = vec![
            Trajectory::from_steps(&[(0, 0, 1), (1, 0, 2), (2, 0, 3), (3, 0, 4)], 8.0).unwrap(),
            Trajectory::from_steps(&[(0, 0, 2), (2, 0, 4), (4, 0, 1), (1, 0, 5)], 4.0).unwrap(),
            Trajectory::from_steps(&[(3, 0, 1), (1, 0, 4), (4, 0, 0), (0, 0, 5)], -2.0).unwrap(),
            Trajectory::from_steps(&[(5, 0, 2), (2, 0, 3), (3, 0, 0), (0, 0, 4)], 6.0).unwrap(),
        ];
        let t = 4.0;

        // Train a tabular model to convergence on the exact K=1 loss: the
        // expanded batch that carries every singleton index set makes the
        // sampled-mode mini-batch loss equal the exact expectation.
        let mut expanded = Vec::new();
        let mut sets = Vec::new();
        for trajectory in &trajectories {
            for i in 0..trajectory.len() {
                expanded.push(trajectory.clone());
                sets.push(SubsequenceIndexSet::new(vec![i], trajectory.len()).unwrap());
            }
        }
        let mut model = RewardModel::tabular(6, 1);
        for _ in 0..20_000 {
            let grad = loss_rand_rd_grad_on_sets(&model, &expanded, &sets).unwrap();
            model = model.apply_gradient_step(&grad, 0.05).unwrap();
        }

        // Oracle: mean of R/T over the trajectories containing each pair.
        for s in 0..6usize {
            let containing: Vec<&Trajectory> = trajectories
                .iter()
                .filter(|tr| tr.contains_pair(rrd::core::StateId(s), rrd::core::ActionId(0)))
                .collect();
            if containing.is_empty() {
                continue;
            }
            let target: f64 = containing
                .iter()
                .map(|tr| tr.episodic_return() / t)
                .sum::<f64>()
                / containing.len() as f64;
            let learned = model
                .eval(rrd::core::StateId(s), rrd::core::ActionId(0))
                .unwrap();
            if (learned - target).abs() > 1e-4 {
                return Err(format!(
                    "pair ({s}, 0): learned {learned}, fixed point {target}"
                ));
            }
        }

        // Variable-length buffer: the weighted closed form must match a
        // scalar least-squares oracle (golden-section search).
        let mut buffer = rrd::core::ReplayBuffer::new(10_000);
        for (len, ret) in [(2usize, 4.0), (4, 4.0), (5, -3.0), (3, 7.5)] {
            let steps: Vec<(usize, usize, usize)> = (0..len).map(|i| (i, 0, i + 1)).collect();
            buffer.push(Trajectory::from_steps(&steps, ret).unwrap());
        }
        let closed = rrd::redistribution::uniform_fixed_point_weighted(
            &buffer,
            rrd::core::StateId(0),
            rrd::core::ActionId(0),
        )
        .unwrap();
        let objective = |r: f64| -> f64 {
            [(2usize, 4.0), (4, 4.0), (5, -3.0), (3, 7.5)]
                .iter()
                .map(|&(len, ret)| {
                    let residual = ret - len as f64 * r;
                    residual * residual
                })
                .sum()
        };
        let mut lo = -10.0;
        let mut hi = 10.0;
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if objective(m1) < objective(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let searched = (lo + hi) / 2.0;
        if (closed - searched).abs() > 1e-6 {
            return Err(format!(
                "closed form {closed} vs least-squares search {searched}"
            ));
        }
        Ok(format!(
            "K=1 training matched mean(R/T) within 1e-4; weighted form matched search within 1e-6 ({closed:.6})"
        ))
    });
}

#[test]
fn criterion_5_gradient_correctness() {
    criterion(5, "gradient correctness", || {
        // 7 instances per model family = 21 random instances total.
        let certs = verify_gradients(7, &mut RngStream::new(5));
        let mut worst: f64 = 0.0;
        for cert in &certs {
            if !cert.passed {
                return Err(format!(
                    "{}: max relative error {} above 1e-4",
                    cert.check_name, cert.max_abs_error
                ));
            }
            worst = worst.max(cert.max_abs_error);
        }

        // One explicit frozen-set check through the public oracle.
        let mut rng = RngStream::new(55);
        let model = RewardModel::tabular(3, 2)
            .with_params((0..6).map(|_| rng.next_f64() * 2.0 - 1.0).collect())
            .unwrap();
        let trajectory =
            Trajectory::from_steps(&[(0, 1, 1), (1, 0, 2), (2, 1, 0), (0, 0, 1)], 3.0).unwrap();
        let batch = vec![trajectory];
        let sets = sample_index_sets(&batch, 2, &mut rng).unwrap();
        let analytic = loss_rand_rd_grad_on_sets(&model, &batch, &sets).unwrap();
        let numeric = finite_difference_grad(
            &model,
            |m| loss_rand_rd_on_sets(m, &batch, &sets).unwrap().total,
            1e-5,
        );
        for (a, n) in analytic.values().iter().zip(numeric.values()) {
            let rel = (a - n).abs() / (a.abs() + 1e-8);
            if rel > 1e-4 {
                return Err(format!("frozen-set check: relative error {rel}"));
            }
        }
        Ok(format!(
            "21 instances across tabular/linear/mlp, worst relative error {worst:.2e} <= 1e-4"
        ))
    });
}

#[test]
fn criterion_6_sampler_law() {
    criterion(6, "subsequence sampler law", || {
        // T=4, K=2: all six subsets within 3 sigma of uniform.
        let draws = 60_000usize;
        let expected = draws as f64 / 6.0;
        let sigma = (draws as f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        let mut rng = RngStream::new(6);
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..draws {
            let idx = sample_subsequence(4, 2, &mut rng).unwrap();
            *counts.entry(idx.indices().to_vec()).or_insert(0usize) += 1;
        }
        if counts.len() != 6 {
            return Err(format!("saw {} distinct subsets, expected 6", counts.len()));
        }
        for (subset, count) in &counts {
            if (*count as f64 - expected).abs() > 3.0 * sigma {
                return Err(format!(
                    "subset {subset:?}: {count} draws vs expected {expected} (3 sigma {:.1})",
                    3.0 * sigma
                ));
            }
        }

        // T=5, K=1: every index frequency within 3 sigma of K/T = 0.2.
        let n = 100_000usize;
        let p = 0.2;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let mut hits = [0usize; 5];
        let mut rng = RngStream::new(66);
        for _ in 0..n {
            hits[sample_subsequence(5, 1, &mut rng).unwrap().indices()[0]] += 1;
        }
        for (index, &count) in hits.iter().enumerate() {
            let freq = count as f64 / n as f64;
            if (freq - p).abs() > 3.0 * sigma {
                return Err(format!(
                    "index {index}: frequency {freq} vs 0.2 (3 sigma {:.4})",
                    3.0 * sigma
                ));
            }
        }
        Ok(format!(
            "subset counts within 3 sigma ({:.1}); inclusion frequencies within 3 sigma ({:.4})",
            3.0 * (60_000.0f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt(),
            3.0 * sigma
        ))
    });
}

fn recovery_trainer_config(seed: u64) -> TrainerConfig {
    TrainerConfig {
        objective: Objective::RandRd,
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
        eval_every: 100,
        eval_episodes: 20,
        q_batch: 256,
    }
}

#[test]
fn criterion_7_policy_recovery() {
    criterion(7, "desk-scale policy recovery", || {
        let start = Instant::now();
        let env = make_chain_env(10, 1.0, -1.0, 12).unwrap();
        let optimum = common::optimal_episodic_return(env.mdp());
        let seeds = 30u64;
        let mut finals = Vec::new();
        let mut corrs = Vec::new();
        for seed in 0..seeds {
            let log = train(&env, &recovery_trainer_config(seed)).unwrap();
            finals.push(log.final_return().ok_or("run produced no records")?);
            corrs.push(log.final_corr().ok_or("run recorded no correlation")?);
        }
        let mean_final = finals.iter().sum::<f64>() / seeds as f64;
        let mean_corr = corrs.iter().sum::<f64>() / seeds as f64;
        let elapsed = start.elapsed();
        if mean_final < 0.95 * optimum {
            return Err(format!(
                "mean final return {mean_final:.3} below 95% of optimum {optimum:.3}"
            ));
        }
        if mean_corr < 0.8 {
            return Err(format!("mean final correlation {mean_corr:.3} below 0.8"));
        }
        if elapsed.as_secs() > 300 {
            return Err(format!("expected <= 5 min, took {elapsed:?}"));
        }
        Ok(format!(
            "30 seeds: mean return {mean_final:.3} >= 0.95 * {optimum:.3}, mean correlation {mean_corr:.3} >= 0.8, {elapsed:?}"
        ))
    });
}

fn sweep_experiment_config(output_dir: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        env: EnvSpec::Chain {
            n_states: 10,
            step_reward_right: 1.0,
            step_reward_left: -1.0,
            horizon: 12,
        },
        trainer: recovery_trainer_config(0),
        output_dir,
        repeat: 30,
    }
}

#[test]
fn criterion_8_k_ordering() {
    criterion(8, "subsequence-length ordering", || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let config = sweep_experiment_config(dir.path().join("sweep"));
        let config_path = dir.path().join("config.json");
        std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap())
            .map_err(|e| e.to_string())?;
        let code = cmd_sweep_k(&config_path, &[1, 4]);
        if code != 0 {
            return Err(format!("sweep exited with code {code}"));
        }
        let csv = std::fs::read_to_string(dir.path().join("sweep/sweep_k.csv"))
            .map_err(|e| e.to_string())?;
        let mut means = std::collections::BTreeMap::new();
        for line in csv.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            let k: usize = fields[0].parse().map_err(|_| format!("bad row: {line}"))?;
            let mean: f64 = fields[1].parse().map_err(|_| format!("bad row: {line}"))?;
            means.insert(k, mean);
        }
        let k1 = *means.get(&1).ok_or("missing k=1 row")?;
        let k4 = *means.get(&4).ok_or("missing k=4 row")?;
        if k4 < k1 {
            return Err(format!(
                "mean final return for K=4 ({k4:.3}) below K=1 ({k1:.3})"
            ));
        }
        Ok(format!(
            "budget m*k=8 over 30 seeds: mean final return K=4 {k4:.3} >= K=1 {k1:.3}"
        ))
    });
}

#[test]
fn criterion_9_byte_identical_runs() {
    criterion(9, "deterministic run outputs", || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut config = sweep_experiment_config(dir.path().join("out"));
        config.repeat = 2;
        config.trainer.total_episodes = 150;
        config.trainer.eval_every = 50;
        let config_path = dir.path().join("config.json");
        std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap())
            .map_err(|e| e.to_string())?;

        let read_outputs = || -> Result<Vec<(String, Vec<u8>)>, String> {
            let mut files = Vec::new();
            for name in ["run_0.csv", "run_1.csv", "summary.json"] {
                let path = dir.path().join("out").join(name);
                files.push((
                    name.to_string(),
                    std::fs::read(&path).map_err(|e| format!("{name}: {e}"))?,
                ));
            }
            Ok(files)
        };

        if cmd_run(&config_path) != 0 {
            return Err("first run failed".into());
        }
        let first = read_outputs()?;
        if cmd_run(&config_path) != 0 {
            return Err("second run failed".into());
        }
        let second = read_outputs()?;
        for ((name, a), (_, b)) in first.iter().zip(&second) {
            if a != b {
                return Err(format!("{name} differs between identical runs"));
            }
        }
        Ok("run_<seed>.csv and summary.json byte-identical across reruns".into())
    });
}

#[test]
fn acceptance_sanity_loss_rd_zero_on_exact_fit() {
    // Keeps the suite honest about the basic regression target: a model
    // that reproduces the hidden rewards has zero decomposition loss.
    let env = make_chain_env(5, 1.0, -1.0, 20).unwrap();
    let mut table = vec![0.0; 10];
    for s in 0..5 {
        for a in 0..2 {
            table[s * 2 + a] = env
                .mdp()
                .hidden_reward(rrd::core::StateId(s), rrd::core::ActionId(a));
        }
    }
    let model = RewardModel::tabular(5, 2).with_params(table).unwrap();
    let agent = rrd::envs::UniformRandomAgent { action_count: 2 };
    let mut rng = RngStream::new(0);
    let batch: Vec<Trajectory> = (0..10).map(|_| env.rollout(&agent, &mut rng)).collect();
    let report = loss_rd(&model, &batch).unwrap();
    assert!(report.total.abs() < 1e-20);
}
