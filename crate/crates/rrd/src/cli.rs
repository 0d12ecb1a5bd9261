//! Command front end: experiment runs from JSON configs, verification
//! certificates, the subsequence-length sweep, and environment dumps.
//! Every command returns a process exit code: 0 on success, 2 for config
//! errors, 1 for runtime failures.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::core::RngStream;
use crate::envs::{EnvSpec, EpisodicFeedbackEnv, UniformRandomAgent};
use crate::oracle::{
    verify_gradients, verify_loss_decomposition, verify_objective_gap_chain,
    verify_unbiased_rd_estimator, VerificationCertificate,
};
use crate::trainer::{train, RunLog, TrainerConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// A failed command: exit code plus the message printed to stderr.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

/// Experiment description consumed by `run` and `sweep-k`. Unknown keys
/// are rejected: a silently ignored typo in a hyper-parameter name is a
/// reproducibility hazard.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub trainer: TrainerConfig,
    pub output_dir: PathBuf,
    /// Number of seeds: run `i` uses `trainer.seed + i`.
    pub repeat: usize,
}

#[derive(Debug, Serialize)]
struct RunSummary {
    seeds: Vec<u64>,
    final_returns: Vec<Option<f64>>,
    final_return_mean: Option<f64>,
    final_return_std: Option<f64>,
}

/// Runs one experiment config: one `run_<seed>.csv` per seed plus a
/// `summary.json` with the spread of final returns.
pub fn cmd_run(config_path: &Path) -> i32 {
    report(run_experiment(config_path).map(|_| ()))
}

/// Prints one JSON certificate line per check in the suite; exits 0 only
/// if every certificate passed.
pub fn cmd_verify(suite: &str, instances: usize, seed: u64) -> i32 {
    let certs = match collect_certificates(suite, instances, seed) {
        Ok(certs) => certs,
        Err(failure) => {
            eprintln!("{}", failure.message);
            return failure.code;
        }
    };
    let mut all_passed = true;
    for cert in &certs {
        println!("{}", cert.to_json_line());
        all_passed &= cert.passed;
    }
    if all_passed {
        EXIT_OK
    } else {
        EXIT_RUNTIME
    }
}

/// Reruns the experiment for each subsequence length, holding the total
/// per-batch transition budget `m * k` fixed, and writes `sweep_k.csv`.
pub fn cmd_sweep_k(config_path: &Path, k_values: &[usize]) -> i32 {
    report(run_sweep(config_path, k_values))
}

/// Builds the environment described by a spec file and dumps its full
/// tables, plus optional uniform-random rollout trajectories, as JSON.
pub fn cmd_dump_env(spec_path: &Path, out_path: &Path, rollouts: usize, seed: u64) -> i32 {
    report(dump_env(spec_path, out_path, rollouts, seed))
}

fn report(result: Result<(), Failure>) -> i32 {
    match result {
        Ok(()) => EXIT_OK,
        Err(failure) => {
            eprintln!("{}", failure.message);
            failure.code
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
    let config: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::config(format!("invalid config {}: {e}", path.display())))?;
    config
        .trainer
        .validate()
        .map_err(|e| Failure::config(e.to_string()))?;
    if config.repeat == 0 {
        return Err(Failure::config(
            "invalid config: repeat: must be at least 1",
        ));
    }
    Ok(config)
}

fn build_env(spec: &EnvSpec) -> Result<EpisodicFeedbackEnv, Failure> {
    spec.build()
        .map_err(|e| Failure::config(format!("invalid env spec: {e}")))
}

struct SeedOutcome {
    seed: u64,
    log: RunLog,
}

/// Trains every seed of the config (in parallel up to `RRD_THREADS`) and
/// writes the per-seed CSVs plus the summary into `dir`.
fn run_seeds(
    env: &EpisodicFeedbackEnv,
    config: &ExperimentConfig,
    dir: &Path,
) -> Result<Vec<SeedOutcome>, Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", dir.display())))?;
    let seeds: Vec<u64> = (0..config.repeat)
        .map(|i| config.trainer.seed + i as u64)
        .collect();
    let results: Vec<Option<Result<RunLog, String>>> =
        parallel_map(seeds.len(), thread_cap(seeds.len()), |i| {
            let mut trainer = config.trainer.clone();
            trainer.seed = seeds[i];
            train(env, &trainer).map_err(|e| e.to_string())
        });

    let mut outcomes = Vec::with_capacity(seeds.len());
    for (seed, result) in seeds.iter().zip(results) {
        let log = result
            .expect("every index is produced exactly once")
            .map_err(|e| Failure::runtime(format!("training with seed {seed} failed: {e}")))?;
        let path = dir.join(format!("run_{seed}.csv"));
        write_atomic(&path, log.to_csv().as_bytes())?;
        outcomes.push(SeedOutcome { seed: *seed, log });
    }

    let summary = summarize(&outcomes);
    let summary_json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Failure::runtime(format!("cannot serialize summary: {e}")))?;
    write_atomic(&dir.join("summary.json"), summary_json.as_bytes())?;
    Ok(outcomes)
}

fn run_experiment(config_path: &Path) -> Result<Vec<SeedOutcome>, Failure> {
    let config = load_config(config_path)?;
    let env = build_env(&config.env)?;
    run_seeds(&env, &config, &config.output_dir)
}

fn summarize(outcomes: &[SeedOutcome]) -> RunSummary {
    let finals: Vec<Option<f64>> = outcomes.iter().map(|o| o.log.final_return()).collect();
    let present: Vec<f64> = finals.iter().flatten().copied().collect();
    let (mean, std) = mean_std(&present);
    RunSummary {
        seeds: outcomes.iter().map(|o| o.seed).collect(),
        final_returns: finals,
        final_return_mean: mean,
        final_return_std: std,
    }
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

fn collect_certificates(
    suite: &str,
    instances: usize,
    seed: u64,
) -> Result<Vec<VerificationCertificate>, Failure> {
    let mut master = RngStream::new(seed);
    let mut certs = Vec::new();
    let theorem = |master: &mut RngStream, certs: &mut Vec<VerificationCertificate>| {
        certs.push(verify_loss_decomposition(instances, &mut master.fork()));
        certs.push(verify_unbiased_rd_estimator(instances, &mut master.fork()));
    };
    let propositions = |master: &mut RngStream, certs: &mut Vec<VerificationCertificate>| {
        certs.push(verify_objective_gap_chain(instances, &mut master.fork()));
    };
    let gradients = |master: &mut RngStream, certs: &mut Vec<VerificationCertificate>| {
        certs.extend(verify_gradients(instances, &mut master.fork()));
    };
    match suite {
        "theorem1" => theorem(&mut master, &mut certs),
        "propositions" => propositions(&mut master, &mut certs),
        "gradients" => gradients(&mut master, &mut certs),
        "all" => {
            theorem(&mut master, &mut certs);
            propositions(&mut master, &mut certs);
            gradients(&mut master, &mut certs);
        }
        other => {
            return Err(Failure::config(format!(
                "unknown verify suite '{other}' (expected theorem1, propositions, gradients, or all)"
            )));
        }
    }
    Ok(certs)
}

#[derive(Debug, Serialize)]
struct SweepRow {
    k: usize,
    final_return_mean: Option<f64>,
    final_return_std: Option<f64>,
    corr_mean: Option<f64>,
    clamped: bool,
}

fn run_sweep(config_path: &Path, k_values: &[usize]) -> Result<(), Failure> {
    let config = load_config(config_path)?;
    if k_values.is_empty() {
        return Err(Failure::config("sweep needs at least one k value"));
    }
    if k_values.contains(&0) {
        return Err(Failure::config("every swept k must be at least 1"));
    }
    let env = build_env(&config.env)?;
    let horizon = config.env.horizon();
    let budget = config.trainer.m * config.trainer.k;

    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let k_eff = k.min(horizon);
        let clamped = k_eff != k;
        let mut sub = config.clone();
        sub.trainer.k = k_eff;
        sub.trainer.m = (budget / k_eff).max(1);
        let dir = config.output_dir.join(format!("k_{k}"));
        let outcomes = run_seeds(&env, &sub, &dir)?;

        let finals: Vec<f64> = outcomes
            .iter()
            .filter_map(|o| o.log.final_return())
            .collect();
        let (mean, std) = mean_std(&finals);
        let corrs: Vec<f64> = outcomes.iter().filter_map(|o| o.log.final_corr()).collect();
        let (corr_mean, _) = mean_std(&corrs);
        rows.push(SweepRow {
            k,
            final_return_mean: mean,
            final_return_std: std,
            corr_mean,
            clamped,
        });
    }

    let mut csv = String::from("k,final_return_mean,final_return_std,corr_mean,clamped\n");
    for row in &rows {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.k,
            opt(row.final_return_mean),
            opt(row.final_return_std),
            opt(row.corr_mean),
            row.clamped,
        ));
    }
    write_atomic(&config.output_dir.join("sweep_k.csv"), csv.as_bytes())
}

#[derive(Serialize)]
struct EnvDump<'a> {
    spec: &'a EnvSpec,
    state_count: usize,
    action_count: usize,
    horizon: usize,
    terminal_states: Vec<usize>,
    initial_distribution: Vec<f64>,
    /// `transition_table[s][a]` is the probability row over next states.
    transition_table: Vec<Vec<Vec<f64>>>,
    /// `hidden_reward_table[s][a]` is the ground-truth per-step reward.
    hidden_reward_table: Vec<Vec<f64>>,
    trajectories: Vec<crate::core::Trajectory>,
}

fn dump_env(spec_path: &Path, out_path: &Path, rollouts: usize, seed: u64) -> Result<(), Failure> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| {
        Failure::config(format!("cannot read env spec {}: {e}", spec_path.display()))
    })?;
    let spec: EnvSpec = serde_json::from_str(&text)
        .map_err(|e| Failure::config(format!("invalid env spec {}: {e}", spec_path.display())))?;
    let env = build_env(&spec)?;
    let mdp = env.mdp();

    use crate::core::{ActionId, StateId};
    let states = mdp.state_count();
    let actions = mdp.action_count();
    let transition_table: Vec<Vec<Vec<f64>>> = (0..states)
        .map(|s| {
            (0..actions)
                .map(|a| mdp.transition_row(StateId(s), ActionId(a)).to_vec())
                .collect()
        })
        .collect();
    let hidden_reward_table: Vec<Vec<f64>> = (0..states)
        .map(|s| {
            (0..actions)
                .map(|a| mdp.hidden_reward(StateId(s), ActionId(a)))
                .collect()
        })
        .collect();
    let agent = UniformRandomAgent {
        action_count: actions,
    };
    let mut rng = RngStream::new(seed);
    let trajectories = (0..rollouts)
        .map(|_| env.rollout(&agent, &mut rng))
        .collect();

    let dump = EnvDump {
        spec: &spec,
        state_count: states,
        action_count: actions,
        horizon: mdp.horizon(),
        terminal_states: mdp.terminal_states().iter().map(|s| s.0).collect(),
        initial_distribution: mdp.initial_distribution().to_vec(),
        transition_table,
        hidden_reward_table,
        trajectories,
    };
    let json = serde_json::to_string_pretty(&dump)
        .map_err(|e| Failure::runtime(format!("cannot serialize env dump: {e}")))?;
    write_atomic(out_path, json.as_bytes())
}

/// Writes via a temporary file in the same directory plus a rename, so a
/// reader never observes a half-written file.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| Failure::runtime(format!("cannot rename into {}: {e}", path.display())))
}

fn thread_cap(jobs: usize) -> usize {
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let cap = std::env::var("RRD_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(available);
    cap.min(jobs).max(1)
}

/// Applies `f` to every index on up to `threads` workers. The output order
/// is by index, so results are independent of scheduling.
fn parallel_map<T, F>(jobs: usize, threads: usize, f: F) -> Vec<Option<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    if jobs == 0 {
        return Vec::new();
    }
    let results: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs).map(|_| None).collect());
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads.min(jobs) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= jobs {
                    break;
                }
                let value = f(i);
                results.lock().expect("no poisoned worker")[i] = Some(value);
            });
        }
    });
    results.into_inner().expect("workers joined")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_preserves_order() {
        let results = parallel_map(8, 3, |i| i * i);
        let values: Vec<usize> = results.into_iter().map(Option::unwrap).collect();
        assert_eq!(values, vec![0, 1, 4, 9, 16, 25, 36, 49]);
    }

    #[test]
    fn mean_std_of_empty_is_none() {
        assert_eq!(mean_std(&[]), (None, None));
        let (mean, std) = mean_std(&[2.0, 4.0]);
        assert_eq!(mean, Some(3.0));
        assert_eq!(std, Some(1.0));
    }

    #[test]
    fn unknown_suite_is_config_error() {
        assert!(collect_certificates("bogus", 1, 0).is_err());
    }

    #[test]
    fn suites_produce_expected_checks() {
        let theorem = collect_certificates("theorem1", 2, 0).unwrap();
        assert_eq!(theorem.len(), 2);
        let gradients = collect_certificates("gradients", 1, 0).unwrap();
        assert_eq!(gradients.len(), 3);
        let all = collect_certificates("all", 1, 0).unwrap();
        assert_eq!(all.len(), 6);
    }
}
