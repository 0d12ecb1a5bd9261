use std::path::PathBuf;
use std::process::exit;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "rrd",
    about = "Reward redistribution for episodic reinforcement learning",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config: one CSV per seed plus summary.json.
    Run {
        /// Path to the experiment JSON config.
        config: PathBuf,
    },
    /// Run brute-force verification certificates.
    Verify {
        /// Suite: theorem1, propositions, gradients, or all.
        suite: String,
        /// Random instances per check.
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rerun an experiment for each subsequence length at a fixed
    /// transition budget and write sweep_k.csv.
    #[command(name = "sweep-k")]
    SweepK {
        /// Path to the experiment JSON config.
        config: PathBuf,
        /// Comma-separated subsequence lengths, e.g. --k 1,2,4.
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
    },
    /// Build an environment spec and dump its full tables as JSON.
    #[command(name = "dump-env")]
    DumpEnv {
        /// Path to the environment spec JSON.
        spec: PathBuf,
        /// Output JSON path.
        out: PathBuf,
        /// Also include this many uniform-random rollout trajectories.
        #[arg(long, default_value_t = 0)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config } => rrd::cli::cmd_run(&config),
        Command::Verify { suite, n, seed } => rrd::cli::cmd_verify(&suite, n, seed),
        Command::SweepK { config, k } => rrd::cli::cmd_sweep_k(&config, &k),
        Command::DumpEnv {
            spec,
            out,
            rollouts,
            seed,
        } => rrd::cli::cmd_dump_env(&spec, &out, rollouts, seed),
    };
    exit(code);
}
