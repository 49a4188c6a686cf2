use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use phieb_core::density::EstimatorKind;
use phieb_core::exec::Execution;
use phieb_core::harness::{
    resume_experiment, run_experiment, AgentKind, EnvConfig, ExperimentConfig, ExperimentOutput,
};
use phieb_core::theory::{sweep, SweepConfig};

/// Count-based exploration with feature visit-density pseudocounts.
#[derive(Parser)]
#[command(name = "phieb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write trial CSVs and a summary.
    #[command(allow_negative_numbers = true)]
    Run(RunArgs),
    /// Sweep randomised instances through the density similarity bounds.
    CheckTheory(TheoryArgs),
    /// Resume an experiment from its checkpoints.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// chain, rooms or dense_grid.
    #[arg(long)]
    env: Option<String>,
    /// phi-eb or eps-greedy.
    #[arg(long)]
    agent: Option<AgentKind>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// kt or empirical.
    #[arg(long)]
    estimator: Option<EstimatorKind>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Step budget per episode, overriding the environment's.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Checkpoint every N training episodes.
    #[arg(long)]
    checkpoint_interval: Option<usize>,
    /// Frozen evaluation episodes after training.
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// Run trials one after another.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, default_value_t = 10_000)]
    instances: usize,
    #[arg(long, default_value_t = 16)]
    max_dim: usize,
    #[arg(long, default_value_t = 32)]
    max_t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct ReplayArgs {
    /// A checkpoint file or a directory of checkpoints.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory; defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn build_config(args: RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(id) = &args.env {
        // Keep the file's environment parameters when it names the same one.
        if cfg.env.id() != EnvConfig::from_id(id)?.id() {
            cfg.env = EnvConfig::from_id(id)?;
        }
    }
    let a = &mut cfg.agent_config;
    a.beta = args.beta.unwrap_or(a.beta);
    a.epsilon = args.epsilon.unwrap_or(a.epsilon);
    a.alpha = args.alpha.unwrap_or(a.alpha);
    a.lambda = args.lambda.unwrap_or(a.lambda);
    a.gamma = args.gamma.unwrap_or(a.gamma);
    cfg.agent = args.agent.unwrap_or(cfg.agent);
    cfg.estimator = args.estimator.unwrap_or(cfg.estimator);
    cfg.episodes = args.episodes.unwrap_or(cfg.episodes);
    cfg.trials = args.trials.unwrap_or(cfg.trials);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.out = args.out.unwrap_or(cfg.out);
    cfg.max_steps = args.max_steps.or(cfg.max_steps);
    cfg.checkpoint_interval = args.checkpoint_interval.unwrap_or(cfg.checkpoint_interval);
    cfg.eval_episodes = args.eval_episodes.unwrap_or(cfg.eval_episodes);
    if args.sequential {
        cfg.execution = Execution::Sequential;
    }
    Ok(cfg)
}

fn report(out: &ExperimentOutput) {
    let s = &out.summary;
    println!("{} / {:?}: {} trials x {} episodes", s.env, s.agent, s.trials.len(), s.episodes);
    for t in &s.trials {
        println!(
            "  trial {} (seed {:#018x}): final mean {:.4}, {} steps, {:.0} ms",
            t.trial, t.seed, t.final_mean, t.total_steps, t.wall_ms
        );
    }
    println!(
        "final mean over last {} episodes: {:.4} (min {:.4}, max {:.4}, sd {:.4})",
        s.final_window, s.final_mean.mean, s.final_mean.min, s.final_mean.max, s.final_mean.std
    );
    if let Some(e) = &s.eval_mean {
        println!("evaluation mean: {:.4}", e.mean);
    }
    println!("results in {}", out.dir.display());
}

fn check_theory(args: TheoryArgs) -> Result<bool> {
    let cfg = SweepConfig { instances: args.instances, max_dim: args.max_dim, max_t: args.max_t, seed: args.seed };
    let report = sweep(&cfg, execution(args.sequential))?;
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => fs::write(path, json).with_context(|| format!("writing {}", path.display()))?,
        None => println!("{json}"),
    }
    if !report.passed() {
        eprintln!(
            "bound violations: amgm {}, factor l1 {}, similarity {}, naive count {}",
            report.amgm.violations,
            report.factor_l1.violations,
            report.similarity.violations,
            report.corollary.violations
        );
    }
    Ok(report.passed())
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(args) => {
            let cfg = build_config(args)?;
            let out = run_experiment(&cfg).context("experiment failed")?;
            report(&out);
        }
        Command::CheckTheory(args) => {
            if !check_theory(args)? {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Replay(args) => {
            let out = resume_experiment(&args.checkpoint, args.out.as_deref())
                .with_context(|| format!("resuming from {}", args.checkpoint.display()))?;
            report(&out);
        }
    }
    Ok(ExitCode::SUCCESS)
}
