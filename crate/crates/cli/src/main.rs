use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, ValueEnum};
use esnrls::harness::{run_experiment, write_outputs};
use esnrls::{AgentChoice, ExperimentConfig, Task};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Mdp,
    Pomdp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AgentArg {
    EsnrlsQ,
    EsnrlsSarsa,
    FnnadamQ,
    FnnadamSarsa,
}

/// Run CartPole experiments with ESN/RLS agents or FNN/Adam baselines.
#[derive(Debug, Parser)]
#[command(name = "esnrls", version)]
struct Args {
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long, value_enum)]
    agent: Option<AgentArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Training episodes per run.
    #[arg(long)]
    episodes: Option<usize>,
    /// Random-policy warm-up episodes per run.
    #[arg(long)]
    warmup: Option<usize>,
    /// Output directory for raw.csv, summary.csv and config.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// JSON file overriding any default; flags override the file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write each run's final agent as snapshot_run<r>.json.
    #[arg(long)]
    snapshot: bool,
}

fn resolve(args: &Args) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(t) = args.task {
        config.task = match t {
            TaskArg::Mdp => Task::MdpCartPole,
            TaskArg::Pomdp => Task::PomdpCartPole,
        };
    }
    if let Some(a) = args.agent {
        config.agent = match a {
            AgentArg::EsnrlsQ => AgentChoice::EsnrlsQ,
            AgentArg::EsnrlsSarsa => AgentChoice::EsnrlsSarsa,
            AgentArg::FnnadamQ => AgentChoice::FnnadamQ,
            AgentArg::FnnadamSarsa => AgentChoice::FnnadamSarsa,
        };
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(r) = args.repeats {
        config.repeats = r;
    }
    if let Some(e) = args.episodes {
        config.train_episodes = e;
    }
    if let Some(w) = args.warmup {
        config.warmup_episodes = w;
    }
    config.snapshot |= args.snapshot;
    config.validate()?;
    Ok(config)
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let config = resolve(&args)?;
    let outcome = run_experiment(&config)?;
    write_outputs(&outcome, &config, &args.out)?;
    for f in &outcome.failures {
        eprintln!("run {} aborted at episode {}: {}", f.run, f.episode, f.message);
    }
    if let Some(mean) = esnrls::harness::tail_mean_steps(&outcome.logs, 10) {
        println!("final-10 mean steps: {mean:.1}");
    }
    println!("wrote {}", args.out.display());
    if outcome.logs.is_empty() && !outcome.failures.is_empty() {
        bail!("every run failed");
    }
    Ok(())
}
