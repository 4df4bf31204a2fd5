use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use aapi::agents::{AgentConfig, Variant};
use aapi::envs::{EnvKind, EnvSpec};
use aapi::harness::{run_suite, with_pool, ExperimentConfig};
use aapi::mdp::{solve_q, Policy, TabularMdp};
use aapi::verify::{self, Suite};
use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aapi", version, about = "Average-reward policy iteration experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded experiments and write aggregated learning curves as CSV.
    Run(RunArgs),
    /// Evaluate randomized lemma checks and write JSON lines.
    Verify(VerifyArgs),
    /// Print the gain and action values of a policy on a tabular MDP.
    Solve(SolveArgs),
}

#[derive(Parser)]
struct RunArgs {
    /// JSON experiment config; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["tabular", "deepsea", "cartpole"])]
    env: Option<String>,
    /// Number of states (tabular) or grid size N (deepsea).
    #[arg(long)]
    env_size: Option<usize>,
    /// Number of actions of the tabular chain.
    #[arg(long)]
    env_actions: Option<usize>,
    #[arg(long, value_parser = ["aapi", "kaapi", "politex", "rlsvi"])]
    agent: Option<String>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    phases: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stride: Option<usize>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Parser)]
struct VerifyArgs {
    #[arg(long, value_parser = ["bellman", "perfdiff", "relq", "aoftrl", "linf", "mcmahan", "gain"])]
    suite: String,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON lines; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Parser)]
struct SolveArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long)]
    policy: PathBuf,
}

fn default_size(kind: EnvKind) -> usize {
    match kind {
        EnvKind::Tabular | EnvKind::DeepSea => 5,
        EnvKind::CartPole => 0,
    }
}

fn experiment_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::new(
            EnvSpec::tabular(5, 2),
            AgentConfig::new(Variant::Aapi, 500, 400, aapi::DEFAULT_TABULAR_ETA),
        ),
    };
    if let Some(env) = &args.env {
        let kind: EnvKind = env.parse()?;
        if kind != cfg.env.kind {
            cfg.env = EnvSpec {
                kind,
                size: default_size(kind),
                actions: 2,
            };
        }
    }
    if let Some(n) = args.env_size {
        cfg.env.size = n;
    }
    if let Some(m) = args.env_actions {
        cfg.env.actions = m;
    }
    if let Some(agent) = &args.agent {
        cfg.agent.variant = agent.parse()?;
    }
    if let Some(tau) = args.tau {
        cfg.agent.tau = tau;
    }
    if let Some(k) = args.phases {
        cfg.agent.phases = k;
    }
    if let Some(eta) = args.eta {
        cfg.agent.eta = eta;
    }
    if let Some(runs) = args.runs {
        cfg.runs = runs;
    }
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    if args.stride.is_some() {
        cfg.stride = args.stride;
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    Ok(cfg)
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = experiment_config(&args)?;
    let table = run_suite(&cfg)?;
    if cfg.out.is_none() {
        let mut out = output(&None)?;
        table.write_csv(&mut out)?;
        out.flush()?;
    }
    Ok(())
}

fn verify_cmd(args: VerifyArgs) -> Result<()> {
    let suite: Suite = args.suite.parse()?;
    let reports = with_pool(args.threads, || verify::run_suite(suite, args.trials, args.seed))??;
    let mut out = output(&args.out)?;
    verify::write_jsonl(&reports, &mut out)?;
    out.flush()?;
    let held = reports.iter().filter(|r| r.holds).count();
    eprintln!("{}: {held}/{} hold", suite.name(), reports.len());
    Ok(())
}

fn solve(args: SolveArgs) -> Result<()> {
    let read = |p: &PathBuf| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
    let mdp: TabularMdp = serde_json::from_str(&read(&args.mdp)?).context("parsing the MDP")?;
    let pi: Policy = serde_json::from_str(&read(&args.policy)?).context("parsing the policy")?;
    let q = solve_q(&mdp, &pi)?;
    let rows: Vec<&[f64]> = (0..q.n_states).map(|x| q.q_row(x)).collect();
    let value = serde_json::json!({ "gain": q.gain, "q": rows, "v": q.v });
    println!("{}", serde_json::to_string(&value)?);
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Verify(args) => verify_cmd(args),
        Command::Solve(args) => solve(args),
    }
}
