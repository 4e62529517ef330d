//! `actorfree` command line: train, evaluate, run multi-seed experiments and
//! run the property suites.
//!
//! Exit codes: 0 success, 1 validation or I/O error, 2 divergence,
//! 3 property-suite failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use actorfree::check::{self, CheckOptions, Suite};
use actorfree::checkpoint::Checkpoint;
use actorfree::config::Config;
use actorfree::par::{self, Execution};
use actorfree::trainer::{self, Method};
use actorfree::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "actorfree",
    version,
    about = "Actor-free risk-sensitive safe RL on a cascade water tank"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write metrics, a checkpoint and the resolved config.
    Train(TrainArgs),
    /// Evaluate a checkpoint without exploration noise.
    Eval(EvalArgs),
    /// Train and evaluate every (method, alpha, seed) combination.
    Experiment(ExperimentArgs),
    /// Run the property suites.
    Check(CheckArgs),
}

#[derive(Args)]
struct Common {
    /// TOML config; missing sections and keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if needed.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "actor-free")]
    method: Method,
    /// Overrides `risk.alpha`.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training length in episodes; overrides `train.total_steps`.
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Defaults to `train.eval_episodes` of the checkpoint's config.
    #[arg(long)]
    episodes: Option<usize>,
    /// Seed of the evaluation resets; defaults to the training seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    /// Repeatable; defaults to both methods.
    #[arg(long)]
    method: Vec<Method>,
    /// Repeatable; overrides `train.alphas`.
    #[arg(long)]
    alpha: Vec<f64>,
    /// Number of seeds; overrides `train.seeds`.
    #[arg(long)]
    seeds: Option<usize>,
    /// Training length in episodes; overrides `train.total_steps`.
    #[arg(long)]
    episodes: Option<usize>,
    /// Worker threads for independent runs. 1 runs everything in order.
    #[arg(long)]
    parallel_seeds: Option<usize>,
}

#[derive(Args)]
struct CheckArgs {
    /// Solver settings for the solver suite are read from here.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeatable; defaults to every suite.
    #[arg(long, value_parser = parse_suite)]
    suite: Vec<Suite>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    probes: usize,
    /// Debug fault: negate the output-layer convex weights of the test nets.
    #[arg(long)]
    inject_negative_wzz: bool,
    /// Also probe the convexity of a trained agent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    Suite::ALL
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| {
            let names: Vec<&str> = Suite::ALL.iter().map(|x| x.name()).collect();
            format!("unknown suite {s:?}, expected one of {}", names.join(", "))
        })
}

enum Failure {
    Lib(Error),
    Property,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.cmd {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Check(a) => cmd_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Divergence(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
        Err(Failure::Property) => ExitCode::from(3),
    }
}

fn load_config(path: Option<&Path>) -> actorfree::Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn set_episodes(cfg: &mut Config, episodes: Option<usize>) {
    if let Some(n) = episodes {
        cfg.train.total_steps = n * cfg.env.episode_len;
    }
}

fn create_dir(dir: &Path) -> actorfree::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_config(cfg: &Config, dir: &Path) -> actorfree::Result<()> {
    let path = dir.join("config.toml");
    fs::write(&path, cfg.to_toml_string()).map_err(|e| Error::io(&path, e))
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let mut cfg = load_config(a.common.config.as_deref())?;
    if let Some(alpha) = a.alpha {
        cfg.risk.alpha = alpha;
    }
    set_episodes(&mut cfg, a.episodes);
    cfg.validate()?;
    let out = &a.common.out;
    create_dir(out)?;
    write_config(&cfg, out)?;

    eprintln!(
        "training {} alpha={} seed={} for {} steps",
        a.method, cfg.risk.alpha, a.seed, cfg.train.total_steps
    );
    let run = trainer::train(&cfg, a.method, a.seed)?;
    trainer::write_csv(out.join("metrics.csv"), &run.rows)?;
    Checkpoint::new(run.agent, cfg, a.seed).save(out.join("checkpoint.ckpt"))?;
    eprintln!(
        "{} episodes, {} updates -> {}",
        run.rows.len(),
        run.updates,
        out.display()
    );
    match run.failure {
        Some(msg) => Err(Error::Divergence(msg).into()),
        None => Ok(()),
    }
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let episodes = a.episodes.unwrap_or(ckpt.config.train.eval_episodes);
    let seed = a.seed.unwrap_or(ckpt.seed);
    create_dir(&a.out)?;
    let ev = trainer::evaluate(&ckpt.agent, &ckpt.config, episodes, seed)?;
    trainer::write_csv(a.out.join("traces.csv"), &ev.traces)?;
    let report = ev.report();
    trainer::write_csv(a.out.join("report.csv"), &report)?;
    for r in &report {
        println!("{:<20} {:>12.4} ± {:.4}", r.metric, r.mean, r.std);
    }
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs) -> CmdResult {
    let mut cfg = load_config(a.common.config.as_deref())?;
    if !a.alpha.is_empty() {
        cfg.train.alphas = a.alpha.clone();
    }
    if let Some(n) = a.seeds {
        cfg.train.seeds = n;
    }
    set_episodes(&mut cfg, a.episodes);
    cfg.validate()?;
    let methods = if a.method.is_empty() {
        Method::ALL.to_vec()
    } else {
        a.method.clone()
    };
    let out = &a.common.out;
    create_dir(out)?;
    write_config(&cfg, out)?;

    let specs = trainer::experiment_specs(&cfg, &methods);
    eprintln!(
        "running {} runs of {} steps",
        specs.len(),
        cfg.train.total_steps
    );
    let result = match a.parallel_seeds {
        Some(0) => return Err(Error::config("--parallel-seeds", "must be >= 1").into()),
        Some(1) => trainer::run_experiment(&cfg, &methods, Execution::Sequential),
        Some(n) => par::with_threads(n, || {
            trainer::run_experiment(&cfg, &methods, Execution::Parallel)
        }),
        None => trainer::run_experiment(&cfg, &methods, cfg.train.execution),
    }?;

    trainer::write_csv(out.join("metrics.csv"), result.metrics_rows())?;
    trainer::write_csv(out.join("aggregate.csv"), &result.aggregate)?;
    trainer::write_csv(out.join("report.csv"), &result.report_rows())?;
    let ckpt_dir = out.join("checkpoints");
    let trace_dir = out.join("traces");
    create_dir(&ckpt_dir)?;
    create_dir(&trace_dir)?;
    let failures = result.failures().len();
    for run in result.runs {
        let s = run.spec;
        let stem = format!("{}-alpha{}-seed{}", s.method, s.alpha, s.seed);
        if let Some(ev) = &run.evaluation {
            trainer::write_csv(trace_dir.join(format!("{stem}.csv")), &ev.traces)?;
        }
        let mut run_cfg = cfg.clone();
        run_cfg.risk.alpha = s.alpha;
        Checkpoint::new(run.agent, run_cfg, s.seed).save(ckpt_dir.join(format!("{stem}.ckpt")))?;
        if let Some(msg) = run.failure {
            eprintln!("run {stem} diverged: {msg}");
        }
    }
    eprintln!("wrote {}", out.display());
    if failures > 0 {
        return Err(Error::Divergence(format!("{failures} run(s) diverged")).into());
    }
    Ok(())
}

fn cmd_check(a: CheckArgs) -> CmdResult {
    let cfg = load_config(a.config.as_deref())?;
    let opts = CheckOptions {
        seed: a.seed,
        probes: a.probes,
        inject_negative_wzz: a.inject_negative_wzz,
        solver: cfg.solver.clone(),
    };
    let suites = if a.suite.is_empty() {
        Suite::ALL.to_vec()
    } else {
        a.suite.clone()
    };
    let mut ok = true;
    for suite in suites {
        let report = check::run(suite, &opts)?;
        println!("{report}");
        ok &= report.passed();
    }
    if let Some(path) = &a.checkpoint {
        let ckpt = Checkpoint::load(path)?;
        let report = check::agent_convexity(&ckpt.agent, a.probes, a.seed);
        println!("{report} (checkpoint {})", path.display());
        ok &= report.passed();
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Property)
    }
}
