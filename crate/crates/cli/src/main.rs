use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use naf_core::checks::{run_suite, SUITES};
use naf_core::config::{ConfigError, TrainConfig};
use naf_core::envs::make_env;
use naf_core::orchestrator::{evaluate_policy, load_checkpoint, streams, stream_rng, train, TrainError};

const USAGE: u8 = 2;
const RUNTIME: u8 = 1;

#[derive(Parser)]
#[command(name = "naf", about = "Continuous Q-learning with normalized advantage functions")]
struct Cli {
    /// Print every config key with its default value and exit.
    #[arg(long)]
    print_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write artifacts to --out.
    Train(TrainArgs),
    /// Run the greedy policy of a saved checkpoint.
    Eval(EvalArgs),
    /// Run the oracle self-test suites.
    Selftest(SelftestArgs),
    /// Print every config key with its default value.
    PrintDefaults,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    episodes: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value config file, applied before any flag.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a single key, e.g. --set naf.gamma=0.95 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SelftestArgs {
    /// Run only this suite.
    #[arg(long)]
    suite: Option<String>,
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn resolve(args: &TrainArgs) -> Result<TrainConfig, String> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
        cfg.apply_text(&text).map_err(|e| e.to_string())?;
    }
    let flags = [
        ("env.name", args.env.clone()),
        ("train.mode", args.mode.clone()),
        ("train.episodes", args.episodes.clone()),
        ("train.seed", args.seed.clone()),
        ("train.out", args.out.as_ref().map(|p| p.display().to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, &v).map_err(|e| e.to_string())?;
        }
    }
    for a in &args.set {
        cfg.apply_assignment(a).map_err(|e| e.to_string())?;
    }
    if cfg.env.is_none() {
        return Err("no environment given: pass --env or set env.name".into());
    }
    cfg.validate().map_err(|e| e.to_string())?;
    make_env(cfg.env.as_deref().unwrap_or_default(), &cfg.env_overrides).map_err(|e| format!("env.name: {e}"))?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> ExitCode {
    let cfg = match resolve(&args) {
        Ok(c) => c,
        Err(e) => return fail(USAGE, e),
    };
    match train(cfg) {
        Ok(outcome) => {
            if let Some(r) = outcome.final_return() {
                println!("episodes {} env_steps {} final_return {r}", outcome.trainer.episodes_done(), outcome.trainer.env_steps());
            }
            ExitCode::SUCCESS
        }
        Err(TrainError::Config(e)) => fail(USAGE, e),
        Err(e) => fail(RUNTIME, e),
    }
}

fn cmd_eval(args: EvalArgs) -> ExitCode {
    if args.episodes == 0 {
        return fail(USAGE, "--episodes must be at least 1");
    }
    let text = match std::fs::read_to_string(&args.checkpoint) {
        Ok(t) => t,
        Err(e) => return fail(USAGE, format!("reading {}: {e}", args.checkpoint.display())),
    };
    let (net, cfg) = match load_checkpoint(&text) {
        Ok(v) => v,
        Err(e) => return fail(USAGE, e),
    };
    let Some(name) = cfg.env.as_deref() else {
        return fail(USAGE, ConfigError::Invalid { key: "env.name".into(), msg: "missing from checkpoint".into() });
    };
    let env = match make_env(name, &cfg.env_overrides) {
        Ok(e) => e,
        Err(e) => return fail(USAGE, e),
    };
    if env.spec().obs_dim != net.architecture().input_dim || env.spec().action_dim != net.architecture().action_dim {
        return fail(USAGE, "checkpoint network does not match its environment");
    }
    let mut rng = stream_rng(args.seed, streams::EVAL);
    let returns = match evaluate_policy(env.as_ref(), &net, args.episodes, &mut rng) {
        Ok(r) => r,
        Err(e) => return fail(RUNTIME, e),
    };
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    println!("mean_return {mean}");
    println!("std_return {std}");
    ExitCode::SUCCESS
}

fn cmd_selftest(args: SelftestArgs) -> ExitCode {
    let names: Vec<&str> = match &args.suite {
        Some(s) if SUITES.contains(&s.as_str()) => vec![s.as_str()],
        Some(s) => return fail(USAGE, format!("unknown suite '{s}'; known: {}", SUITES.join(", "))),
        None => SUITES.to_vec(),
    };
    if let Some(f) = &args.inject_fault {
        if !SUITES.contains(&f.as_str()) {
            return fail(USAGE, format!("unknown suite '{f}'"));
        }
    }
    let mut failed = Vec::new();
    for name in names {
        let fault = args.inject_fault.as_deref() == Some(name);
        let report = run_suite(name, fault).expect("known suite");
        println!("{} {}: {}", if report.passed { "pass" } else { "FAIL" }, report.name, report.detail);
        if !report.passed {
            failed.push(report.name);
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        fail(RUNTIME, format!("failed suites: {}", failed.join(", ")))
    }
}

fn print_defaults() -> ExitCode {
    print!("{}", TrainConfig::default().render());
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.print_defaults {
        return print_defaults();
    }
    match cli.command {
        Some(Command::Train(a)) => cmd_train(a),
        Some(Command::Eval(a)) => cmd_eval(a),
        Some(Command::Selftest(a)) => cmd_selftest(a),
        Some(Command::PrintDefaults) => print_defaults(),
        None => fail(USAGE, "no command given; try --help"),
    }
}
