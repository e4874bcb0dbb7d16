use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use etcons::config::{load_config, preset, ScenarioConfig, PRESET_NAMES};
use etcons::pipeline::{self, Stage, StageError};
use serde_json::json;

#[derive(Parser)]
#[command(name = "etcons", version, about = "Event-triggered consensus simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spanning-tree decomposition of the configured graph
    Decompose(RunArgs),
    /// Persistence-of-excitation certificate for the decomposition tree
    PeCheck(RunArgs),
    /// Convergence and inter-event constants
    Constants(RunArgs),
    /// Run the full pipeline and write artifacts
    Simulate(RunArgs),
    /// Run the full pipeline and report the checks only
    Check(RunArgs),
    /// Run one pipeline per combination of the listed parameters
    Sweep(SweepArgs),
    /// Print a built-in scenario
    Preset {
        /// Preset name; omit to list them
        name: Option<String>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Overrides {
    /// Trigger threshold c
    #[arg(long, allow_hyphen_values = true)]
    c: Option<f64>,
    /// Trigger decay beta
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    /// Control gain k
    #[arg(long, allow_hyphen_values = true)]
    k: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    t_end: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    step: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SweepArgs {
    config: PathBuf,
    /// Comma-separated thresholds
    #[arg(long = "c-values", value_delimiter = ',')]
    c_values: Vec<f64>,
    /// Comma-separated decay rates
    #[arg(long = "beta-values", value_delimiter = ',')]
    beta_values: Vec<f64>,
    /// Comma-separated gains
    #[arg(long = "k-values", value_delimiter = ',')]
    k_values: Vec<f64>,
    #[command(flatten)]
    overrides: Overrides,
}

fn apply(cfg: &mut ScenarioConfig, o: &Overrides) {
    if o.c.is_some() {
        cfg.trigger.c = o.c;
    }
    if o.beta.is_some() {
        cfg.trigger.beta = o.beta;
    }
    if let Some(k) = o.k {
        cfg.simulation.k = k;
    }
    if let Some(t) = o.t_end {
        cfg.simulation.t_end = t;
    }
    if o.step.is_some() {
        cfg.simulation.step = o.step;
    }
    if let Some(d) = &o.out_dir {
        cfg.output.dir = Some(d.display().to_string());
    }
}

fn load(path: &Path, o: &Overrides) -> Result<ScenarioConfig, StageError> {
    let mut cfg = load_config(path).map_err(|source| StageError { stage: Stage::Config, source })?;
    apply(&mut cfg, o);
    cfg.validate().map_err(|source| StageError { stage: Stage::Config, source })?;
    Ok(cfg)
}

fn print_json(v: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn one_based(v: &[usize]) -> Vec<usize> {
    v.iter().map(|e| e + 1).collect()
}

fn out_dir(cfg: &ScenarioConfig) -> Option<PathBuf> {
    cfg.output.dir.as_ref().map(PathBuf::from)
}

enum Failure {
    Stage(StageError),
    Other(anyhow::Error),
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Failure::Stage(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn run(cli: Cli) -> Result<i32, Failure> {
    match cli.command {
        Command::Decompose(a) => {
            let cfg = load(&a.config, &a.overrides)?;
            let (_, dec) = pipeline::decompose_stage(&cfg)?;
            let r = dec.report();
            print_json(&json!({
                "tree_edges": one_based(&r.tree_edges),
                "cycle_edges": one_based(&r.cycle_edges),
                "permutation": one_based(&r.permutation),
                "lambda": r.lambda,
                "gamma": r.gamma,
                "z": r.z,
                "r": r.r,
                "psi": r.psi,
                "rho": r.rho,
                "gamma_norm": r.gamma_norm,
            }))?;
            Ok(0)
        }
        Command::PeCheck(a) => {
            let cfg = load(&a.config, &a.overrides)?;
            let (cert, bound) = pipeline::pe_check(&cfg)?;
            print_json(&json!({ "certificate": cert, "sampled_weight_bound": bound }))?;
            Ok(0)
        }
        Command::Constants(a) => {
            let cfg = load(&a.config, &a.overrides)?;
            let doc = pipeline::constants_stage(&cfg)?;
            print_json(&doc)?;
            Ok(0)
        }
        Command::Simulate(a) => {
            let cfg = load(&a.config, &a.overrides)?;
            let dir = out_dir(&cfg).unwrap_or_else(|| PathBuf::from("out"));
            let outcome = pipeline::run_pipeline(&cfg, Some(&dir))?;
            print_json(&outcome.summary)?;
            Ok(outcome.exit_code())
        }
        Command::Check(a) => {
            let cfg = load(&a.config, &a.overrides)?;
            let outcome = pipeline::run_pipeline(&cfg, out_dir(&cfg).as_deref())?;
            for c in &outcome.summary.checks {
                println!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.name);
            }
            Ok(outcome.exit_code())
        }
        Command::Sweep(a) => {
            let base = load(&a.config, &a.overrides)?;
            let cs = if a.c_values.is_empty() { vec![base.trigger.c] } else { a.c_values.iter().map(|v| Some(*v)).collect() };
            let betas = if a.beta_values.is_empty() { vec![base.trigger.beta] } else { a.beta_values.iter().map(|v| Some(*v)).collect() };
            let ks = if a.k_values.is_empty() { vec![base.simulation.k] } else { a.k_values.clone() };
            let mut runs = Vec::new();
            for &c in &cs {
                for &beta in &betas {
                    for &k in &ks {
                        let mut cfg = base.clone();
                        cfg.trigger.c = c;
                        cfg.trigger.beta = beta;
                        cfg.simulation.k = k;
                        let label = format!(
                            "c{}_beta{}_k{}",
                            c.map_or("-".into(), |v| v.to_string()),
                            beta.map_or("-".into(), |v| v.to_string()),
                            k
                        );
                        runs.push((label, cfg));
                    }
                }
            }
            let rows = pipeline::run_sweep(&runs, out_dir(&base).as_deref());
            print_json(&rows)?;
            Ok(rows.iter().map(|r| r.exit_code).max().unwrap_or(0))
        }
        Command::Preset { name, output } => {
            let Some(name) = name else {
                PRESET_NAMES.iter().for_each(|n| println!("{n}"));
                return Ok(0);
            };
            let text = preset(&name).map_err(|source| StageError { stage: Stage::Config, source })?;
            match output {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
