//! `modbot`: run CPG gait simulations, list and validate gait presets.
//!
//! Exit codes: 0 ok, 1 preset violations, 2 usage or input error,
//! 3 numeric divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use modbot_core::gaits::{self, Catalog, GaitPreset, Gains};
use modbot_core::hierarchy::Injection;
use modbot_core::report;
use modbot_core::sim::{self, Mode, RunConfig};
use modbot_core::transport::bridge::MqttBridge;
use modbot_core::Error;

#[derive(Parser)]
#[command(name = "modbot", version, about = "Two-layer CPG gaits for modular robots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gait catalog operations
    Gaits {
        #[command(subcommand)]
        command: GaitsCommand,
    },
    /// Run a gait and write traces plus a summary
    Simulate(SimulateArgs),
    /// Check a preset or catalog file against the joint and shape limits
    Validate {
        path: PathBuf,
    },
}

#[derive(Subcommand)]
enum GaitsCommand {
    /// List presets with their validation status
    List {
        /// Catalog file instead of the built-in one
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Direct,
    Networked,
}

#[derive(Clone, Copy, ValueEnum)]
enum InjectionArg {
    First,
    RowMean,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Preset name (from --file if given, else the built-in catalog)
    #[arg(long)]
    preset: Option<String>,

    /// Preset or catalog file
    #[arg(long)]
    file: Option<PathBuf>,

    /// Simulated time (s)
    #[arg(long, default_value_t = 10.0)]
    duration: f64,

    /// Integrator step (s)
    #[arg(long, default_value_t = modbot_core::cpg::DEFAULT_DT)]
    dt: f64,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[arg(long, value_enum, default_value = "direct")]
    mode: ModeArg,

    /// Per-message loss probability of the simulated link
    #[arg(long, default_value_t = 0.0)]
    loss: f64,

    #[arg(long, default_value_t = 5.0)]
    latency_ms: f64,

    /// Uniform jitter half-width (ms)
    #[arg(long, default_value_t = 0.0)]
    jitter_ms: f64,

    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Start from seeded random phases instead of zero
    #[arg(long)]
    random_init: bool,

    /// Reference-phase injection gain (1/s)
    #[arg(long)]
    gamma: Option<f64>,

    #[arg(long, value_enum)]
    injection: Option<InjectionArg>,

    /// Override the gait period (s)
    #[arg(long)]
    period: Option<f64>,
}

enum Failure {
    Violations,
    Input(anyhow::Error),
    Diverged(f64),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NumericDivergence { t } => Failure::Diverged(t),
            e => Failure::Input(e.into()),
        }
    }
}

fn load_catalog(path: &PathBuf) -> anyhow::Result<Catalog> {
    Catalog::load(path).with_context(|| format!("reading {}", path.display()))
}

fn gaits_list(file: Option<PathBuf>) -> Result<(), Failure> {
    let catalog = match &file {
        Some(p) => load_catalog(p)?,
        None => Catalog::builtin(),
    };
    println!("{:<16} {:>7} {:>8}  status", "name", "modules", "period");
    for p in &catalog.presets {
        let violations = gaits::validate(p);
        let status = if violations.is_empty() {
            "valid".to_string()
        } else {
            format!("{} violation(s)", violations.len())
        };
        println!("{:<16} {:>7} {:>8.3}  {}", p.name, p.m(), p.period, status);
    }
    Ok(())
}

fn validate_file(path: PathBuf) -> Result<(), Failure> {
    let catalog = load_catalog(&path)?;
    let mut bad = 0;
    for p in &catalog.presets {
        for v in gaits::validate(p) {
            println!("{}: {v}", p.name);
            bad += 1;
        }
    }
    if bad > 0 {
        return Err(Failure::Violations);
    }
    println!("{} preset(s) valid", catalog.presets.len());
    Ok(())
}

fn pick_preset(args: &SimulateArgs) -> anyhow::Result<GaitPreset> {
    let catalog = match &args.file {
        Some(p) => load_catalog(p)?,
        None => Catalog::builtin(),
    };
    let preset = match (&args.preset, catalog.presets.len()) {
        (Some(name), _) => catalog.get(name)?.clone(),
        (None, 1) => catalog.presets[0].clone(),
        (None, _) => return Err(anyhow!("--preset is required (available: {})", catalog.names().join(", "))),
    };
    let preset = match args.period {
        Some(t) => preset.scale_period(t)?,
        None => preset,
    };
    let violations = gaits::validate(&preset);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(anyhow!("preset {} is invalid: {}", preset.name, list.join("; ")));
    }
    Ok(preset)
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let preset = pick_preset(&args)?;
    let mut cfg = RunConfig::new(preset);
    cfg.duration_s = args.duration;
    cfg.dt = args.dt;
    cfg.seed = args.seed;
    cfg.random_init = args.random_init;
    cfg.mode = match args.mode {
        ModeArg::Direct => Mode::Direct,
        ModeArg::Networked => Mode::Networked,
    };
    let mut gains = Gains::default();
    if let Some(g) = args.gamma {
        gains.gamma = g;
    }
    if let Some(i) = args.injection {
        gains.injection = match i {
            InjectionArg::First => Injection::FirstOscillator,
            InjectionArg::RowMean => Injection::RowMean,
        };
    }
    cfg.gains = gains;
    cfg.network.channel.loss_probability = args.loss;
    cfg.network.channel.latency_ms = args.latency_ms;
    cfg.network.channel.jitter_ms = args.jitter_ms;
    cfg.network.channel.validate()?;

    let mut bridge = match cfg.mode {
        Mode::Networked => MqttBridge::from_env().transpose()?,
        Mode::Direct => None,
    };
    info!("running {} for {} s", cfg.preset.name, cfg.duration_s);
    let run = sim::execute(&cfg, bridge.as_mut())?;
    let files = report::artifacts(&cfg, &run);
    report::write_artifacts(&args.out, &files)
        .with_context(|| format!("writing {}", args.out.display()))?;
    print!("{}", files["summary.json"]);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Gaits { command: GaitsCommand::List { file } } => gaits_list(file),
        Command::Simulate(args) => simulate(args),
        Command::Validate { path } => validate_file(path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violations) => ExitCode::from(1),
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Diverged(t)) => {
            eprintln!("error: numeric divergence at t = {t:.6} s");
            ExitCode::from(3)
        }
    }
}
