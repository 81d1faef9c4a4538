mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::output::Output;

#[derive(Parser)]
#[command(name = "cellshock", version, about = "Stability laboratory for viscous shock fronts in ducts")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides `output` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Continue past hypothesis violations with a warning.
    #[arg(long, global = true)]
    force: bool,

    /// Worker threads for parallel sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Viscous profile and hypothesis report.
    Profile,
    /// Inviscid scan, Evans zero counts and refined coefficients.
    Stability,
    /// Predicted onset of cellular modes in the duct.
    Cascade,
    /// Direct simulation of the perturbed front.
    Simulate,
    /// Every stage in turn.
    All,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Profile => "profile",
            Command::Stability => "stability",
            Command::Cascade => "cascade",
            Command::Simulate => "simulate",
            Command::All => "all",
        }
    }
}

/// Malformed configuration or command line.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid input: {}", self.0)
    }
}

impl std::error::Error for InputError {}

/// A standing hypothesis failed and `--force` was not given.
#[derive(Debug)]
pub struct HypothesisFailure(pub String);

impl std::fmt::Display for HypothesisFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "hypothesis violated: {} (rerun with --force to continue)", self.0)
    }
}

impl std::error::Error for HypothesisFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<InputError>() {
            return 2;
        }
        if cause.is::<HypothesisFailure>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<cellshock::Error>() {
            return match e {
                cellshock::Error::Domain { .. } | cellshock::Error::Invalid(_) => 2,
                cellshock::Error::Hypothesis(_) | cellshock::Error::NoConnection(_) => 3,
                cellshock::Error::Io(_) => 1,
                _ => 4,
            };
        }
    }
    1
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let path = cli.config.as_ref().ok_or_else(|| InputError("--config PATH is required".into()))?;
    let cfg = RunConfig::load(path)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(InputError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let dir = cli.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("cellshock-out"));
    let mut out = Output::create(dir)?;
    out.write_text("config.toml", &cfg.to_toml()?)?;
    let ctx = commands::Context { cfg: &cfg, force: cli.force };
    // The manifest is written even when a stage fails, so partial reports stay traceable.
    let result = match cli.command {
        Command::Profile => commands::profile(&ctx, &mut out),
        Command::Stability => commands::stability(&ctx, &mut out),
        Command::Cascade => commands::cascade(&ctx, &mut out),
        Command::Simulate => commands::simulate(&ctx, &mut out),
        Command::All => commands::profile(&ctx, &mut out)
            .and_then(|_| commands::stability(&ctx, &mut out))
            .and_then(|_| commands::cascade(&ctx, &mut out))
            .and_then(|_| commands::simulate(&ctx, &mut out)),
    };
    out.write_manifest(cli.command.name())?;
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
