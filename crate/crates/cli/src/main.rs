mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use phi4_lsi::Error;

/// Lattice φ⁴ pipelines: free-field data, sampling, susceptibility profiles
/// and log-Sobolev bounds.
#[derive(Parser)]
#[command(name = "phi4-lsi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; falls back to PHI4_LSI_WORKERS.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Master seed (overrides `sampler.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Free covariance kernel and its moments.
    Covariance,
    /// Counterterm sweep over lattice spacings with the scaling fit.
    Counterterms,
    /// Monte Carlo chains, correlations and susceptibility.
    Sample,
    /// Susceptibility profile over scales.
    ChiProfile,
    /// Log-Sobolev lower bound from a susceptibility profile.
    LsiBound,
    /// Oracle falsification suite.
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Covariance => "covariance",
            Command::Counterterms => "counterterms",
            Command::Sample => "sample",
            Command::ChiProfile => "chi-profile",
            Command::LsiBound => "lsi-bound",
            Command::Verify => "verify",
        }
    }
}

const EXIT_CONFIG: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_VIOLATION: u8 = 3;
const EXIT_COMPUTE: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Config(_) | Error::Parse(_) | Error::Shape { .. } | Error::Domain(_) | Error::Capability(_) => {
            EXIT_CONFIG
        }
        _ => EXIT_COMPUTE,
    }
}

fn workers(flag: Option<usize>) -> Result<Option<usize>, Error> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("PHI4_LSI_WORKERS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("PHI4_LSI_WORKERS must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: &Cli) -> Result<bool, Error> {
    if let Some(n) = workers(cli.workers)? {
        if n == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    }
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config <path> is required".into()))?;
    let text = std::fs::read_to_string(path)?;
    let mut cfg = config::parse(&text)?;
    if let Some(seed) = cli.seed {
        cfg.sampler.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.to_string_lossy().into_owned();
    }
    let resolved = cfg.resolved()?;
    let outcome = match cli.command {
        Command::Covariance => commands::covariance_cmd(&cfg)?,
        Command::Counterterms => commands::counterterms_cmd(&cfg)?,
        Command::Sample => commands::sample_cmd(&cfg)?,
        Command::ChiProfile => commands::chi_profile_cmd(&cfg)?,
        Command::LsiBound => commands::lsi_bound_cmd(&cfg)?,
        Command::Verify => commands::verify_cmd(&cfg)?,
    };
    let dir = PathBuf::from(&cfg.output.dir);
    outcome.files.commit(&dir, cli.command.name(), &resolved)?;
    Ok(outcome.violation)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("phi4-lsi {}: inequality violated, see the report", cli.command.name());
            ExitCode::from(EXIT_VIOLATION)
        }
        Err(e) => {
            eprintln!("phi4-lsi {}: {e}", cli.command.name());
            ExitCode::from(exit_code(&e))
        }
    }
}
