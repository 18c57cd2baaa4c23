//! Command-line front end.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{ExperimentConfig, Profile};
use crate::output::Output;
use crate::{recipes, verify, HarnessError};

#[derive(Debug, Parser)]
#[command(name = "ergolab", version, about = "Seeded experiments on one-dimensional maps")]
pub struct Cli {
    /// TOML experiment configuration; defaults apply to anything missing.
    #[arg(long, global = true, env = "ERGOLAB_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, env = "ERGOLAB_SEED")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "ERGOLAB_OUT", default_value = "ergolab-out")]
    pub out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "ERGOLAB_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Full,
    Quick,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pull-back density estimate of the configured map.
    Density,
    /// Lyapunov exponent along one orbit.
    Lyapunov,
    /// Monte Carlo tail of the expansion and recurrence times.
    GammaTail,
    /// Cylinder diameters and distortion by depth.
    Cylinders,
    /// Return-time tail of an induced Markov map.
    Tower {
        /// Serialized induced Markov map (JSON); overrides `tower.input`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Benedicks-Carleson conditions, escape partition and induced Markov map.
    BcBuild,
    /// Correlation function and decay fit.
    Correlate,
    /// Parameter exclusion run.
    Paramex {
        /// Also dump every final element with its event log.
        #[arg(long)]
        events: bool,
    },
    /// Composition counts against their bounds.
    Combinatorics,
    /// The acceptance suite.
    VerifyAll {
        #[arg(long, value_enum)]
        profile: Option<ProfileArg>,
        /// Comma-separated criterion numbers to run.
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<u32>>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Density => "density",
            Command::Lyapunov => "lyapunov",
            Command::GammaTail => "gamma-tail",
            Command::Cylinders => "cylinders",
            Command::Tower { .. } => "tower",
            Command::BcBuild => "bc-build",
            Command::Correlate => "correlate",
            Command::Paramex { .. } => "paramex",
            Command::Combinatorics => "combinatorics",
            Command::VerifyAll { .. } => "verify-all",
        }
    }
}

/// Loads the configuration and applies command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::Tower { input: Some(p) } => cfg.tower.input = Some(p.clone()),
        Command::Paramex { events: true } => cfg.paramex.dump_events = true,
        Command::VerifyAll { profile: Some(p), .. } => {
            cfg.verify.profile = match p {
                ProfileArg::Full => Profile::Full,
                ProfileArg::Quick => Profile::Quick,
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(), HarnessError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(HarnessError::Config("threads: must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Config(format!("threads: {e}")))?;
    }
    let cfg = resolve_config(cli)?;
    let mut out = Output::create(&cli.out)?;
    out.text("config.toml", &cfg.to_toml()?)?;
    let mut verdict = Ok(());
    match &cli.command {
        Command::Density => recipes::density(&cfg, &mut out)?,
        Command::Lyapunov => recipes::lyapunov(&cfg, &mut out)?,
        Command::GammaTail => recipes::gamma(&cfg, &mut out)?,
        Command::Cylinders => recipes::cylinders(&cfg, &mut out)?,
        Command::Tower { .. } => recipes::tower(&cfg, &mut out)?,
        Command::BcBuild => recipes::bc_build(&cfg, &mut out)?,
        Command::Correlate => recipes::correlate(&cfg, &mut out)?,
        Command::Paramex { .. } => recipes::paramex(&cfg, &mut out)?,
        Command::Combinatorics => recipes::combinatorics(&cfg, &mut out)?,
        Command::VerifyAll { only, .. } => {
            let report = verify::run(cfg.verify.profile, cfg.seed, only.as_deref());
            out.text("verify.csv", &report.to_csv())?;
            out.json("verify.json", &report)?;
            print!("{}", report.table());
            verdict = verify::check_passed(&report);
        }
    }
    out.finish(cli.command.name(), &cfg)?;
    verdict
}

/// Parses the process arguments, runs, and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ergolab: {e}");
            e.exit_code()
        }
    }
}
