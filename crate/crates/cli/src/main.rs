//! Command-line interface for the ntkrisk toolkit.
//!
//! One config file per command (TOML or JSON; a previous run's manifest.json
//! also works), with --seed/--out/--force as the only overriding flags.
//! Exit codes: 0 success, 1 validation error, 2 numeric failure, 3 failed
//! verification suite.

mod config;
mod manifest;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{load_with_overrides, VerifyConfig};

#[derive(Parser)]
#[command(
    name = "ntkrisk",
    version,
    about = "Kernel-based genomic prediction: simulate, build kernels, fit, predict, benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Config file (TOML/JSON) or a manifest.json from a previous run.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic genotypes, latent signal, and phenotypes.
    Simulate(CommonArgs),
    /// Build a kernel matrix (GRM, analytic NTK, or empirical NTK).
    Kernel {
        #[command(flatten)]
        common: CommonArgs,
        /// Overwrite an existing kernel file.
        #[arg(long)]
        force: bool,
    },
    /// Estimate variance components (MINQUE) or fit kernel ridge regression.
    Fit(CommonArgs),
    /// Predict from a fit artifact and kernel blocks.
    Predict(CommonArgs),
    /// Run a replicate study comparing prediction methods.
    Campaign(CommonArgs),
    /// Run the equivalence and width-convergence property suites.
    Verify {
        /// Optional config; defaults cover the standard fixtures.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate a campaign results table into summary statistics.
    Summary(CommonArgs),
}

/// Worker threads for campaign replicates, from NTKRISK_THREADS (default 1).
fn thread_count() -> usize {
    std::env::var("NTKRISK_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&t| t >= 1)
        .unwrap_or(1)
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    // Validation problems (bad configs, files, parameters) exit 1; numeric
    // failures exit 2.
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<ntkrisk::Error>() {
            return if core.is_validation() { 1 } else { 2 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 1;
        }
    }
    1
}

fn dispatch(command: Command) -> anyhow::Result<u8> {
    match command {
        Command::Simulate(args) => {
            let cfg = load_with_overrides(&args.config, args.seed, args.out.as_deref())?;
            run::cmd_simulate(&cfg, &args.config)?;
            Ok(0)
        }
        Command::Kernel { common, force } => {
            let cfg = load_with_overrides(&common.config, common.seed, common.out.as_deref())?;
            run::cmd_kernel(&cfg, &common.config, force)?;
            Ok(0)
        }
        Command::Fit(args) => {
            let cfg = load_with_overrides(&args.config, args.seed, args.out.as_deref())?;
            run::cmd_fit(&cfg, &args.config)?;
            Ok(0)
        }
        Command::Predict(args) => {
            let cfg = load_with_overrides(&args.config, args.seed, args.out.as_deref())?;
            run::cmd_predict(&cfg, &args.config)?;
            Ok(0)
        }
        Command::Campaign(args) => {
            let cfg = load_with_overrides(&args.config, args.seed, args.out.as_deref())?;
            run::cmd_campaign(&cfg, &args.config, thread_count())?;
            Ok(0)
        }
        Command::Verify { config, seed, out } => {
            let default_path = PathBuf::from("<defaults>");
            let (cfg, path) = match &config {
                Some(p) => (
                    load_with_overrides::<VerifyConfig>(p, seed, out.as_deref())?,
                    p.clone(),
                ),
                None => {
                    let mut cfg = VerifyConfig::default();
                    if let Some(s) = seed {
                        cfg.seed = s;
                    }
                    if let Some(o) = &out {
                        cfg.out = o.clone();
                    }
                    (cfg, default_path)
                }
            };
            let report = run::cmd_verify(&cfg, &path)?;
            Ok(if report.pass { 0 } else { 3 })
        }
        Command::Summary(args) => {
            let cfg = load_with_overrides(&args.config, args.seed, args.out.as_deref())?;
            run::cmd_summary(&cfg, &args.config)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
