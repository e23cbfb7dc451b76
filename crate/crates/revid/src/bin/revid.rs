use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use revid::cli::{self, Mode, RunConfig};

#[derive(Parser)]
#[command(
    name = "revid",
    version,
    about = "Identify production, markups and demand from firm revenue panels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON run configuration.
    #[arg(short = 'c', long = "config")]
    config: Option<PathBuf>,
    /// Results directory; overrides `io.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "REVID_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a firm panel.
    Simulate(RunArgs),
    /// Identify each period from its two-period pair.
    Identify(RunArgs),
    /// Fix scale and location across periods.
    Normalize(RunArgs),
    /// Build the demand system and evaluate counterfactuals.
    Demand(RunArgs),
    /// Replicate simulation and identification.
    Montecarlo(RunArgs),
    /// Print the summary of a results directory.
    Report {
        /// Results directory.
        #[arg(default_value = "results")]
        dir: PathBuf,
        /// Second directory to compare against.
        #[arg(long)]
        diff: Option<PathBuf>,
    },
}

fn execute(mode: Mode, args: RunArgs) -> revid::Result<()> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| revid::Error::Config {
                field: "threads".into(),
                message: e.to_string(),
            })?;
    }
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let out = args.out.unwrap_or_else(|| cfg.io.out.clone());
    let outcome = cli::run(&cfg, mode, &out)?;
    print!("{}", cli::report(&outcome.out)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => execute(Mode::Simulate, a),
        Command::Identify(a) => execute(Mode::Identify, a),
        Command::Normalize(a) => execute(Mode::Normalize, a),
        Command::Demand(a) => execute(Mode::Demand, a),
        Command::Montecarlo(a) => execute(Mode::Montecarlo, a),
        Command::Report { dir, diff } => match diff {
            Some(other) => cli::diff(&dir, &other),
            None => cli::report(&dir),
        }
        .map(|s| print!("{s}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
