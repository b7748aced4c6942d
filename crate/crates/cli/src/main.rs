use std::path::PathBuf;
use std::process::ExitCode;

use bitvi_cli::{run, CliError, CliResult, ExperimentConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bitvi", version, about = "Fit bitstring circuits to densities and BNN posteriors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a `fit_density` or `fit_bnn` config.
    Fit(Common),
    /// Run an `ablate_bits` config.
    AblateBits(Common),
    /// Run a `chop` config against a trained BNN run.
    Chop(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the parallel estimator.
    #[arg(long, env = "BITVI_THREADS")]
    threads: Option<usize>,
}

fn set_threads(n: Option<usize>) -> CliResult<()> {
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(())
}

fn execute(cli: Cli) -> CliResult<()> {
    let (args, allowed): (Common, &[&str]) = match cli.command {
        Command::Fit(a) => (a, &["fit_density", "fit_bnn"]),
        Command::AblateBits(a) => (a, &["ablate_bits"]),
        Command::Chop(a) => (a, &["chop"]),
    };
    set_threads(args.threads)?;
    let cfg = ExperimentConfig::load(&args.config)?;
    if !allowed.contains(&cfg.name()) {
        return Err(CliError::Config(format!(
            "experiment {:?} does not belong to this subcommand (expected one of {allowed:?})",
            cfg.name()
        )));
    }
    let cfg = cfg.resolve(args.out, args.seed)?;
    let metrics = run(&cfg)?;
    print!("{}", metrics.to_json());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bitvi: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
