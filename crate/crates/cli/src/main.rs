//! `specbulk`: densities, point solves, second-order equivalents and Monte
//! Carlo checks from a JSON run configuration.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure,
//! 3 a Monte Carlo assertion failed.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use specbulk_core::Complex64;

use commands::{CliError, Context};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Density,
    Solve,
    Simulate,
    Equivalents,
}

#[derive(Debug, Parser)]
#[command(
    name = "specbulk",
    version,
    about = "Deterministic equivalents for k-class Gram matrices"
)]
struct Args {
    command: Command,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "SPECBULK_WORKERS", value_parser = clap::value_parser!(u32).range(1..))]
    workers: Option<u32>,
    /// Evaluation point as `RE,IM`; repeat the flag for several points.
    #[arg(long, value_parser = parse_z, allow_hyphen_values = true, action = clap::ArgAction::Append)]
    z: Vec<Complex64>,
}

fn parse_z(s: &str) -> Result<Complex64, String> {
    let (re, im) = s
        .split_once(',')
        .ok_or_else(|| format!("expected RE,IM, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    let z = Complex64::new(parse(re)?, parse(im)?);
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(format!("{s:?} is not finite"));
    }
    Ok(z)
}

fn run(args: &Args) -> Result<bool, CliError> {
    let loaded = config::load(&args.config).map_err(CliError::Config)?;
    commands::ensure_out_dir(&args.out)?;
    let ctx = Context {
        loaded: &loaded,
        out: &args.out,
        seed: args.seed.unwrap_or(loaded.config.seed),
        z: &args.z,
    };
    let work = || match args.command {
        Command::Density => commands::cmd_density(&ctx),
        Command::Solve => commands::cmd_solve(&ctx),
        Command::Simulate => commands::cmd_simulate(&ctx),
        Command::Equivalents => commands::cmd_equivalents(&ctx),
    };
    match args.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {n} workers: {e}")))?
            .install(work),
        None => work(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors are configuration errors (1); clap would use 2, which is
    // reserved for numerical failures.
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("specbulk: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
