use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use p3l_core::config::RunConfig;
use p3l_core::experiment;
use p3l_core::Error;

/// Train partially-trained three-layer networks and their mean-field limit.
#[derive(Parser)]
#[command(name = "p3l", disable_version_flag = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Check a config without training.
    Validate { config: PathBuf },
    /// Print the version.
    Version,
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("p3l [{}]: {e}", e.module());
    ExitCode::from(if e.is_numerical() { 2 } else { 1 })
}

fn run(path: &Path) -> Result<(), Error> {
    let cfg = RunConfig::from_path(path)?;
    log::info!("run {} ({:?})", cfg.run.name, cfg.run.mode);
    let dir = experiment::run(&cfg)?;
    println!("{}", dir.display());
    Ok(())
}

fn validate(path: &Path) -> Result<(), Error> {
    let cfg = RunConfig::from_path(path)?;
    let report = experiment::validate(&cfg)?;
    println!("n = {}", report.n);
    println!("lambda_min(G) = {:e}", report.lambda_min_g);
    println!("lambda_max(G) = {:e}", report.lambda_max_g);
    println!(
        "dt * a_scale^2 * lambda_max(G) / n = {:e}",
        report.stability_number
    );
    if report.ok() {
        println!("ok");
    }
    for f in &report.failures {
        println!("FAIL {f}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => run(config),
        Command::Validate { config } => validate(config),
        Command::Version => {
            println!("p3l {}", experiment::VERSION);
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
