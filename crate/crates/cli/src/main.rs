use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use fedlsa_cli::config::ExperimentConfig;
use fedlsa_cli::selfcheck::run_selfcheck;

#[derive(Parser)]
#[command(name = "fedlsa", version, about = "Federated LSA experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// R = 1024, N_b = 256 and T = 2000, 6000, 10000, 14000.
        #[arg(long)]
        paper_scale: bool,
        /// Overrides the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the invariant sweep; exits nonzero on any failure.
    Selfcheck,
}

fn run(config: PathBuf, paper_scale: bool, output: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if paper_scale {
        cfg = cfg.paper_scale();
    }
    if let Some(out) = output {
        cfg.output = out;
    }
    let summary = fedlsa_cli::run(&cfg)?;
    print!("{summary}");
    eprintln!("wrote {}", cfg.output.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            paper_scale,
            output,
        } => match run(config, paper_scale, output) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
        Command::Selfcheck => {
            let report = run_selfcheck();
            print!("{}", report.render());
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
