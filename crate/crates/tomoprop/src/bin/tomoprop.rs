use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tomoprop::scenario::{run_scenario, RunMode, RunOptions};

/// Tomogram propagation scenarios: batch runs and verification suites.
#[derive(Parser)]
#[command(name = "tomoprop", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every task listed in the scenario file.
    Run {
        /// Path to the scenario TOML file.
        config: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Execute only the verification tasks and report breaches via the
    /// exit status.
    Verify {
        /// Path to the scenario TOML file.
        config: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
}

#[derive(clap::Args)]
struct CommonOpts {
    /// Relative tolerance for verification tasks (overrides the config).
    #[arg(long)]
    tolerance: Option<f64>,
    /// Directory for CSV output and the run manifest.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (config, mode, opts) = match cli.command {
        Command::Run { config, opts } => (config, RunMode::Run, opts),
        Command::Verify { config, opts } => (config, RunMode::Verify, opts),
    };
    let run_opts = RunOptions {
        out_dir: opts.out_dir,
        tolerance: opts.tolerance,
    };
    match run_scenario(&config, mode, &run_opts) {
        Ok(report) => {
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            println!("wrote {}", report.manifest.display());
            ExitCode::SUCCESS
        }
        Err(failure) => {
            eprintln!("{failure}");
            ExitCode::from(failure.exit_code() as u8)
        }
    }
}
