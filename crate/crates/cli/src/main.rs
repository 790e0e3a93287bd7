use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddlqr_cli::{run, Command, Invocation};

#[derive(Parser)]
#[command(name = "ddlqr", version, about = "Data-driven LQR design from input/output/state data")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Simulate the configured plant and write a dataset CSV.
    Simulate(Common),
    /// Estimate Markov parameters and the observability matrix, then synthesise K.
    Design(Common),
    /// Compare data-driven gains over several horizons against the Riccati gain.
    Sweep(Common),
    /// Repeat noisy experiments and report statistics of both observability estimators.
    Montecarlo(Common),
    /// Simulate the closed loop and report cost, stability and tracking metrics.
    Eval(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    config: PathBuf,
    /// Override a config value, e.g. `--set estimation.depth=11`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides the config and DDLQR_OUT_DIR).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::Design(c) => (Command::Design, c),
        Sub::Sweep(c) => (Command::Sweep, c),
        Sub::Montecarlo(c) => (Command::MonteCarlo, c),
        Sub::Eval(c) => (Command::Eval, c),
    };
    let inv = Invocation {
        command,
        config: common.config,
        overrides: common.overrides,
        out_dir: common.out_dir,
    };
    match run(&inv) {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            for f in &out.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
