use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use robustfl::harness::{self, preset, report};
use robustfl::Error;

/// Byzantine-robust compressed federated learning simulator.
#[derive(Parser)]
#[command(name = "robustfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, attack, seed) cell of a configuration.
    Run {
        config: PathBuf,
        /// Override a configuration key, e.g. `--set topology.byzantine=2`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Bundle directory (default: the configuration's `output_dir`).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write a ready-made configuration.
    Preset {
        /// noise_reduction, baseline_comparison or error_feedback
        name: String,
        /// desk or full
        scale: String,
        #[arg(short, long)]
        output: PathBuf,
        /// COVTYPE LibSVM file, required at full scale.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Print the markdown report of a bundle.
    Summarize { bundle: PathBuf },
}

const EXIT_DIVERGED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(match e {
        Error::Io { .. } => EXIT_IO,
        Error::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_USAGE,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, overrides, out } => {
            let bytes = match std::fs::read(&config) {
                Ok(b) => b,
                Err(e) => return fail(&Error::Io { path: config, source: e }),
            };
            match harness::run_experiment(&bytes, &overrides, out.as_deref()) {
                Ok((dir, summary)) => {
                    println!("bundle written to {}", dir.display());
                    if summary.any_diverged() {
                        eprintln!("error: at least one run diverged (see report.md)");
                        return ExitCode::from(EXIT_DIVERGED);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Preset { name, scale, output, dataset } => {
            let cfg = name
                .parse()
                .and_then(|f| Ok((f, scale.parse()?)))
                .and_then(|(f, s)| preset::preset(f, s, dataset))
                .and_then(|c| c.to_toml_string());
            match cfg {
                Ok(text) => match std::fs::write(&output, text) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => fail(&Error::Io { path: output, source: e }),
                },
                Err(e) => fail(&e),
            }
        }
        Command::Summarize { bundle } => match report::emit_summary(&bundle) {
            Ok(md) => {
                print!("{md}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
    }
}
