use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rcm_lab::config::ExperimentConfig;
use rcm_lab::runner::{self, exit_code, RunOptions};
use rcm_lab::stats::FitWindow;
use rcm_lab::Result;

#[derive(Parser)]
#[command(
    name = "rcm-lab",
    version,
    about = "Random conductance model experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Fit a power law to a series CSV.
    Fit {
        csv: PathBuf,
        /// Time window `a:b`; either bound may be empty.
        #[arg(long)]
        window: Option<String>,
    },
    /// Print the fits and flags of every run under a directory.
    Summarize { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            out,
            seed,
            threads,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outcome = runner::run(&cfg, &RunOptions { out, seed, threads })?;
            println!("wrote {}", outcome.dir.display());
            for flag in &outcome.summary.flags {
                println!("warning: {flag}");
            }
            Ok(())
        }
        Command::Fit { csv, window } => {
            let window = window.as_deref().map(FitWindow::parse).transpose()?;
            let fit = runner::fit_csv(&csv, window.as_ref())?;
            println!("{}", serde_json::to_string_pretty(&fit)?);
            Ok(())
        }
        Command::Summarize { dir } => {
            print!("{}", runner::summarize_dir(&dir)?);
            Ok(())
        }
    }
}
