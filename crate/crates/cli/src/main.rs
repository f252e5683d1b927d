use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use moesim_cli::{
    compare_modes, config, run_scenario, write_comparison_csv, CliError, RunOptions, Summary, SUMMARY_FILE,
};
use moesim_core::engine::Mode;

#[derive(Parser)]
#[command(name = "moesim", version, about = "Memory-efficient MoE serving simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every point of a scenario's sweep.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Restrict the sweep to these modes (repeatable).
        #[arg(long, value_parser = parse_mode)]
        mode: Vec<Mode>,
        #[arg(long)]
        quiet: bool,
    },
    /// Ratios of each sweep point against the baseline, as CSV.
    Compare {
        #[arg(long)]
        summary: PathBuf,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: moesim_core::Error| e.to_string())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("moesim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run {
            config: path,
            out,
            seed,
            mode,
            quiet,
        } => {
            let cfg = config::load(&path)?;
            let opts = RunOptions {
                seed,
                modes: mode,
                quiet,
            };
            let summary = run_scenario(&cfg, &out, &opts)?;
            if !quiet {
                println!("{}", out.join(SUMMARY_FILE).display());
            }
            match summary.failed() {
                0 => Ok(()),
                failed => Err(CliError::PartialFailure {
                    failed,
                    total: summary.points.len(),
                }),
            }
        }
        Command::Compare { summary, out } => {
            let rows = compare_modes(&Summary::load(&summary)?)?;
            let io = |path: PathBuf| move |e| CliError::Io { path, source: e };
            match out {
                Some(p) => {
                    let f = File::create(&p).map_err(io(p.clone()))?;
                    let mut w = BufWriter::new(f);
                    write_comparison_csv(&mut w, &rows).map_err(io(p.clone()))?;
                    w.flush().map_err(io(p))
                }
                None => write_comparison_csv(std::io::stdout().lock(), &rows).map_err(io("<stdout>".into())),
            }
        }
    }
}
