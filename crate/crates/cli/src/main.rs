use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use ncps_cli::{compare, dump, run, ConfigError, ExperimentConfig};

/// n-CPS experiment runner on the synthetic shapes benchmark.
#[derive(Parser)]
#[command(name = "ncps", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every grid point and seed of a config; write CSVs, checkpoints and curves.
    Run { config: PathBuf },
    /// Print per-row miou_mean deltas (candidate minus baseline) of two summary files.
    Compare { baseline: PathBuf, candidate: PathBuf },
    /// Export the config's dataset as PPM/PGM files under output_dir/dataset.
    DumpDataset { config: PathBuf },
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("NCPS_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| anyhow::anyhow!("NCPS_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            anyhow::bail!("NCPS_THREADS must be a positive integer, got `{v}`");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            run::run_experiment(&cfg)?;
            println!("{}", cfg.output_dir.join("summary.csv").display());
        }
        Command::Compare { baseline, candidate } => {
            print!("{}", compare::render(&compare::compare_files(&baseline, &candidate)?));
        }
        Command::DumpDataset { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            println!("{}", dump::dump_dataset(&cfg.dataset, &cfg.output_dir)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let config_error = e.downcast_ref::<ConfigError>().is_some();
            eprintln!("error: {e:#}");
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}
