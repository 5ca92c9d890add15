use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seqpen_bench::{compare, data_root, grid, run_config_file};

#[derive(Parser)]
#[command(name = "seqpen-bench", version, about = "Sequential penalty experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment config.
    Run {
        config: PathBuf,
        /// Write artifacts here instead of the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print one row per run directory.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Run every config matching a glob in worker processes.
    Grid {
        pattern: String,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Cmd::Run { config, out } => match run_config_file(&config, out.as_deref(), &data_root()) {
            Ok(o) => {
                println!(
                    "{} ({}, {} outer iterations)",
                    o.dir.display(),
                    o.stop,
                    o.outer_iterations
                );
                print!("{}", o.results);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
        Cmd::Compare { dirs, split } => match compare(&dirs, &split) {
            Ok(table) => {
                print!("{table}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Cmd::Grid { pattern, jobs } => {
            let configs = match grid::plan(&pattern) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let exe = match std::env::current_exe() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            match grid::run_grid(&exe, &configs, jobs) {
                Ok(results) => {
                    let worst = results.iter().map(|r| r.exit_code).max().unwrap_or(0);
                    for r in &results {
                        println!("{}\t{}", r.exit_code, r.config.display());
                    }
                    ExitCode::from(worst.clamp(0, 255) as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
