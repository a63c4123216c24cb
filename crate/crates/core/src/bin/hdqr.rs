use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hdqr::agent::Algorithm;
use hdqr::harness::{compare_algorithms, emit_plots, run_experiment, HarnessError, RunConfig};

#[derive(Parser)]
#[command(name = "hdqr", version, about = "Hierarchical deep double Q-routing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Ddqn,
    Dqn,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Override the configured horizon.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, value_enum)]
        algo: Option<Algo>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run DDQN and DQN on the same traffic for each seed.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write plot data for a finished run.
    Plot {
        #[arg(long)]
        run: PathBuf,
        /// Also write windowed loss medians.
        #[arg(long)]
        window: Option<usize>,
    },
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, seed, steps, algo, out } => {
            let mut c = RunConfig::load(&config)?;
            c.seed = seed;
            if let Some(n) = steps {
                c.horizon = n;
            }
            if let Some(a) = algo {
                c.algorithm = match a {
                    Algo::Ddqn => Algorithm::Ddqn,
                    Algo::Dqn => Algorithm::Dqn,
                };
            }
            c.output = Some(out.clone());
            let s = run_experiment(&c, &out)?;
            println!(
                "{} steps, {} routed, {} failed, {} learning steps, discounted return {}",
                s.steps, s.routed, s.routing_failures, s.learn_steps, s.discounted_return
            );
        }
        Command::Compare { config, seeds, out } => {
            let c = RunConfig::load(&config)?;
            let rows = compare_algorithms(&c, &seeds, &out)?;
            println!("seed,ddqn,dqn,sign");
            for r in rows {
                println!("{},{},{},{}", r.seed, r.ddqn, r.dqn, r.sign);
            }
        }
        Command::Plot { run, window } => {
            let files = emit_plots(&run, window)?;
            println!("{} rows written to {}", files.rows, run.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
