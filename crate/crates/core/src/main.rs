use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use billiards::experiment::{
    output_dir, run_experiment, run_sweep, selftest, with_workers, ExperimentError, LoadedConfig, Mode,
};

#[derive(Parser)]
#[command(name = "billiards", version, about = "Random billiard experiments with thermostatted walls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding run.master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, overriding run.workers.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory, overriding output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Transition matrix, stationary law, entropy production and the chain ensemble.
    Simulate(Common),
    /// Estimate the transition matrix only.
    TransitionMatrix(Common),
    /// Transition matrix and stationary mixture weights.
    Stationary(Common),
    /// Analytic entropy production from the estimated transition matrix.
    Entropy(Common),
    /// Heat-engine ensemble.
    Engine(Common),
    /// Run the config's sweep.
    Sweep(Common),
    /// Reciprocity and sampler goodness-of-fit checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        workers: Option<usize>,
        /// Samples per check.
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
    },
}

fn exit_for(e: &ExperimentError) -> ExitCode {
    eprintln!("error: {e}");
    if e.is_validation() {
        ExitCode::from(1)
    } else {
        ExitCode::from(2)
    }
}

fn run(common: &Common, mode: Option<Mode>) -> Result<(), ExperimentError> {
    let loaded = LoadedConfig::load(&common.config)?.with_overrides(
        common.seed,
        common.workers,
        common.out.as_deref(),
    )?;
    let dir = output_dir(&loaded.config);
    let workers = loaded.config.run.workers;
    let io = |e: std::io::Error| ExperimentError::Runtime(format!("writing {}: {e}", dir.display()));
    match mode {
        Some(mode) => {
            let out = with_workers(workers, || run_experiment(&loaded.config, mode))??;
            out.write_to(&dir).map_err(io)?;
            print!("{}", out.summary);
        }
        None => {
            let mode = if loaded.config.scenario == billiards::experiment::Scenario::Engine {
                Mode::Engine
            } else {
                Mode::Simulate
            };
            let out = with_workers(workers, || run_sweep(&loaded, mode))??;
            out.write_to(&dir).map_err(io)?;
            print!("{}", out.file("sweep.csv").unwrap_or_default());
        }
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => run(c, Some(Mode::Simulate)),
        Command::TransitionMatrix(c) => run(c, Some(Mode::TransitionMatrix)),
        Command::Stationary(c) => run(c, Some(Mode::Stationary)),
        Command::Entropy(c) => run(c, Some(Mode::Entropy)),
        Command::Engine(c) => run(c, Some(Mode::Engine)),
        Command::Sweep(c) => run(c, None),
        Command::Selftest { seed, workers, samples } => {
            match with_workers(workers.unwrap_or(0), || selftest(*seed, *samples)) {
                Ok(lines) => {
                    let mut ok = true;
                    for l in &lines {
                        println!("{} {}: {}", if l.passed { "PASS" } else { "FAIL" }, l.name, l.detail);
                        ok &= l.passed;
                    }
                    if ok {
                        Ok(())
                    } else {
                        Err(ExperimentError::Runtime("self-test failed".into()))
                    }
                }
                Err(e) => Err(e),
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => exit_for(&e),
    }
}
