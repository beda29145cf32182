use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedta_core::experiment::{compare, run_experiment, ExperimentConfig};
use fedta_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Federated training of stateful-neuron networks across clients with
/// different temporal resolutions.
#[derive(Parser)]
#[command(name = "fedta", version)]
struct Cli {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Replace the config's seed list.
        #[arg(long, value_delimiter = ',')]
        seed_override: Option<Vec<u64>>,
        /// Output directory (overrides `output_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge the summaries of finished runs into one markdown table.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Write the table to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::IncompatibleRule { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn default_out(config: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let stem = if cfg.name.is_empty() {
        config
            .file_stem()
            .map_or("run".into(), |s| s.to_string_lossy().into_owned())
    } else {
        cfg.name.clone()
    };
    PathBuf::from("runs").join(stem)
}

fn run(config: &Path, seeds: Option<Vec<u64>>, out: Option<PathBuf>) -> Result<(), (u8, Error)> {
    let mut cfg = ExperimentConfig::load(config).map_err(|e| (EXIT_CONFIG, e))?;
    if let Some(seeds) = seeds {
        cfg.seeds = seeds;
        cfg.validate().map_err(|e| (EXIT_CONFIG, e))?;
    }
    let dir = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| default_out(config, &cfg));
    let outcome = run_experiment(&cfg, &dir).map_err(|e| (exit_code(&e), e))?;
    let s = &outcome.summary;
    println!(
        "{} {} {}: accuracy {:.2} ± {:.2} % over {} seeds -> {}",
        s.scenario.name(),
        s.neuron,
        s.method,
        100.0 * s.accuracy_mean,
        100.0 * s.accuracy_std,
        s.seeds,
        dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    let result = match cli.command {
        Command::Run {
            config,
            seed_override,
            out,
        } => run(&config, seed_override, out),
        Command::Compare { dirs, out } => compare(&dirs)
            .map_err(|e| (EXIT_CONFIG, e))
            .and_then(|table| match out {
                Some(path) => std::fs::write(&path, table).map_err(|e| (EXIT_RUNTIME, e.into())),
                None => {
                    print!("{table}");
                    Ok(())
                }
            }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, e)) => {
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
