//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 config error, 3 runtime error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;

use super::config::ExperimentConfig;
use super::log::{compute_metrics, export, write_metrics, MetricRow};
use super::runner::{run_experiment, Simulation};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "afl-sim", version, about = "Multi-session auction-based federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one online market and export its logs.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train learning MUs over whole-market episodes, checkpointing after each.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        episodes: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Frozen greedy run from saved checkpoints.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train-then-evaluate per seed and tabulate metrics.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e),
            other => Failure::Runtime(other),
        }
    }
}

fn load_config(path: &Path) -> std::result::Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path).map_err(Failure::Config)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn checkpoint_dir(root: &Path) -> PathBuf {
    root.join("checkpoints")
}

fn progress_path(root: &Path) -> PathBuf {
    checkpoint_dir(root).join("episodes.txt")
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> std::result::Result<(), Failure> {
    match command {
        Command::Simulate { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let (log, metrics) = run_experiment(&cfg)?;
            export(&log, &metrics, &out)?;
            print_table(stdout, &metrics)?;
        }
        Command::Train { config, episodes, out } => {
            let cfg = load_config(&config)?;
            let mut sim = Simulation::new(cfg)?;
            let ckpt = checkpoint_dir(&out);
            let progress = progress_path(&out);
            let done: u64 = if progress.exists() {
                sim.load_checkpoints(&ckpt)?;
                let text = fs::read_to_string(&progress).map_err(|e| Error::io(&progress, e))?;
                text.trim()
                    .parse()
                    .map_err(|e| Error::Format(format!("{}: {e}", progress.display())))?
            } else {
                0
            };
            fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
            let mut rows: Vec<(u64, MetricRow)> = Vec::new();
            sim.train(done, episodes, |e, log| {
                let metrics = compute_metrics(log);
                for m in &metrics {
                    info!("episode {e} mu {} {}: utility {:.3} data {}", m.mu_id, m.strategy, m.utility, m.num_data);
                }
                rows.extend(metrics.into_iter().map(|m| (e, m)));
                Ok(())
            })?;
            sim.save_checkpoints(&ckpt)?;
            fs::write(&progress, format!("{}\n", done + episodes)).map_err(|e| Error::io(&progress, e))?;
            write_training_curve(&out.join("training.csv"), &rows)?;
            let (log, metrics) = sim.evaluate()?;
            export(&log, &metrics, &out.join("eval"))?;
            print_table(stdout, &metrics)?;
        }
        Command::Eval { config, checkpoint, out } => {
            let cfg = load_config(&config)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let mut sim = Simulation::new(cfg)?;
            let dir = if checkpoint_dir(&checkpoint).is_dir() {
                checkpoint_dir(&checkpoint)
            } else {
                checkpoint
            };
            sim.load_checkpoints(&dir)?;
            let (log, metrics) = sim.evaluate()?;
            export(&log, &metrics, &out)?;
            print_table(stdout, &metrics)?;
        }
        Command::Compare { config, seeds, out } => {
            let base = load_config(&config)?;
            let out = out.unwrap_or_else(|| base.output_dir.clone());
            let mut all = Vec::new();
            for seed in seeds {
                let mut cfg = base.clone();
                cfg.seed = seed;
                let mut sim = Simulation::new(cfg)?;
                sim.train(0, base.episodes as u64, |e, _| {
                    info!("seed {seed}: finished training episode {e}");
                    Ok(())
                })?;
                let (_, metrics) = sim.evaluate()?;
                all.extend(metrics);
            }
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_metrics(&out.join("metrics.csv"), &all)?;
            print_table(stdout, &all)?;
        }
    }
    Ok(())
}

fn write_training_curve(path: &Path, rows: &[(u64, MetricRow)]) -> Result<()> {
    // Appending keeps the curve continuous across resumed runs.
    let exists = path.exists();
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut put = |line: String| w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e));
    if !exists {
        put("episode,mu_id,strategy,num_data,utility,accuracy\n".into())?;
    }
    for (e, m) in rows {
        put(format!("{e},{},{},{},{},{}\n", m.mu_id, m.strategy, m.num_data, m.utility, m.accuracy))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn print_table(out: &mut dyn Write, metrics: &[MetricRow]) -> Result<()> {
    let io = |e| Error::io("<stdout>", e);
    writeln!(out, "{:>20} {:>6} {:>9} {:>9} {:>10} {:>9}", "seed", "mu", "strategy", "num_data", "utility", "accuracy").map_err(io)?;
    for m in metrics {
        writeln!(
            out,
            "{:>20} {:>6} {:>9} {:>9} {:>10.4} {:>9.4}",
            m.seed, m.mu_id, m.strategy.name(), m.num_data, m.utility, m.accuracy
        )
        .map_err(io)?;
    }
    Ok(())
}
