use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use waveinv::config::LoadedConfig;
use waveinv::error::Error;
use waveinv::pipelines::{convergence_study, probe_delta_for, run_experiment, write_convergence, RunSummary};

/// Forward and inverse experiments for semilinear wave equations.
#[derive(Parser)]
#[command(name = "waveinv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline of one config file.
    Run {
        config: PathBuf,
        /// Output directory (defaults to the config's `output` or `<stem>.out`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every `*.toml` in a directory, each into its own output directory.
    Suite { dir: PathBuf },
    /// Refinement study of a forward, recover-initial or cgo config.
    Converge {
        config: PathBuf,
        /// Comma separated refinement levels (nx, or tau for cgo).
        #[arg(long, value_delimiter = ',', required = true)]
        levels: Vec<usize>,
        /// CSV destination (defaults to `<output>/convergence.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bisect the largest boundary amplitude at which the forward solve converges.
    ProbeDelta {
        config: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        lo: f64,
        #[arg(long, default_value_t = 1e2)]
        hi: f64,
        #[arg(long, default_value_t = 30)]
        steps: usize,
    },
}

fn code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Stage { source, .. } if matches!(**source, Error::Config(_)) => 1,
        _ => 2,
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(code(e))
}

fn report(s: &RunSummary) {
    println!("{} -> {}", s.pipeline, s.out_dir.display());
    for (k, v) in &s.metrics {
        println!("  {k} = {v:e}");
    }
    for n in &s.notes {
        println!("  note: {n}");
    }
}

fn run_one(path: &Path, out: Option<PathBuf>) -> Result<RunSummary, Error> {
    let loaded = LoadedConfig::read(path)?;
    let dir = out.unwrap_or_else(|| loaded.output_dir());
    run_experiment(&loaded, &dir)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = std::env::var("WAVEINV_WORKERS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: worker pool: {e}");
        }
    }
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out } => match run_one(&config, out) {
            Ok(s) => {
                report(&s);
                if s.passed == Some(false) {
                    ExitCode::from(2)
                } else {
                    ExitCode::SUCCESS
                }
            }
            Err(e) => fail(&e),
        },
        Command::Suite { dir } => {
            let mut configs: Vec<PathBuf> = match std::fs::read_dir(&dir) {
                Ok(entries) => entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "toml")).collect(),
                Err(e) => return fail(&Error::Config(format!("{}: {e}", dir.display()))),
            };
            configs.sort();
            if configs.is_empty() {
                return fail(&Error::Config(format!("no .toml configs in {}", dir.display())));
            }
            // parse everything first so a typo fails before any computation
            let loaded: Result<Vec<LoadedConfig>, Error> = configs.iter().map(|p| LoadedConfig::read(p)).collect();
            let loaded = match loaded {
                Ok(l) => l,
                Err(e) => return fail(&e),
            };
            let results: Vec<Result<RunSummary, Error>> = loaded.par_iter().map(|l| run_experiment(l, &l.output_dir())).collect();
            let mut worst = 0u8;
            for (path, r) in configs.iter().zip(&results) {
                match r {
                    Ok(s) => {
                        let ok = s.passed != Some(false);
                        println!("[{}] {}", if ok { "ok" } else { "FAILED" }, path.display());
                        if !ok {
                            worst = worst.max(2);
                        }
                    }
                    Err(e) => {
                        println!("[error] {}: {e}", path.display());
                        worst = worst.max(code(e));
                    }
                }
            }
            ExitCode::from(worst)
        }
        Command::Converge { config, levels, out } => {
            let loaded = match LoadedConfig::read(&config) {
                Ok(l) => l,
                Err(e) => return fail(&e),
            };
            match convergence_study(&loaded, &levels) {
                Ok(rows) => {
                    let path = out.unwrap_or_else(|| loaded.output_dir().join("convergence.csv"));
                    if let Some(parent) = path.parent() {
                        if let Err(e) = std::fs::create_dir_all(parent) {
                            return fail(&e.into());
                        }
                    }
                    if let Err(e) = write_convergence(&rows, &path) {
                        return fail(&e);
                    }
                    println!("{:>6} {:>12} {:>12} {:>8}", "nx", "dt", "error", "order");
                    for r in &rows {
                        println!("{:>6} {:>12.4e} {:>12.4e} {:>8.3}", r.nx, r.dt, r.error, r.observed_order);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::ProbeDelta { config, lo, hi, steps } => {
            let loaded = match LoadedConfig::read(&config) {
                Ok(l) => l,
                Err(e) => return fail(&e),
            };
            match probe_delta_for(&loaded, lo, hi, steps) {
                Ok(p) => {
                    println!("delta = {:e} (fails at {:e}, {} solves)", p.delta, p.failed_at, p.evaluations);
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
    }
}
