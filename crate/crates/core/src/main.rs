use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use sievesim::harness::{
    emit_results, experiment_test_function, fit_slopes, rates_table, read_results_csv,
    replication_dataset, run_experiment, slopes_csv, ExperimentConfig, OutputFormat,
};
use sievesim::Error;

#[derive(Parser)]
#[command(
    name = "sievesim",
    version,
    about = "Nested simulation experiments with least-squares sieve estimators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write results.csv, results_slopes.csv and results.json.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replications: Option<usize>,
        /// Output directory.
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Print predicted convergence rates for the configured estimators.
    Rates { config: PathBuf },
    /// Write the configured test function, or one replication's dataset.
    Gen {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = GenWhat::Function)]
        what: GenWhat,
        /// Sweep index of the dataset cell.
        #[arg(long, default_value_t = 0)]
        cell: usize,
        #[arg(long, default_value_t = 0)]
        replication: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Refit log-log slopes from a results CSV.
    Slope {
        csv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GenWhat {
    Function,
    Dataset,
}

/// 1 for problems with the inputs, 2 for failures while running.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Csv(_) => 1,
        _ => 2,
    }
}

fn load(
    path: &Path,
    seed: Option<u64>,
    replications: Option<usize>,
) -> sievesim::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(r) = replications {
        if r == 0 {
            return Err(Error::Config("--replications must be at least 1".into()));
        }
        cfg.replications = r;
    }
    Ok(cfg)
}

fn write_or_print(out: Option<&Path>, text: &str) -> sievesim::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(command: Command) -> sievesim::Result<()> {
    match command {
        Command::Run {
            config,
            seed,
            replications,
            out,
        } => {
            let cfg = load(&config, seed, replications)?;
            let result = run_experiment(&cfg)?;
            emit_results(&result, OutputFormat::Csv, &out.join("results.csv"))?;
            emit_results(&result, OutputFormat::Json, &out.join("results.json"))?;
            println!(
                "theta = {:.6e} ({} reference points)",
                result.theta.value, result.theta.eval_points
            );
            println!(
                "{:<16} {:>8} {:>5} {:>5} {:>14} {:>14}",
                "estimator", "n", "m", "reps", "mean_abs_err", "std_abs_err"
            );
            for c in &result.cells {
                println!(
                    "{:<16} {:>8} {:>5} {:>5} {:>14.6e} {:>14.6e}",
                    c.estimator, c.n, c.m, c.replications, c.mean_abs_error, c.std_abs_error
                );
            }
            for s in &result.slopes {
                println!(
                    "slope {:<16} {:>9.4} +/- {:.4}",
                    s.estimator, s.slope, s.slope_stderr
                );
            }
            if !result.failures.is_empty() {
                eprintln!(
                    "{} fits failed; see the log for details",
                    result.failures.len()
                );
            }
            info!("results written to {}", out.display());
            Ok(())
        }
        Command::Rates { config } => {
            let cfg = load(&config, None, None)?;
            println!(
                "{:<16} {:>10} {:>10}  description",
                "estimator", "exponent", "log_power"
            );
            for row in rates_table(&cfg)? {
                match row.prediction {
                    Some(p) => {
                        let note = if row.note.is_empty() {
                            String::new()
                        } else {
                            format!(" ({})", row.note)
                        };
                        println!(
                            "{:<16} {:>10.6} {:>10.6}  {}{note}",
                            row.estimator, p.exponent, p.log_power, p.description
                        )
                    }
                    None => println!(
                        "{:<16} {:>10} {:>10}  {}",
                        row.estimator, "-", "-", row.note
                    ),
                }
            }
            Ok(())
        }
        Command::Gen {
            config,
            what,
            cell,
            replication,
            seed,
            out,
        } => {
            let cfg = load(&config, seed, None)?;
            let f = experiment_test_function(&cfg)?;
            let doc = match what {
                GenWhat::Function => f.to_document(),
                GenWhat::Dataset => {
                    let c = *cfg.cells.get(cell).ok_or_else(|| {
                        Error::Config(format!(
                            "--cell {cell}: config has {} sizes",
                            cfg.cells.len()
                        ))
                    })?;
                    replication_dataset(&cfg, &f, c, replication)?.to_document()
                }
            };
            write_or_print(out.as_deref(), &doc.render())
        }
        Command::Slope { csv, out } => {
            let cells = read_results_csv(&csv).map_err(|e| match e {
                Error::Io { path, source } => {
                    Error::Config(format!("{}: {source}", path.display()))
                }
                other => other,
            })?;
            write_or_print(out.as_deref(), &slopes_csv(&fit_slopes(&cells, 3))?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
