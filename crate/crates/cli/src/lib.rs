//! `fedproc` command line: run experiments, inspect partitions, check
//! gradients, and compare finished runs.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use fedproc::gradcheck::{run_suite, MAX_RELATIVE_ERROR};
use fedproc::harness::{apply_override, Experiment, ExperimentConfig, METRICS_FILE};
use fedproc::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "fedproc",
    version,
    about = "Prototypical contrastive federated learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write metrics.csv and run.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// `key=value` (dotted keys for sections); may repeat.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print per-client class histograms of the configured partition.
    PartitionStats {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        /// Random parameter points per network/loss pair.
        #[arg(long, default_value_t = 10)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a final-accuracy table for finished runs.
    Compare {
        /// metrics.csv files, or run directories containing one.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

/// Parses `argv` (program name first), runs the command, and returns the
/// process exit code.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut stdout = std::io::stdout().lock();
    match dispatch(cli.command, &mut stdout) {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>, overrides: &[String]) -> Result<ExperimentConfig, Failure> {
    if !path.exists() {
        return Err(Failure::Config(format!("config file not found: {}", path.display())));
    }
    let mut all = overrides.to_vec();
    if let Some(s) = seed {
        all.push(format!("seed={s}"));
    }
    // validate override syntax up front for a clearer message
    for o in &all {
        apply_override(&mut Default::default(), o)?;
    }
    Ok(ExperimentConfig::load(path, &all)?)
}

fn io_failure(e: std::io::Error) -> Failure {
    Failure::Runtime(format!("writing output: {e}"))
}

fn dispatch(command: Command, out: &mut impl Write) -> Result<(), Failure> {
    match command {
        Command::Run {
            config,
            seed,
            overrides,
        } => {
            let cfg = load_config(&config, seed, &overrides)?;
            let experiment = Experiment::prepare(&cfg)?;
            let dir = cfg.resolved_output_dir();
            let history = experiment.run_to_dir(&dir)?;
            let last = history.last().expect("rounds validated positive");
            writeln!(
                out,
                "{} seed={} rounds={} final_top1={:.4} (std {:.4}) -> {}",
                cfg.strategy,
                cfg.seed,
                history.len(),
                last.top1_accuracy,
                last.top1_std,
                dir.display()
            )
            .map_err(io_failure)
        }
        Command::PartitionStats {
            config,
            seed,
            overrides,
        } => {
            let cfg = load_config(&config, seed, &overrides)?;
            let experiment = Experiment::prepare(&cfg)?;
            let clients = experiment.federation().clients();
            let k = clients[0].data.num_classes();
            let header: Vec<String> = (0..k).map(|c| format!("c{c}")).collect();
            writeln!(out, "client,size,{}", header.join(",")).map_err(io_failure)?;
            for c in clients {
                let hist: Vec<String> = c.class_histogram().iter().map(usize::to_string).collect();
                writeln!(out, "{},{},{}", c.client_id, c.len(), hist.join(",")).map_err(io_failure)?;
            }
            Ok(())
        }
        Command::Gradcheck { points, seed } => {
            if points == 0 {
                return Err(Failure::Config("--points must be at least 1".into()));
            }
            let reports = run_suite(points, seed)?;
            let mut all_passed = true;
            for r in &reports {
                all_passed &= r.passed();
                writeln!(
                    out,
                    "{} {:<24} points={} components={} kinks_skipped={} max_rel_err={:.3e} (limit {:.0e})",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.name,
                    r.points.len(),
                    r.components_checked(),
                    r.kinks_skipped(),
                    r.max_relative_error(),
                    MAX_RELATIVE_ERROR
                )
                .map_err(io_failure)?;
            }
            if all_passed {
                Ok(())
            } else {
                Err(Failure::Runtime("gradient check failed".into()))
            }
        }
        Command::Compare { runs } => {
            let finals = runs
                .iter()
                .map(|p| final_accuracy(p).map(|a| (p, a)))
                .collect::<Result<Vec<_>, _>>()?;
            let baseline = finals[0].1;
            writeln!(out, "{:<40} {:>12} {:>12}", "run", "final_top1", "delta").map_err(io_failure)?;
            for (path, acc) in &finals {
                writeln!(out, "{:<40} {:>12.4} {:>+12.4}", path.display(), acc, acc - baseline).map_err(io_failure)?;
            }
            Ok(())
        }
    }
}

/// `top1_accuracy` of the last row of a metrics CSV.
fn final_accuracy(path: &Path) -> Result<f64, Failure> {
    let file = if path.is_dir() {
        path.join(METRICS_FILE)
    } else {
        path.to_path_buf()
    };
    let mut reader = csv::Reader::from_path(&file).map_err(|e| Failure::Runtime(format!("{}: {e}", file.display())))?;
    let col = reader
        .headers()
        .map_err(|e| Failure::Runtime(format!("{}: {e}", file.display())))?
        .iter()
        .position(|h| h == "top1_accuracy")
        .ok_or_else(|| Failure::Runtime(format!("{}: no top1_accuracy column", file.display())))?;
    let mut last = None;
    for record in reader.records() {
        let record = record.map_err(|e| Failure::Runtime(format!("{}: {e}", file.display())))?;
        last = Some(record[col].to_string());
    }
    let last = last.ok_or_else(|| Failure::Runtime(format!("{}: no rows", file.display())))?;
    last.parse()
        .map_err(|e| Failure::Runtime(format!("{}: bad accuracy {last:?}: {e}", file.display())))
}
