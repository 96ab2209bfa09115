use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use most_core::harness::compare::{self, Sweep};
use most_core::harness::metrics::to_csv;
use most_core::harness::{self, calibrate, ExperimentConfig, MetricsSnapshot, RunSummary};
use most_core::workloads::read_trace_file;

#[derive(Parser)]
#[command(name = "most", version, about = "Two-tier storage placement simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the engine and workload seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override any dotted key, e.g. `--set policy.theta=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[command(flatten)]
        common: Common,
        /// Directory for metrics.csv and summary.json; CSV goes to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep configuration keys and tabulate the results.
    Compare {
        #[command(flatten)]
        common: Common,
        /// `key=v1,v2,...`; repeat for a cartesian product.
        #[arg(long, required = true)]
        sweep: Vec<Sweep>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run sweep points one at a time.
        #[arg(long)]
        sequential: bool,
    },
    /// Replay a block trace (`<timestamp_us> <R|W> <lba> <len>` per line).
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find the worker count that saturates the performance device.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
}

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.set("seed", &seed.to_string())?;
    }
    for o in &common.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got `{o}`"))?;
        config.set(k, v)?;
    }
    Ok(config)
}

fn emit(out: Option<&Path>, rows: &[MetricsSnapshot], summary: &RunSummary) -> Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("metrics.csv"), to_csv(rows))?;
            std::fs::write(dir.join("summary.json"), summary.to_json())?;
            eprintln!("wrote {}", dir.display());
        }
        None => print!("{}", to_csv(rows)),
    }
    eprintln!(
        "{}: steady {:.1} MB/s, migrated {} B, mirrored {} B, cleaned {} B, offload ratio {:.3}",
        summary.policy,
        summary.steady_throughput_mbps,
        summary.migration_bytes(),
        summary.mirror_bytes(),
        summary.clean_bytes(),
        summary.totals.offload_ratio
    );
    Ok(())
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common, out } => {
            let config = load(&common)?;
            let (rows, summary) = harness::run(&config)?;
            emit(out.as_deref(), &rows, &summary)
        }
        Command::Compare { common, sweep, out, sequential } => {
            let config = load(&common)?;
            let results = compare::compare(&config, &sweep, !sequential)?;
            let summary = compare::summary_csv(&results);
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    std::fs::write(dir.join("summary.csv"), &summary)?;
                    std::fs::write(dir.join("long.csv"), compare::long_csv(&results))?;
                    for (i, r) in results.iter().enumerate() {
                        std::fs::write(dir.join(format!("point{i}_metrics.csv")), to_csv(&r.rows))?;
                    }
                    eprintln!("wrote {}", dir.display());
                }
                None => print!("{summary}"),
            }
            Ok(())
        }
        Command::Replay { trace, common, out } => {
            let config = load(&common)?;
            let ops = read_trace_file(&trace)?;
            let (rows, summary) = harness::run_trace(&config, ops)?;
            emit(out.as_deref(), &rows, &summary)
        }
        Command::Calibrate { common } => {
            let config = load(&common)?;
            let c = calibrate::calibrate(&config)?;
            for (w, mbps) in &c.probes {
                eprintln!("{w:>6} workers: {mbps:>9.1} MB/s");
            }
            println!("calibrated_workers = {}  # saturation target {:.1} MB/s", c.workers, c.target_mbps);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
