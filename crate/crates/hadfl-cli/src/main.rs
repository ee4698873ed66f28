//! Experiment command line: run training schemes, compare metrics files,
//! inspect checkpoints.
//!
//! Exit codes: 0 success, 1 configuration error, 2 aborted run, 3 i/o
//! error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hadfl_core::compare::compare;
use hadfl_core::config::{ExperimentConfig, Scheme};
use hadfl_core::coordinator::read_checkpoint;
use hadfl_core::error::Error;
use hadfl_core::metrics;
use hadfl_core::runner::run_experiment;

#[derive(Parser)]
#[command(
    name = "hadfl",
    about = "Heterogeneity-aware decentralized federated learning experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured scheme over all seeds.
    Run {
        /// Experiment configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the training scheme (hadfl, dfedavg, sync-allreduce).
        #[arg(long)]
        scheme: Option<String>,
        /// Suppress per-round progress output.
        #[arg(long)]
        quiet: bool,
    },
    /// Summarize and compare finished runs from their metrics files.
    Compare {
        /// Metrics files produced by `run` (at least two).
        files: Vec<PathBuf>,
        /// Where to write summary.txt and summary.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fraction of the reference scheme's best accuracy used as the
        /// common target.
        #[arg(long, default_value_t = 0.95)]
        common_fraction: f64,
    },
    /// Print the contents of a checkpoint file.
    InspectCheckpoint {
        /// Path to a ckpt_*.bin file.
        path: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::InvalidParam { .. } => 1,
        Error::Aborted(_) => 2,
        Error::Io(_) | Error::BadCheckpoint(_) => 3,
        _ => 1,
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            scheme,
            quiet,
        } => run_command(&config, seed, out, scheme, quiet),
        Command::Compare {
            files,
            out,
            common_fraction,
        } => compare_command(&files, out, common_fraction),
        Command::InspectCheckpoint { path } => inspect_command(&path),
    }
}

fn run_command(
    config_path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    scheme: Option<String>,
    quiet: bool,
) -> Result<(), Error> {
    let text = std::fs::read_to_string(config_path)?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(seed) = seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    if let Some(scheme) = scheme {
        cfg.scheme = Scheme::parse(&scheme)?;
    }
    cfg.validate()?;
    let artifacts = run_experiment(&cfg)?;
    let mut any_aborted = false;
    for art in &artifacts {
        let last = art.output.records.last();
        if !quiet {
            println!(
                "{} seed {}: {} rounds, virtual time {:.3}s, accuracy {}, metrics {}",
                cfg.scheme.label(),
                art.seed,
                art.output.records.len(),
                art.output.virtual_time,
                last.map(|r| format!("{:.4}", r.test_accuracy))
                    .unwrap_or_else(|| "-".into()),
                art.metrics_path.display()
            );
        }
        if art.output.aborted {
            any_aborted = true;
            eprintln!(
                "seed {} aborted: {}",
                art.seed,
                art.output
                    .abort_reason
                    .clone()
                    .unwrap_or_else(|| "unknown".into())
            );
        }
    }
    if any_aborted {
        return Err(Error::Aborted(
            "one or more seeds aborted; partial metrics and checkpoints written".into(),
        ));
    }
    Ok(())
}

/// Scheme label from a metrics file name of the form
/// `metrics_{scheme}_seed{n}.csv`; falls back to the file stem.
fn scheme_label(path: &Path) -> String {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("run")
        .to_string();
    stem.strip_prefix("metrics_")
        .and_then(|rest| rest.rsplit_once("_seed").map(|(s, _)| s.to_string()))
        .unwrap_or(stem)
}

fn compare_command(
    files: &[PathBuf],
    out: Option<PathBuf>,
    common_fraction: f64,
) -> Result<(), Error> {
    if files.len() < 2 {
        return Err(Error::config("files", "need at least two metrics files"));
    }
    let mut runs = Vec::new();
    for path in files {
        let records = metrics::read_file(path)?;
        runs.push((scheme_label(path), records));
    }
    let reference = runs
        .iter()
        .map(|(s, _)| s.clone())
        .find(|s| s == "sync-allreduce");
    let cmp = compare(&runs, reference.as_deref(), common_fraction)?;
    let table = cmp.render_table();
    print!("{table}");
    let out_dir = out.unwrap_or_else(|| {
        files[0]
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("summary.txt"), &table)?;
    std::fs::write(out_dir.join("summary.csv"), cmp.render_csv())?;
    Ok(())
}

fn inspect_command(path: &Path) -> Result<(), Error> {
    let ckpt = read_checkpoint(path)?;
    println!("file:         {}", path.display());
    println!("sync round:   {}", ckpt.sync_round);
    println!("dimension:    {}", ckpt.params.dim());
    println!("l2 norm:      {:.6}", ckpt.params.l2_norm());
    println!("config digest: {}", hex_digest(&ckpt.config_digest));
    let head: Vec<String> = ckpt
        .params
        .as_slice()
        .iter()
        .take(8)
        .map(|v| format!("{v:.6}"))
        .collect();
    println!("head:         [{}]", head.join(", "));
    Ok(())
}

fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
