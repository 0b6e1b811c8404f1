use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deepfeat_cli::config::{parse_fractions, OUT_ENV};
use deepfeat_cli::pipeline::with_jobs;
use deepfeat_cli::{ConfigError, ExperimentConfig, Pipeline, PipelineError, Stage, StageStatus};

/// Classical classifiers and embedded feature selection over pooled deep features.
#[derive(Parser)]
#[command(name = "deepfeat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (overrides the config and DEEPFEAT_OUT).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Master seed (overrides the config).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Comma-separated selection fractions (overrides the config).
    #[arg(long, global = true, value_name = "CSV")]
    fractions: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Pool feature maps listed in the manifest into a feature matrix.
    Ingest,
    /// Stratified train/validation/test split.
    Split,
    /// Tune and fit every classifier on the full feature set.
    Train,
    /// Rank features with each selector.
    Select,
    /// Tune and evaluate classifiers on every top-fraction subset.
    Sweep,
    /// Write report CSVs and tables.
    Report,
    /// Run every stage, skipping completed ones.
    All,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, PipelineError> {
    let path = cli
        .config
        .as_ref()
        .ok_or(ConfigError::Missing("--config"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(f) = &cli.fractions {
        cfg.fractions = parse_fractions(f).map_err(|reason| ConfigError::Value {
            section: "selection".into(),
            key: "--fractions".into(),
            reason,
        })?;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    } else if let Some(out) = std::env::var_os(OUT_ENV) {
        cfg.out_dir = PathBuf::from(out);
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = load(cli)?;
    let pipeline = Pipeline::new(cfg)?;
    let stages: Vec<Stage> = match cli.command {
        Command::Ingest => vec![Stage::Ingest],
        Command::Split => vec![Stage::Split],
        Command::Train => vec![Stage::Train],
        Command::Select => vec![Stage::Select],
        Command::Sweep => vec![Stage::Sweep],
        Command::Report => vec![Stage::Report],
        Command::All => Stage::ALL.to_vec(),
    };
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    with_jobs(jobs, || {
        for stage in stages {
            let start = std::time::Instant::now();
            match pipeline.run(stage)? {
                StageStatus::Ran => {
                    eprintln!("{stage}: done in {:.1}s", start.elapsed().as_secs_f64())
                }
                StageStatus::UpToDate => eprintln!("{stage}: up to date"),
            }
        }
        Ok::<(), PipelineError>(())
    })?;
    eprintln!("outputs in {}", pipeline.out_dir().display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
