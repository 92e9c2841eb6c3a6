//! `wssas` — deterministic text-categorization pipeline runner.
//!
//! Subcommands mirror the pipeline stages and each writes immutable
//! artifacts into the output directory, tracked by a digest manifest.
//! Exit codes: 0 success, 1 usage/config error, 2 missing upstream
//! artifact, 3 backend failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wssas_core::categorize::Scenario;
use wssas_core::hierarchy::Stage;
use wssas_core::sos::Mode;

use wssas_cli::config::{BackendKind, PipelineConfig};
use wssas_cli::manifest::{DirLock, Manifest};
use wssas_cli::pipeline::{self, Context, StepError, StepOutcome};

const EXIT_CONFIG: u8 = 1;
const EXIT_UPSTREAM: u8 = 2;
const EXIT_BACKEND: u8 = 3;

#[derive(Parser)]
#[command(name = "wssas", version, about = "Hierarchical text categorization pipeline")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for artifacts and the manifest.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for K-Means and remote generation requests.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Backend kind: stub or http.
    #[arg(long, global = true, value_name = "KIND")]
    backend: Option<String>,
    /// Re-run the step even if its artifacts are up to date.
    #[arg(long, global = true)]
    force: bool,
    /// Maximum concurrent remote requests.
    #[arg(long = "max-inflight", global = true, value_name = "N")]
    max_inflight: Option<usize>,
    /// Override any config key: --set section.key=value (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest the configured input file into a canonical corpus.
    Ingest,
    /// Compute the volume/presence dataset profile.
    Characterize,
    /// Embed the corpus and build the theme/story/cluster hierarchy.
    Hierarchy,
    /// Compute keyword profiles, amplitudes, and SNR scores.
    Snr,
    /// Apply the irrelevant-data and outlier filters.
    Filter,
    /// Generate summary-of-summaries context trees.
    Summarize {
        /// weighted or unweighted.
        #[arg(long)]
        mode: String,
        #[arg(long, default_value = "no_irrelevant_no_outliers")]
        stage: String,
    },
    /// Extract topics per datapoint and form K-Means category-clusters.
    Categorize {
        /// baseline, ssas, or wssas.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "no_irrelevant_no_outliers")]
        stage: String,
    },
    /// Run the QAG + triage + G-Eval comparison of both summary modes.
    Evaluate {
        #[arg(long, default_value = "no_irrelevant_no_outliers")]
        stage: String,
    },
    /// Collect clustering-validity metrics across completed scenarios.
    Metrics,
    /// Export category transition flows between two scenarios.
    Sankey {
        scenario_a: String,
        scenario_b: String,
        #[arg(long, default_value = "no_irrelevant_no_outliers")]
        stage: String,
    },
    /// Emit stage-count and per-scenario report tables (JSON and text).
    Report,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are not errors.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(EXIT_CONFIG);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(outcome) => {
            match outcome {
                StepOutcome::Ran(step) => println!("ok: {step}"),
                StepOutcome::UpToDate(step) => println!("up to date: {step}"),
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                StepError::Upstream(_) => EXIT_UPSTREAM,
                StepError::Backend(_) => EXIT_BACKEND,
                StepError::Other(_) => EXIT_CONFIG,
            };
            ExitCode::from(code)
        }
    }
}

fn parse_arg<T: std::str::FromStr<Err = String>>(value: &str) -> Result<T, StepError> {
    value
        .parse::<T>()
        .map_err(|e| StepError::Other(anyhow::anyhow!("{e}")))
}

fn run(cli: Cli) -> Result<StepOutcome, StepError> {
    let mut config = PipelineConfig::load(cli.config.as_deref(), &cli.set)
        .map_err(StepError::Other)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out_dir = Some(out);
    }
    if let Some(backend) = cli.backend {
        config.backend.kind = match backend.as_str() {
            "stub" => BackendKind::Stub,
            "http" => BackendKind::Http,
            other => {
                return Err(StepError::Other(anyhow::anyhow!(
                    "unknown backend '{other}' (expected stub or http)"
                )))
            }
        };
    }
    if let Some(max_inflight) = cli.max_inflight {
        config.backend.max_inflight = max_inflight;
    }
    config.validate().map_err(StepError::Other)?;

    let out_dir = config
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out"));
    let _lock = DirLock::acquire(&out_dir).map_err(StepError::Other)?;
    let mut manifest = Manifest::load_or_new(&out_dir, &config).map_err(StepError::Other)?;
    manifest.config = config.clone();
    let mut ctx = Context {
        config: &config,
        out_dir: &out_dir,
        manifest: &mut manifest,
        force: cli.force,
    };

    match &cli.command {
        Command::Ingest => pipeline::run_ingest(&mut ctx),
        Command::Characterize => pipeline::run_characterize(&mut ctx),
        Command::Hierarchy => pipeline::run_hierarchy(&mut ctx),
        Command::Snr => pipeline::run_snr(&mut ctx),
        Command::Filter => pipeline::run_filter(&mut ctx),
        Command::Summarize { mode, stage } => {
            let mode: Mode = parse_arg(mode)?;
            let stage: Stage = parse_arg(stage)?;
            pipeline::run_summarize(&mut ctx, mode, stage)
        }
        Command::Categorize { scenario, stage } => {
            let scenario: Scenario = parse_arg(scenario)?;
            let stage: Stage = parse_arg(stage)?;
            pipeline::run_categorize(&mut ctx, scenario, stage)
        }
        Command::Evaluate { stage } => {
            let stage: Stage = parse_arg(stage)?;
            pipeline::run_evaluate(&mut ctx, stage)
        }
        Command::Metrics => pipeline::run_metrics(&mut ctx),
        Command::Sankey {
            scenario_a,
            scenario_b,
            stage,
        } => {
            let a: Scenario = parse_arg(scenario_a)?;
            let b: Scenario = parse_arg(scenario_b)?;
            let stage: Stage = parse_arg(stage)?;
            pipeline::run_sankey(&mut ctx, a, b, stage)
        }
        Command::Report => pipeline::run_report(&mut ctx),
    }
}
