//! Command-line front end: trace synthesis, feature extraction, selector
//! comparison and federated experiments.
//!
//! Exit codes: 0 on success (a federation that did not converge is still a
//! success), 1 on internal errors, 2 on usage or input errors.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::compare::{compare_selectors, holdout_split, write_rmse_table, CompareError};
use crate::config::{ConfigError, ExperimentConfig};
use crate::featsel::{write_selection_report, MethodSelection};
use crate::federation::{run_experiment, ExperimentData, FederationError, Mode};
use crate::traffic::{
    extract_features, feature_matrix, generate_synthetic_trace, parse_trace, quic_labels, read_features_file,
    write_features, write_trace, FeatureRow, PacketRecord, SynthConfig, TrafficError, FEATURE_NAMES,
};

#[derive(Debug, Parser)]
#[command(name = "quicfed", version, about = "Federated estimation of the QUIC share of mixed traffic")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// CR, FR or RFR.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// `all` or a comma-separated list of ce, mrmr, cmim, disr, anova.
    #[arg(long, global = true)]
    pub methods: Option<String>,
    /// Window length in seconds.
    #[arg(long, global = true)]
    pub window: Option<String>,
    #[arg(long, global = true)]
    pub gateways: Option<String>,
    /// Any other configuration key, as `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic packet trace (`trace.csv`).
    Synth {
        /// Trace length in seconds.
        #[arg(long)]
        duration: Option<String>,
    },
    /// Window a trace into feature rows (`features.csv`).
    Extract {
        /// Packet trace CSV; synthetic when omitted.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Compare selectors and the regressor trained on each subset
    /// (`selection.csv`, `rmse.csv`).
    Select {
        /// Feature CSV; extracted from the configured trace when omitted.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Subset size of the ranking selectors.
        #[arg(long)]
        k: Option<String>,
    },
    /// Run one federated experiment (`report_<mode>.json`, `rounds_<mode>.csv`).
    Federate {
        #[arg(long)]
        features: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

/// Traffic errors come from reading or validating user input.
impl From<TrafficError> for CliError {
    fn from(e: TrafficError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<CompareError> for CliError {
    fn from(e: CompareError) -> Self {
        match e {
            CompareError::UnknownMethod(_) | CompareError::KTooLarge { .. } | CompareError::BadSplit(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<FederationError> for CliError {
    fn from(e: FederationError) -> Self {
        match e {
            FederationError::Config(_) | FederationError::Traffic(_) => CliError::Usage(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Internal(format!("{}: {e}", path.display()))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| io_error(&path, e))
}

/// Config file, then the shared flags, then subcommand flags.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let mut overrides: Vec<(&str, String)> = Vec::new();
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        overrides.push((k.trim(), v.trim().to_string()));
    }
    let path_str = |p: &PathBuf| p.to_string_lossy().into_owned();
    let flags = [
        ("seed", c.seed.map(|s| s.to_string())),
        ("out", c.out.as_ref().map(path_str)),
        ("mode", c.mode.clone()),
        ("methods", c.methods.clone()),
        ("window", c.window.clone()),
        ("num_gateways", c.gateways.clone()),
    ];
    overrides.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))));
    match &cli.command {
        Command::Synth { duration } => overrides.extend(duration.clone().map(|d| ("duration", d))),
        Command::Extract { trace } => overrides.extend(trace.as_ref().map(|t| ("trace", path_str(t)))),
        Command::Select { features, k } => {
            overrides.extend(features.as_ref().map(|f| ("features", path_str(f))));
            overrides.extend(k.clone().map(|k| ("k", k)));
        }
        Command::Federate { features } => overrides.extend(features.as_ref().map(|f| ("features", path_str(f)))),
    }
    for (k, v) in overrides {
        cfg.set(k, &v)?;
    }
    Ok(cfg)
}

fn load_trace(cfg: &ExperimentConfig) -> Result<Vec<PacketRecord>, CliError> {
    Ok(match &cfg.trace {
        Some(path) => parse_trace(path)?,
        None => generate_synthetic_trace(&SynthConfig::default(), cfg.duration, cfg.seed)?,
    })
}

fn load_features(cfg: &ExperimentConfig) -> Result<Vec<FeatureRow>, CliError> {
    let rows = match &cfg.features {
        Some(path) => read_features_file(path)?,
        None => extract_features(&load_trace(cfg)?, cfg.window, cfg.service)?,
    };
    if rows.is_empty() {
        return Err(CliError::Usage("no feature rows to work with".into()));
    }
    Ok(rows)
}

fn cmd_synth(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let trace = generate_synthetic_trace(&SynthConfig::default(), cfg.duration, cfg.seed)?;
    write_trace(create(&cfg.out, "trace.csv")?, &trace)?;
    println!("wrote {} packets to {}", trace.len(), cfg.out.join("trace.csv").display());
    Ok(())
}

fn cmd_extract(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let rows = extract_features(&load_trace(cfg)?, cfg.window, cfg.service)?;
    write_features(create(&cfg.out, "features.csv")?, &rows)?;
    println!("wrote {} feature rows to {}", rows.len(), cfg.out.join("features.csv").display());
    Ok(())
}

fn cmd_select(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let methods = cfg.methods();
    let comparison = cfg.comparison();
    if comparison.k > FEATURE_NAMES.len() {
        return Err(CliError::Usage(format!(
            "k = {} exceeds the {} available features",
            comparison.k,
            FEATURE_NAMES.len()
        )));
    }
    let rows = load_features(cfg)?;
    let (xtr, ytr, xte, yte) = holdout_split(&feature_matrix(&rows), &quic_labels(&rows), cfg.test_frac, cfg.seed)?;
    let outcomes = compare_selectors((&xtr, &ytr), (&xte, &yte), &methods, &comparison)?;

    let selections: Vec<MethodSelection<'_>> = outcomes
        .iter()
        .filter_map(|o| {
            o.selection.as_ref().map(|result| MethodSelection {
                method: o.label(),
                result,
            })
        })
        .collect();
    write_selection_report(create(&cfg.out, "selection.csv")?, &FEATURE_NAMES, &selections)
        .map_err(|e| io_error(&cfg.out.join("selection.csv"), e))?;
    write_rmse_table(create(&cfg.out, "rmse.csv")?, &outcomes).map_err(|e| io_error(&cfg.out.join("rmse.csv"), e))?;
    for o in &outcomes {
        let features: Vec<String> = o.columns.iter().map(|c| (c + 1).to_string()).collect();
        println!("{:6} n={} rmse={:.6} features=[{}]", o.label(), o.columns.len(), o.rmse, features.join(","));
    }
    Ok(())
}

fn cmd_federate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let fed = cfg.federation();
    let rows = load_features(cfg)?;
    let data = ExperimentData::from_rows(&rows, &fed)?;
    let report = run_experiment(&data, &fed, cfg.mode)?;
    let tag = cfg.mode.to_string().to_lowercase();
    let json = format!("report_{tag}.json");
    let csv = format!("rounds_{tag}.csv");
    report
        .write_json(create(&cfg.out, &json)?)
        .map_err(|e| io_error(&cfg.out.join(&json), e))?;
    report
        .write_round_csv(create(&cfg.out, &csv)?)
        .map_err(|e| io_error(&cfg.out.join(&csv), e))?;
    println!("{}", report.totals_line());
    if cfg.mode != Mode::Cr && report.totals.conv_rounds.federation.is_none() {
        eprintln!("note: no convergence within {} rounds", fed.max_rounds);
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    match cli.command {
        Command::Synth { .. } => cmd_synth(&cfg),
        Command::Extract { .. } => cmd_extract(&cfg),
        Command::Select { .. } => cmd_select(&cfg),
        Command::Federate { .. } => cmd_federate(&cfg),
    }
}

/// Parses the process arguments and runs; clap's own usage errors also
/// exit with 2.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
