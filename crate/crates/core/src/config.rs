//! Experiment configuration as a flat `key = value` text file.
//!
//! Blank lines and `#` comments are ignored; keys are the field names of
//! [`ExperimentConfig`]. Every field has a default, so a file holding only
//! `seed = 7` is a complete configuration.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::compare::{parse_methods, ComparisonConfig, Method};
use crate::featsel::{CeObjective, CeParams};
use crate::federation::{FederationConfig, Mode};
use crate::regressor::TrainConfig;
use crate::traffic::Service;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Packet trace CSV; a synthetic trace is generated when unset.
    pub trace: Option<PathBuf>,
    /// Feature CSV; takes precedence over `trace` where features are needed.
    pub features: Option<PathBuf>,
    /// Length in seconds of the synthetic trace.
    pub duration: f64,
    /// Window length in seconds.
    pub window: f64,
    /// Service whose share becomes the service-class label.
    pub service: Service,
    pub bins: usize,
    /// `all` or a comma-separated list of selectors.
    pub methods: String,
    /// Subset size of the ranking selectors.
    pub k: usize,
    pub anova_groups: usize,
    pub ce_candidates: usize,
    pub ce_elite_frac: f64,
    pub ce_smoothing: f64,
    pub ce_init_prob: f64,
    pub ce_tolerance: f64,
    pub ce_max_iters: usize,
    /// Label permutations of the null-adjusted objective; 0 selects the
    /// plain plug-in objective.
    pub ce_permutations: usize,
    pub hidden: usize,
    pub batch_size: usize,
    /// Regressor training for the selector comparison.
    pub epochs: usize,
    pub lr: f64,
    /// Server-side supervised training in the federation.
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub local_epochs: usize,
    pub local_lr: f64,
    pub merge_momentum: f64,
    pub threshold: f64,
    pub max_rounds: usize,
    pub fs_every_round: bool,
    pub num_gateways: usize,
    pub server_frac: f64,
    pub test_frac: f64,
    pub mode: Mode,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let fed = FederationConfig::default();
        let cmp = ComparisonConfig::default();
        let ce = CeParams::default();
        Self {
            trace: None,
            features: None,
            duration: 8000.0,
            window: 1.0,
            service: Service::YouTube,
            bins: fed.bins,
            methods: "all".into(),
            k: cmp.k,
            anova_groups: cmp.anova_groups,
            ce_candidates: ce.candidates,
            ce_elite_frac: ce.elite_frac,
            ce_smoothing: ce.smoothing,
            ce_init_prob: ce.init_prob,
            ce_tolerance: ce.tolerance,
            ce_max_iters: ce.max_iters,
            ce_permutations: match ce.objective {
                CeObjective::PlugIn => 0,
                CeObjective::NullAdjusted { permutations } => permutations,
            },
            hidden: fed.hidden,
            batch_size: fed.batch_size,
            epochs: cmp.train.epochs,
            lr: cmp.train.lr,
            pretrain_epochs: fed.pretrain_epochs,
            pretrain_lr: fed.lr,
            local_epochs: fed.local_epochs,
            local_lr: fed.local_lr,
            merge_momentum: fed.merge_momentum,
            threshold: fed.threshold,
            max_rounds: fed.max_rounds,
            fs_every_round: fed.fs_every_round,
            num_gateways: fed.num_gateways,
            server_frac: fed.server_frac,
            test_frac: fed.test_frac,
            mode: Mode::Fr,
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl ExperimentConfig {
    /// Parses the text of a configuration file on top of the defaults.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_text(&text)
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "trace" => self.trace = optional_path(value),
            "features" => self.features = optional_path(value),
            "duration" => self.duration = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            "service" => self.service = parse(key, value)?,
            "bins" => self.bins = parse(key, value)?,
            "methods" => {
                parse_methods(value).map_err(|e| ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                    reason: e.to_string(),
                })?;
                self.methods = value.to_string();
            }
            "k" => self.k = parse(key, value)?,
            "anova_groups" => self.anova_groups = parse(key, value)?,
            "ce_candidates" => self.ce_candidates = parse(key, value)?,
            "ce_elite_frac" => self.ce_elite_frac = parse(key, value)?,
            "ce_smoothing" => self.ce_smoothing = parse(key, value)?,
            "ce_init_prob" => self.ce_init_prob = parse(key, value)?,
            "ce_tolerance" => self.ce_tolerance = parse(key, value)?,
            "ce_max_iters" => self.ce_max_iters = parse(key, value)?,
            "ce_permutations" => self.ce_permutations = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, value)?,
            "pretrain_lr" => self.pretrain_lr = parse(key, value)?,
            "local_epochs" => self.local_epochs = parse(key, value)?,
            "local_lr" => self.local_lr = parse(key, value)?,
            "merge_momentum" => self.merge_momentum = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "max_rounds" => self.max_rounds = parse(key, value)?,
            "fs_every_round" => self.fs_every_round = parse(key, value)?,
            "num_gateways" => self.num_gateways = parse(key, value)?,
            "server_frac" => self.server_frac = parse(key, value)?,
            "test_frac" => self.test_frac = parse(key, value)?,
            "mode" => self.mode = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn methods(&self) -> Vec<Method> {
        parse_methods(&self.methods).expect("validated when set")
    }

    pub fn ce_params(&self) -> CeParams {
        CeParams {
            candidates: self.ce_candidates,
            elite_frac: self.ce_elite_frac,
            smoothing: self.ce_smoothing,
            init_prob: self.ce_init_prob,
            tolerance: self.ce_tolerance,
            max_iters: self.ce_max_iters,
            objective: match self.ce_permutations {
                0 => CeObjective::PlugIn,
                permutations => CeObjective::NullAdjusted { permutations },
            },
            seed: self.seed,
            ..CeParams::default()
        }
    }

    pub fn comparison(&self) -> ComparisonConfig {
        ComparisonConfig {
            k: self.k,
            bins: self.bins,
            anova_groups: self.anova_groups,
            ce: self.ce_params(),
            hidden: self.hidden,
            train: TrainConfig {
                epochs: self.epochs,
                batch_size: self.batch_size,
                lr: self.lr,
                seed: self.seed,
            },
        }
    }

    pub fn federation(&self) -> FederationConfig {
        FederationConfig {
            num_gateways: self.num_gateways,
            server_frac: self.server_frac,
            test_frac: self.test_frac,
            hidden: self.hidden,
            pretrain_epochs: self.pretrain_epochs,
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            lr: self.pretrain_lr,
            local_lr: self.local_lr,
            merge_momentum: self.merge_momentum,
            threshold: self.threshold,
            max_rounds: self.max_rounds,
            bins: self.bins,
            ce: self.ce_params(),
            fs_every_round: self.fs_every_round,
            seed: self.seed,
        }
    }
}
