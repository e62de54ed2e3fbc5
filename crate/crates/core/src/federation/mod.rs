//! Simulated edge-server / gateway federation in three modes.
//!
//! * `CR` — gateways ship their raw feature rows; the server trains once on
//!   everything with ground-truth labels.
//! * `FR` — each round gateways soft-label their rows with the global model,
//!   train their local model on those labels and send it back; the server
//!   averages the local models (weighted by row counts) and blends the
//!   average into the global model.
//! * `RFR` — as FR, but every round each gateway first runs cross-entropy
//!   feature selection on its soft labels and uplinks its selection
//!   distribution; the server aggregates them into a global mask and the
//!   networks are restricted to the masked features.
//!
//! Every message is serialized with [`wire`] and charged at its exact length.
//! Gateways only ever hold feature rows; the labels of their rows live in a
//! separate [`GroundTruth`] that only the centralized mode reads.

pub mod report;
pub mod wire;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::featsel::{
    aggregate_distributions, ce_select_problem, mask_from_distribution, mask_indices, CeParams, FeatselError,
    SelectionDistribution, SelectionProblem, DEFAULT_BINS,
};
use crate::infotheory::BinStrategy;
use crate::matrix::Matrix;
use crate::regressor::{
    self, average_models, AdamState, MlpParams, Normalization, RegressorError, TrainConfig, DEFAULT_HIDDEN,
};
use crate::traffic::{feature_matrix, quic_labels, split_dataset, FeatureRow, TrafficError};

pub use report::{ConvRounds, ExperimentReport, RoundReport, Traffic, TrafficMb};
pub use wire::WireError;

#[derive(Debug, thiserror::Error)]
pub enum FederationError {
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Regressor(#[from] RegressorError),
    #[error(transparent)]
    Featsel(#[from] FeatselError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("invalid federation setting: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(&'static str),
}

pub type Result<T> = std::result::Result<T, FederationError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "CR")]
    Cr,
    #[serde(rename = "FR")]
    Fr,
    #[serde(rename = "RFR")]
    Rfr,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Cr => "CR",
            Mode::Fr => "FR",
            Mode::Rfr => "RFR",
        })
    }
}

impl FromStr for Mode {
    type Err = FederationError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CR" => Ok(Mode::Cr),
            "FR" => Ok(Mode::Fr),
            "RFR" => Ok(Mode::Rfr),
            _ => Err(FederationError::Config(format!("unknown mode '{s}' (expected CR, FR or RFR)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub num_gateways: usize,
    /// Fraction of the non-test rows labeled at the server.
    pub server_frac: f64,
    /// Fraction of all rows held out for evaluation.
    pub test_frac: f64,
    pub hidden: usize,
    /// Server-side supervised training (Step 0 and the centralized mode).
    pub pretrain_epochs: usize,
    /// Gateway training per round.
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub local_lr: f64,
    /// Weight of the gateway average when blended into the global model.
    pub merge_momentum: f64,
    /// Mean relative weight change below which the federation has converged.
    pub threshold: f64,
    pub max_rounds: usize,
    pub bins: usize,
    pub ce: CeParams,
    /// Run feature selection every round rather than only in the first.
    pub fs_every_round: bool,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            num_gateways: 10,
            server_frac: 0.2,
            test_frac: 0.2,
            hidden: DEFAULT_HIDDEN,
            pretrain_epochs: 100,
            local_epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            local_lr: 1e-3,
            merge_momentum: 0.5,
            threshold: 0.01,
            max_rounds: 50,
            bins: DEFAULT_BINS,
            ce: CeParams::default(),
            fs_every_round: true,
            seed: 0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FederationError::Config(m));
        if self.num_gateways == 0 {
            return bad("num_gateways must be at least 1".into());
        }
        if !(self.test_frac >= 0.0 && self.test_frac < 1.0) {
            return bad(format!("test_frac {} not in [0, 1)", self.test_frac));
        }
        if !(0.0..=1.0).contains(&self.merge_momentum) {
            return bad(format!("merge_momentum {} not in [0, 1]", self.merge_momentum));
        }
        if self.hidden == 0 || self.batch_size == 0 || self.max_rounds == 0 || self.bins < 2 {
            return bad("hidden, batch_size and max_rounds must be positive and bins at least 2".into());
        }
        let positive = |v: f64| v > 0.0;
        let non_negative = |v: f64| v >= 0.0;
        if !positive(self.threshold) || !non_negative(self.lr) || !non_negative(self.local_lr) {
            return bad("threshold must be positive and learning rates non-negative".into());
        }
        Ok(())
    }

    fn train_config(&self, epochs: usize, lr: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.batch_size,
            lr,
            seed,
        }
    }
}

/// SplitMix64 finalizer over `seed` and `parts`, for per-round and
/// per-gateway seeds that do not collide.
fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed;
    for &p in parts {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(p);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Labels of the gateways' rows, kept apart from anything a gateway sees.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    labels: Vec<Vec<f64>>,
}

impl GroundTruth {
    pub fn labels(&self, gateway: usize) -> &[f64] {
        &self.labels[gateway]
    }
}

/// Test, server and gateway partitions of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub test_x: Matrix,
    pub test_y: Vec<f64>,
    pub labeled_x: Matrix,
    pub labeled_y: Vec<f64>,
    /// Unlabeled rows of each gateway.
    pub gateway_rows: Vec<Matrix>,
    pub truth: GroundTruth,
}

impl ExperimentData {
    /// Holds out `test_frac` of the rows, then splits the rest between the
    /// labeled server set and the gateways. The target is the QUIC share.
    pub fn from_rows(rows: &[FeatureRow], config: &FederationConfig) -> Result<Self> {
        config.validate()?;
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0x7e57])));
        let n_test = (config.test_frac * rows.len() as f64).round() as usize;
        let test: Vec<FeatureRow> = order[..n_test].iter().map(|&i| rows[i]).collect();
        let rest: Vec<FeatureRow> = order[n_test..].iter().map(|&i| rows[i]).collect();
        let split = split_dataset(&rest, config.server_frac, config.num_gateways, config.seed)?;
        if test.is_empty() {
            return Err(FederationError::Config("no rows left for the test set".into()));
        }
        Ok(Self {
            test_x: feature_matrix(&test),
            test_y: quic_labels(&test),
            labeled_x: feature_matrix(&split.server_set),
            labeled_y: quic_labels(&split.server_set),
            gateway_rows: split.gateway_sets.iter().map(|g| feature_matrix(g)).collect(),
            truth: GroundTruth {
                labels: split.gateway_sets.iter().map(|g| quic_labels(g)).collect(),
            },
        })
    }

    pub fn n_features(&self) -> usize {
        self.labeled_x.n_cols()
    }
}

/// A gateway's persistent model and optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalModel {
    pub params: MlpParams,
    pub adam: AdamState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayNode {
    pub id: usize,
    rows: Matrix,
    /// Last global model received from the server.
    pub global: MlpParams,
    /// Mask the received global model reads.
    pub mask: Vec<bool>,
    pub local: Option<LocalModel>,
    pub soft_labels: Vec<f64>,
    pub distribution: Option<SelectionDistribution>,
}

impl GatewayNode {
    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.n_rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeServer {
    pub global: MlpParams,
    /// Normalization fitted on the full-width labeled set.
    pub stats: Normalization,
    pub labeled_x: Matrix,
    pub labeled_y: Vec<f64>,
    pub merge_momentum: f64,
    pub distribution: Option<SelectionDistribution>,
    /// Features the global model reads.
    pub mask: Vec<bool>,
}

impl EdgeServer {
    pub fn active_columns(&self) -> Vec<usize> {
        mask_indices(&self.mask)
    }

    pub fn active_stats(&self) -> Normalization {
        self.stats.select(&self.active_columns())
    }
}

/// Mean over all parameters of `|curr - prev| / (|prev| + 1e-12)`, and
/// whether it is below `threshold`.
pub fn check_convergence(prev: &MlpParams, curr: &MlpParams, threshold: f64) -> Result<(f64, bool)> {
    if !prev.same_shape(curr) {
        return Err(RegressorError::ShapeMismatch.into());
    }
    let n = prev.n_params() as f64;
    let delta = prev
        .values()
        .zip(curr.values())
        .map(|(p, c)| (c - p).abs() / (p.abs() + 1e-12))
        .sum::<f64>()
        / n;
    Ok((delta, delta < threshold))
}

/// `(1 - mu) * global + mu * average`.
fn merge(global: &MlpParams, average: &MlpParams, mu: f64) -> Result<MlpParams> {
    Ok(average_models(&[global.clone(), average.clone()], Some(&[1.0 - mu, mu]))?)
}

/// Server-side supervised training from the shared initialization.
fn supervised_fit(x: &Matrix, y: &[f64], stats: &Normalization, config: &FederationConfig) -> Result<MlpParams> {
    let mut params = MlpParams::init(x.n_cols(), config.hidden, config.seed)?;
    let mut adam = AdamState::new(&params);
    let cfg = config.train_config(config.pretrain_epochs, config.lr, config.seed);
    regressor::train(&mut params, &mut adam, stats, x, y, &cfg)?;
    Ok(params)
}

/// Broadcast: encode once, every gateway decodes its own copy.
fn broadcast_model(params: &MlpParams, gateways: usize) -> Result<(Vec<MlpParams>, u64)> {
    let bytes = wire::encode_model(params);
    let copies = (0..gateways)
        .map(|_| wire::decode_model(&bytes))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((copies, (bytes.len() * gateways) as u64))
}

/// Server, gateways and round state of one experiment.
#[derive(Debug, Clone)]
pub struct Federation {
    pub server: EdgeServer,
    pub gateways: Vec<GatewayNode>,
    config: FederationConfig,
    test_x: Matrix,
    test_y: Vec<f64>,
    round: usize,
    /// Bytes already sent but not yet attributed to a round report.
    pending_downlink: u64,
    fs_converged: Option<usize>,
}

impl Federation {
    /// Step 0: supervised training of the global model on the labeled set,
    /// then broadcast to every gateway. The broadcast is charged to the next
    /// round report.
    pub fn step0_pretrain(data: &ExperimentData, config: &FederationConfig) -> Result<Self> {
        config.validate()?;
        if data.labeled_y.is_empty() {
            return Err(FederationError::Config("labeled set is empty".into()));
        }
        let m = data.n_features();
        let stats = Normalization::fit(&data.labeled_x)?;
        let global = supervised_fit(&data.labeled_x, &data.labeled_y, &stats, config)?;

        let (copies, bytes) = broadcast_model(&global, data.gateway_rows.len())?;
        let gateways = data
            .gateway_rows
            .iter()
            .zip(copies)
            .enumerate()
            .map(|(id, (rows, copy))| GatewayNode {
                id,
                rows: rows.clone(),
                global: copy,
                mask: vec![true; m],
                local: None,
                soft_labels: Vec::new(),
                distribution: None,
            })
            .collect();
        Ok(Self {
            server: EdgeServer {
                global,
                stats,
                labeled_x: data.labeled_x.clone(),
                labeled_y: data.labeled_y.clone(),
                merge_momentum: config.merge_momentum,
                distribution: None,
                mask: vec![true; m],
            },
            gateways,
            config: config.clone(),
            test_x: data.test_x.clone(),
            test_y: data.test_y.clone(),
            round: 0,
            pending_downlink: bytes,
            fs_converged: None,
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn rounds_done(&self) -> usize {
        self.round
    }

    /// First round whose aggregated mask matched the previous round's.
    pub fn fs_converged_round(&self) -> Option<usize> {
        self.fs_converged
    }

    /// RMSE of the current global model on the held-out rows.
    pub fn test_rmse(&self) -> Result<f64> {
        let cols = self.server.active_columns();
        Ok(regressor::rmse(
            &self.server.global,
            &self.test_x.select_columns(&cols),
            &self.test_y,
            &self.server.active_stats(),
        )?)
    }

    /// Row-count weights `q_l = n_l / sum n`.
    fn weights(&self) -> Vec<f64> {
        let total: usize = self.gateways.iter().map(GatewayNode::n_rows).sum();
        self.gateways
            .iter()
            .map(|g| g.n_rows() as f64 / total as f64)
            .collect()
    }

    /// Steps 1-5 of one federated round.
    pub fn run_round(&mut self, mode: Mode) -> Result<RoundReport> {
        if mode == Mode::Cr {
            return Err(FederationError::Contract(
                "the centralized mode runs through run_centralized",
            ));
        }
        self.round += 1;
        let round = self.round;
        let seed = self.config.seed;
        let mut up = Traffic::default();
        let mut down = Traffic {
            federation: std::mem::take(&mut self.pending_downlink),
            feature_selection: 0,
        };

        // Step 1: soft labels from the received global model.
        let stats = &self.server.stats;
        self.gateways.par_iter_mut().try_for_each(|g| -> Result<()> {
            let cols = mask_indices(&g.mask);
            g.soft_labels = regressor::soft_label(&g.global, &g.rows.select_columns(&cols), &stats.select(&cols))?;
            Ok(())
        })?;

        // Steps 2-3: local selection, aggregation, mask broadcast.
        let mut reset = false;
        let run_fs = mode == Mode::Rfr && (self.config.fs_every_round || round == 1);
        if run_fs {
            let bins = self.config.bins;
            let ce = self.config.ce;
            let uplinks: Vec<Vec<u8>> = self
                .gateways
                .par_iter_mut()
                .map(|g| -> Result<Vec<u8>> {
                    let problem = SelectionProblem::new(&g.rows, &g.soft_labels, bins, BinStrategy::EqualFrequency)?;
                    let params = CeParams {
                        seed: derive_seed(seed, &[round as u64, g.id as u64, 0xfe]),
                        ..ce
                    };
                    let res = ce_select_problem(&problem, &params)?;
                    let bytes = wire::encode_distribution(&res.distribution);
                    g.distribution = Some(res.distribution);
                    Ok(bytes)
                })
                .collect::<Result<_>>()?;
            let mut locals = Vec::with_capacity(uplinks.len());
            for (bytes, g) in uplinks.iter().zip(&self.gateways) {
                up.feature_selection += bytes.len() as u64;
                locals.push((wire::decode_distribution(bytes)?, g.n_rows()));
            }
            let p_global = aggregate_distributions(&locals)?;
            let mask = mask_from_distribution(&p_global, 0.5);
            let bytes = wire::encode_selection(&p_global, &mask);
            down.feature_selection += (bytes.len() * self.gateways.len()) as u64;
            for g in &mut self.gateways {
                let (_, received) = wire::decode_selection(&bytes)?;
                g.mask = received;
            }
            if round > 1 && mask == self.server.mask && self.fs_converged.is_none() {
                self.fs_converged = Some(round);
            }
            if mask != self.server.mask {
                reset = true;
                self.server.mask = mask;
            }
            self.server.distribution = Some(p_global);
        }
        if reset {
            // The old global model reads features that are gone: redo the
            // supervised Step 0 on the restricted labeled set.
            let cols = self.server.active_columns();
            self.server.global = supervised_fit(
                &self.server.labeled_x.select_columns(&cols),
                &self.server.labeled_y,
                &self.server.active_stats(),
                &self.config,
            )?;
        }

        // Step 4: local training on the (restricted) features.
        let cols = self.server.active_columns();
        let active_stats = self.server.active_stats();
        let (hidden, k) = (self.config.hidden, cols.len());
        let local_cfg = self.config.train_config(self.config.local_epochs, self.config.local_lr, 0);
        let uplinks: Vec<Vec<u8>> = self
            .gateways
            .par_iter_mut()
            .map(|g| -> Result<Vec<u8>> {
                if reset || g.local.as_ref().is_none_or(|l| l.params.m_in() != k) {
                    let params = MlpParams::init(k, hidden, seed)?;
                    g.local = Some(LocalModel {
                        adam: AdamState::new(&params),
                        params,
                    });
                }
                let local = g.local.as_mut().expect("initialized above");
                let cfg = TrainConfig {
                    seed: derive_seed(seed, &[round as u64, g.id as u64, 0x7a]),
                    ..local_cfg
                };
                let x = g.rows.select_columns(&cols);
                regressor::train(&mut local.params, &mut local.adam, &active_stats, &x, &g.soft_labels, &cfg)?;
                Ok(wire::encode_model(&local.params))
            })
            .collect::<Result<_>>()?;
        let mut received = Vec::with_capacity(uplinks.len());
        for bytes in &uplinks {
            up.federation += bytes.len() as u64;
            received.push(wire::decode_model(bytes)?);
        }

        // Step 5: weighted average, merge, broadcast.
        let average = average_models(&received, Some(&self.weights()))?;
        let next = merge(&self.server.global, &average, self.server.merge_momentum)?;
        let (weight_delta, converged) = if reset {
            (None, false)
        } else {
            let (delta, conv) = check_convergence(&self.server.global, &next, self.config.threshold)?;
            (Some(delta), conv)
        };
        self.server.global = next;
        let (copies, bytes) = broadcast_model(&self.server.global, self.gateways.len())?;
        down.federation += bytes;
        for (g, copy) in self.gateways.iter_mut().zip(copies) {
            g.global = copy;
            g.mask = self.server.mask.clone();
        }

        Ok(RoundReport {
            round,
            uplink_bytes: up,
            downlink_bytes: down,
            weight_delta,
            rmse_global: self.test_rmse()?,
            converged,
        })
    }

    /// Centralized baseline: every gateway uplinks its rows once and the
    /// server trains a fresh full-width model on the union, labeled with the
    /// ground truth, then broadcasts it.
    pub fn run_centralized(&mut self, truth: &GroundTruth) -> Result<RoundReport> {
        self.round += 1;
        let mut up = Traffic::default();
        let mut down = Traffic {
            federation: std::mem::take(&mut self.pending_downlink),
            feature_selection: 0,
        };
        let mut x = self.server.labeled_x.clone();
        let mut y = self.server.labeled_y.clone();
        for g in &self.gateways {
            let bytes = wire::encode_rows(&g.rows);
            up.federation += bytes.len() as u64;
            x = x.vstack(&wire::decode_rows(&bytes)?);
            y.extend_from_slice(truth.labels(g.id));
        }
        let stats = Normalization::fit(&x)?;
        let params = supervised_fit(&x, &y, &stats, &self.config)?;
        self.server.mask = vec![true; x.n_cols()];
        self.server.stats = stats;
        self.server.global = params;
        let (copies, bytes) = broadcast_model(&self.server.global, self.gateways.len())?;
        down.federation += bytes;
        for (g, copy) in self.gateways.iter_mut().zip(copies) {
            g.global = copy;
            g.mask = self.server.mask.clone();
        }
        Ok(RoundReport {
            round: self.round,
            uplink_bytes: up,
            downlink_bytes: down,
            weight_delta: None,
            rmse_global: self.test_rmse()?,
            converged: true,
        })
    }
}

/// Step 0 followed by rounds until convergence or `max_rounds` (one round
/// for CR). Non-convergence is reported, not an error.
pub fn run_experiment(data: &ExperimentData, config: &FederationConfig, mode: Mode) -> Result<ExperimentReport> {
    let mut fed = Federation::step0_pretrain(data, config)?;
    let mut rounds = Vec::new();
    let mut conv_fed = None;
    if mode == Mode::Cr {
        rounds.push(fed.run_centralized(&data.truth)?);
        conv_fed = Some(1);
    } else {
        for _ in 0..config.max_rounds {
            let r = fed.run_round(mode)?;
            let done = r.converged;
            rounds.push(r);
            if done {
                conv_fed = Some(fed.rounds_done());
                break;
            }
        }
    }
    let conv = ConvRounds {
        federation: conv_fed,
        feature_selection: if mode == Mode::Rfr { fed.fs_converged_round() } else { None },
    };
    Ok(ExperimentReport::new(mode, rounds, conv, fed.server.active_columns()))
}
