//! Per-round and per-experiment reports with their JSON and CSV encodings.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::Mode;

pub const ROUND_CSV_HEADER: &str = "round,uplink_bytes,downlink_bytes,fs_bytes,weight_delta,rmse";
pub const BYTES_PER_MB: f64 = 1e6;

/// Bytes split by purpose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traffic {
    pub federation: u64,
    pub feature_selection: u64,
}

impl Traffic {
    pub fn total(&self) -> u64 {
        self.federation + self.feature_selection
    }

    pub fn add(&mut self, other: Traffic) {
        self.federation += other.federation;
        self.feature_selection += other.feature_selection;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub uplink_bytes: Traffic,
    pub downlink_bytes: Traffic,
    /// Mean relative change of the global model; `None` when the feature
    /// mask changed this round and the global model was rebuilt.
    pub weight_delta: Option<f64>,
    pub rmse_global: f64,
    pub converged: bool,
}

impl RoundReport {
    /// Both directions, per category.
    pub fn traffic(&self) -> Traffic {
        let mut t = self.uplink_bytes;
        t.add(self.downlink_bytes);
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficMb {
    pub federation: f64,
    pub feature_selection: f64,
}

impl TrafficMb {
    fn from_bytes(t: Traffic, divisor: f64) -> Self {
        Self {
            federation: t.federation as f64 / BYTES_PER_MB / divisor,
            feature_selection: t.feature_selection as f64 / BYTES_PER_MB / divisor,
        }
    }

    pub fn total(&self) -> f64 {
        self.federation + self.feature_selection
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvRounds {
    /// First round meeting the weight-delta criterion, if any.
    pub federation: Option<usize>,
    /// First round whose aggregated mask equals the previous round's.
    pub feature_selection: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    /// Average traffic per round.
    pub traffic_mb: TrafficMb,
    /// Traffic summed over all rounds.
    pub traffic_mb_cumulative: TrafficMb,
    pub conv_rounds: ConvRounds,
    /// Test RMSE of the final global model.
    pub rmse: f64,
    pub rounds_run: usize,
    /// Indices of the features the final global model reads.
    pub final_mask: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub rounds: Vec<RoundReport>,
    pub totals: Totals,
}

impl ExperimentReport {
    pub fn new(mode: Mode, rounds: Vec<RoundReport>, conv: ConvRounds, final_mask: Vec<usize>) -> Self {
        let mut sum = Traffic::default();
        for r in &rounds {
            sum.add(r.traffic());
        }
        let n = rounds.len().max(1) as f64;
        let rmse = rounds.last().map_or(f64::NAN, |r| r.rmse_global);
        Self {
            mode,
            totals: Totals {
                traffic_mb: TrafficMb::from_bytes(sum, n),
                traffic_mb_cumulative: TrafficMb::from_bytes(sum, 1.0),
                conv_rounds: conv,
                rmse,
                rounds_run: rounds.len(),
                final_mask,
            },
            rounds,
        }
    }

    pub fn total_bytes(&self) -> Traffic {
        let mut sum = Traffic::default();
        for r in &self.rounds {
            sum.add(r.traffic());
        }
        sum
    }

    pub fn write_json<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        serde_json::to_writer_pretty(&mut writer, self)?;
        writeln!(writer)
    }

    /// One line per round; uplink and downlink include both categories and
    /// `fs_bytes` is the feature-selection share of both directions. An
    /// undefined weight delta is an empty field.
    pub fn write_round_csv<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        writeln!(writer, "{ROUND_CSV_HEADER}")?;
        for r in &self.rounds {
            let delta = r.weight_delta.map_or(String::new(), |d| d.to_string());
            writeln!(
                writer,
                "{},{},{},{},{},{}",
                r.round,
                r.uplink_bytes.total(),
                r.downlink_bytes.total(),
                r.traffic().feature_selection,
                delta,
                r.rmse_global
            )?;
        }
        Ok(())
    }

    /// Human-readable one-line summary.
    pub fn totals_line(&self) -> String {
        let t = &self.totals;
        let fmt_round = |r: Option<usize>| r.map_or("-".to_string(), |v| v.to_string());
        format!(
            "mode={} rounds={} conv_fed={} conv_fs={} traffic_mb_per_round={:.6} (federation {:.6}, feature_selection {:.6}) traffic_mb_cumulative={:.6} rmse={:.6}",
            self.mode,
            t.rounds_run,
            fmt_round(t.conv_rounds.federation),
            fmt_round(t.conv_rounds.feature_selection),
            t.traffic_mb.total(),
            t.traffic_mb.federation,
            t.traffic_mb.feature_selection,
            t.traffic_mb_cumulative.total(),
            t.rmse
        )
    }
}
