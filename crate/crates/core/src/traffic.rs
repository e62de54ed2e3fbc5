//! Packet traces, 1-second window features and the server/gateway split.
//!
//! A trace is a time-ordered list of [`PacketRecord`]s, read from a CSV file
//! (`timestamp,length,is_quic,service`) or produced by the seeded generator in
//! [`generate_synthetic_trace`]. [`extract_features`] turns it into one
//! [`FeatureRow`] per non-empty window: the packet count, four inter-arrival
//! percentiles, four length percentiles and two fractional labels.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

/// Column names of the nine window features, in feature-matrix order.
pub const FEATURE_NAMES: [&str; 9] = [
    "n_packets", "iat_p25", "iat_p50", "iat_p75", "iat_p90", "len_p25", "len_p50", "len_p75",
    "len_p90",
];

pub const NUM_FEATURES: usize = FEATURE_NAMES.len();

const TRACE_HEADER: [&str; 4] = ["timestamp", "length", "is_quic", "service"];
const FEATURE_HEADER: [&str; 11] = [
    "n_packets",
    "iat_p25",
    "iat_p50",
    "iat_p75",
    "iat_p90",
    "len_p25",
    "len_p50",
    "len_p75",
    "len_p90",
    "label_quic",
    "label_service",
];

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("invalid header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("records are not sorted by timestamp (index {index})")]
    Unsorted { index: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot split {rows} rows: {reason}")]
    Split { rows: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, TrafficError>;

/// Service class that generated a packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Service {
    Drive,
    Docs,
    Music,
    Search,
    YouTube,
    Other,
}

impl Service {
    pub const ALL: [Service; 6] = [
        Service::Drive,
        Service::Docs,
        Service::Music,
        Service::Search,
        Service::YouTube,
        Service::Other,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Service::Drive => "drive",
            Service::Docs => "docs",
            Service::Music => "music",
            Service::Search => "search",
            Service::YouTube => "youtube",
            Service::Other => "other",
        }
    }
}

impl fmt::Display for Service {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Service {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Service::ALL
            .into_iter()
            .find(|svc| svc.token() == s)
            .ok_or_else(|| format!("unknown service `{s}`"))
    }
}

/// One captured packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketRecord {
    /// Seconds since the epoch.
    pub timestamp: f64,
    /// Bytes, always at least 1.
    pub length: u32,
    pub is_quic: bool,
    pub service: Service,
}

impl PacketRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if !self.timestamp.is_finite() || self.timestamp < 0.0 {
            return Err(format!("invalid timestamp {}", self.timestamp));
        }
        if self.length == 0 {
            return Err("packet length must be at least 1".into());
        }
        Ok(())
    }
}

/// Reads a trace CSV. Records come back sorted by timestamp (stable).
pub fn parse_trace(path: impl AsRef<Path>) -> Result<Vec<PacketRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| TrafficError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_trace(file)
}

pub fn read_trace<R: Read>(reader: R) -> Result<Vec<PacketRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = Vec::new();
    let mut rows = rdr.records();
    match rows.next() {
        None => return Ok(records),
        Some(header) => check_header(&header?, &TRACE_HEADER)?,
    }
    for row in rows {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let rec = parse_trace_row(&row).map_err(|message| TrafficError::Parse { line, message })?;
        records.push(rec);
    }
    records.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(records)
}

fn check_header(row: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if row.iter().eq(expected.iter().copied()) {
        Ok(())
    } else {
        Err(TrafficError::Header {
            expected: expected.join(","),
            found: row.iter().collect::<Vec<_>>().join(","),
        })
    }
}

fn parse_trace_row(row: &csv::StringRecord) -> std::result::Result<PacketRecord, String> {
    if row.len() != 4 {
        return Err(format!("expected 4 fields, found {}", row.len()));
    }
    let timestamp: f64 = row[0]
        .parse()
        .map_err(|_| format!("bad timestamp `{}`", &row[0]))?;
    let length: u32 = row[1]
        .parse()
        .map_err(|_| format!("bad length `{}`", &row[1]))?;
    let is_quic = match &row[2] {
        "0" => false,
        "1" => true,
        other => return Err(format!("bad is_quic `{other}` (expected 0 or 1)")),
    };
    let service = row[3].parse::<Service>()?;
    let rec = PacketRecord {
        timestamp,
        length,
        is_quic,
        service,
    };
    rec.validate()?;
    Ok(rec)
}

pub fn write_trace<W: Write>(writer: W, records: &[PacketRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_HEADER)?;
    for r in records {
        w.write_record([
            r.timestamp.to_string(),
            r.length.to_string(),
            u8::from(r.is_quic).to_string(),
            r.service.token().to_string(),
        ])?;
    }
    w.flush().map_err(|source| TrafficError::Io {
        path: "<trace writer>".into(),
        source,
    })?;
    Ok(())
}

/// One traffic source of the synthetic generator.
///
/// Packets arrive as a Poisson process whose rate is `rate` times an activity
/// level. The level is redrawn uniformly from `[0, 2]` after exponentially
/// distributed dwell times, so the traffic mix shifts from window to window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowClass {
    pub service: Service,
    pub is_quic: bool,
    /// Mean packets per second.
    pub rate: f64,
    pub mean_length: f64,
    pub length_std: f64,
    /// Mean seconds between activity changes.
    pub mean_dwell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: Vec<FlowClass>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let class = |service, is_quic, rate, mean_length, length_std| FlowClass {
            service,
            is_quic,
            rate,
            mean_length,
            length_std,
            mean_dwell: 4.0,
        };
        Self {
            classes: vec![
                class(Service::YouTube, true, 40.0, 1250.0, 150.0),
                class(Service::Drive, true, 20.0, 1100.0, 250.0),
                class(Service::Music, true, 15.0, 900.0, 300.0),
                class(Service::Search, false, 15.0, 500.0, 250.0),
                class(Service::Docs, false, 15.0, 400.0, 200.0),
                class(Service::Other, false, 25.0, 150.0, 100.0),
            ],
        }
    }
}

const MIN_LENGTH: f64 = 40.0;
const MAX_LENGTH: f64 = 1500.0;

/// Generates a seeded mixed trace over `[0, duration)`.
pub fn generate_synthetic_trace(
    config: &SynthConfig,
    duration: f64,
    seed: u64,
) -> Result<Vec<PacketRecord>> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(TrafficError::Config(format!(
            "duration must be positive, got {duration}"
        )));
    }
    if config.classes.is_empty() {
        return Err(TrafficError::Config("no flow classes".into()));
    }
    for c in &config.classes {
        if !(c.rate > 0.0 && c.rate.is_finite()) {
            return Err(TrafficError::Config(format!(
                "rate of {} flow must be positive, got {}",
                c.service, c.rate
            )));
        }
        let valid = c.mean_dwell > 0.0 && c.length_std >= 0.0 && c.mean_length >= 1.0;
        if !valid {
            return Err(TrafficError::Config(format!(
                "invalid shape parameters for {} flow",
                c.service
            )));
        }
    }

    let mut records = Vec::new();
    for (k, class) in config.classes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64 + 1);
        emit_class(class, duration, &mut rng, &mut records);
    }
    records.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(records)
}

fn emit_class(class: &FlowClass, duration: f64, rng: &mut ChaCha8Rng, out: &mut Vec<PacketRecord>) {
    let dwell = Exp::new(1.0 / class.mean_dwell).expect("validated dwell");
    let size = Normal::new(class.mean_length, class.length_std).expect("validated length");
    let mut t = 0.0;
    while t < duration {
        let seg_end = (t + dwell.sample(rng)).min(duration);
        let level: f64 = rng.random_range(0.0..2.0);
        let rate = class.rate * level;
        if rate > 1e-9 {
            let gap = Exp::new(rate).expect("positive rate");
            let mut s = t + gap.sample(rng);
            while s < seg_end {
                let length = size.sample(rng).clamp(MIN_LENGTH, MAX_LENGTH).round() as u32;
                out.push(PacketRecord {
                    timestamp: s,
                    length,
                    is_quic: class.is_quic,
                    service: class.service,
                });
                s += gap.sample(rng);
            }
        }
        t = seg_end;
    }
}

/// Features and labels of one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub n_packets: u32,
    pub iat_p25: f64,
    pub iat_p50: f64,
    pub iat_p75: f64,
    pub iat_p90: f64,
    pub len_p25: f64,
    pub len_p50: f64,
    pub len_p75: f64,
    pub len_p90: f64,
    pub label_quic: f64,
    pub label_service: f64,
}

impl FeatureRow {
    /// The nine features in [`FEATURE_NAMES`] order.
    pub fn features(&self) -> [f64; NUM_FEATURES] {
        [
            f64::from(self.n_packets),
            self.iat_p25,
            self.iat_p50,
            self.iat_p75,
            self.iat_p90,
            self.len_p25,
            self.len_p50,
            self.len_p75,
            self.len_p90,
        ]
    }
}

/// Percentile levels used for both inter-arrival times and lengths.
pub const PERCENTILES: [f64; 4] = [0.25, 0.50, 0.75, 0.90];

/// Linear-interpolation quantile on sorted data: rank `r = (n - 1) q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let r = (sorted.len() - 1) as f64 * q;
    let lo = r.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (r - lo as f64) * (sorted[hi] - sorted[lo])
}

fn percentiles(values: &mut [f64]) -> [f64; 4] {
    if values.is_empty() {
        return [0.0; 4];
    }
    values.sort_by(f64::total_cmp);
    PERCENTILES.map(|q| quantile_sorted(values, q))
}

/// Windows a sorted trace and computes one [`FeatureRow`] per non-empty
/// window `[t0 + k w, t0 + (k + 1) w)`, where `t0` is the first timestamp.
/// `label_service` is the fraction of packets belonging to `target`.
pub fn extract_features(
    records: &[PacketRecord],
    window: f64,
    target: Service,
) -> Result<Vec<FeatureRow>> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(TrafficError::Config(format!(
            "window must be positive, got {window}"
        )));
    }
    if let Some(i) = records
        .windows(2)
        .position(|w| w[1].timestamp < w[0].timestamp)
    {
        return Err(TrafficError::Unsorted { index: i + 1 });
    }
    let Some(first) = records.first() else {
        return Ok(Vec::new());
    };
    let t0 = first.timestamp;

    let mut rows = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let k = ((records[start].timestamp - t0) / window).floor();
        let mut end = start + 1;
        while end < records.len() && ((records[end].timestamp - t0) / window).floor() == k {
            end += 1;
        }
        rows.push(window_row(&records[start..end], target));
        start = end;
    }
    Ok(rows)
}

fn window_row(packets: &[PacketRecord], target: Service) -> FeatureRow {
    let n = packets.len();
    let mut iats: Vec<f64> = packets
        .windows(2)
        .map(|w| w[1].timestamp - w[0].timestamp)
        .collect();
    let mut lengths: Vec<f64> = packets.iter().map(|p| f64::from(p.length)).collect();
    let quic = packets.iter().filter(|p| p.is_quic).count();
    let service = packets.iter().filter(|p| p.service == target).count();
    let [iat_p25, iat_p50, iat_p75, iat_p90] = percentiles(&mut iats);
    let [len_p25, len_p50, len_p75, len_p90] = percentiles(&mut lengths);
    FeatureRow {
        n_packets: n as u32,
        iat_p25,
        iat_p50,
        iat_p75,
        iat_p90,
        len_p25,
        len_p50,
        len_p75,
        len_p90,
        label_quic: quic as f64 / n as f64,
        label_service: service as f64 / n as f64,
    }
}

pub fn write_features<W: Write>(writer: W, rows: &[FeatureRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FEATURE_HEADER)?;
    for r in rows {
        let mut fields: Vec<String> = r.features().iter().map(|v| v.to_string()).collect();
        fields[0] = r.n_packets.to_string();
        fields.push(r.label_quic.to_string());
        fields.push(r.label_service.to_string());
        w.write_record(&fields)?;
    }
    w.flush().map_err(|source| TrafficError::Io {
        path: "<feature writer>".into(),
        source,
    })?;
    Ok(())
}

pub fn read_features<R: Read>(reader: R) -> Result<Vec<FeatureRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    let mut iter = rdr.records();
    match iter.next() {
        None => return Ok(rows),
        Some(header) => check_header(&header?, &FEATURE_HEADER)?,
    }
    for rec in iter {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse_err = |message: String| TrafficError::Parse { line, message };
        if rec.len() != FEATURE_HEADER.len() {
            return Err(parse_err(format!(
                "expected {} fields, found {}",
                FEATURE_HEADER.len(),
                rec.len()
            )));
        }
        let n_packets: u32 = rec[0]
            .parse()
            .map_err(|_| parse_err(format!("bad n_packets `{}`", &rec[0])))?;
        let mut v = [0.0; 10];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = rec[k + 1]
                .parse()
                .map_err(|_| parse_err(format!("bad {} `{}`", FEATURE_HEADER[k + 1], &rec[k + 1])))?;
        }
        if n_packets == 0 {
            return Err(parse_err("n_packets must be at least 1".into()));
        }
        rows.push(FeatureRow {
            n_packets,
            iat_p25: v[0],
            iat_p50: v[1],
            iat_p75: v[2],
            iat_p90: v[3],
            len_p25: v[4],
            len_p50: v[5],
            len_p75: v[6],
            len_p90: v[7],
            label_quic: v[8],
            label_service: v[9],
        });
    }
    Ok(rows)
}

pub fn read_features_file(path: impl AsRef<Path>) -> Result<Vec<FeatureRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| TrafficError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_features(file)
}

/// Feature matrix `X` (n x 9) of a set of rows.
pub fn feature_matrix(rows: &[FeatureRow]) -> Matrix {
    let data = rows.iter().flat_map(|r| r.features()).collect();
    Matrix::from_vec(rows.len(), NUM_FEATURES, data)
}

pub fn quic_labels(rows: &[FeatureRow]) -> Vec<f64> {
    rows.iter().map(|r| r.label_quic).collect()
}

/// Labeled server share plus unlabeled gateway shares.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub server_set: Vec<FeatureRow>,
    /// Gateway rows still carry labels; they are only used as ground truth
    /// for evaluation and are stripped before reaching a gateway.
    pub gateway_sets: Vec<Vec<FeatureRow>>,
    pub seed: u64,
}

/// Shuffles `rows` with `seed`, gives `round(server_frac * n)` rows to the
/// server and deals the rest over `num_gateways` contiguous near-equal shares.
pub fn split_dataset(
    rows: &[FeatureRow],
    server_frac: f64,
    num_gateways: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    let n = rows.len();
    let fail = |reason: String| TrafficError::Split { rows: n, reason };
    if !(server_frac > 0.0 && server_frac < 1.0) {
        return Err(fail(format!("server fraction {server_frac} not in (0, 1)")));
    }
    if num_gateways == 0 {
        return Err(fail("need at least one gateway".into()));
    }
    if n < num_gateways + 1 {
        return Err(fail(format!("need at least {} rows", num_gateways + 1)));
    }
    let n_server = (server_frac * n as f64).round() as usize;
    if n_server == 0 || n - n_server < num_gateways {
        return Err(fail(format!(
            "server share {n_server} leaves gateways without rows"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let server_set = order[..n_server].iter().map(|&i| rows[i]).collect();
    let rest = &order[n_server..];
    let base = rest.len() / num_gateways;
    let extra = rest.len() % num_gateways;
    let mut gateway_sets = Vec::with_capacity(num_gateways);
    let mut offset = 0;
    for g in 0..num_gateways {
        let size = base + usize::from(g < extra);
        gateway_sets.push(rest[offset..offset + size].iter().map(|&i| rows[i]).collect());
        offset += size;
    }
    Ok(DatasetSplit {
        server_set,
        gateway_sets,
        seed,
    })
}
