//! Byte encodings of every message exchanged between server and gateways.
//!
//! Each message starts with a 16-byte header: an 8-byte magic tag and two
//! little-endian u32 words. Payload values are little-endian f64. Traffic is
//! accounted as the exact length of these encodings.

use crate::featsel::SelectionDistribution;
use crate::matrix::Matrix;
use crate::regressor::MlpParams;

pub const HEADER_BYTES: usize = 16;
pub const DISTRIBUTION_MAGIC: &[u8; 8] = b"QFEDPROB";
pub const SELECTION_MAGIC: &[u8; 8] = b"QFEDSEL1";
pub const ROWS_MAGIC: &[u8; 8] = b"QFEDROWS";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WireError {
    #[error("{kind} message: {reason}")]
    Malformed { kind: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, WireError>;

fn header(magic: &[u8; 8], a: usize, b: usize, payload: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + payload);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(a as u32).to_le_bytes());
    out.extend_from_slice(&(b as u32).to_le_bytes());
    out
}

/// Checks magic and total length, returning the two header words.
fn parse_header(
    bytes: &[u8],
    magic: &[u8; 8],
    kind: &'static str,
    expected_len: impl Fn(usize, usize) -> usize,
) -> Result<(usize, usize)> {
    let bad = |reason: String| WireError::Malformed { kind, reason };
    if bytes.len() < HEADER_BYTES || &bytes[..8] != magic {
        return Err(bad("missing header".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (a, b) = (word(8), word(12));
    let want = expected_len(a, b);
    if bytes.len() != want {
        return Err(bad(format!("expected {want} bytes, found {}", bytes.len())));
    }
    Ok((a, b))
}

fn read_f64s(bytes: &[u8]) -> impl Iterator<Item = f64> + '_ {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
}

/// Model parameters (the model-file format).
pub fn encode_model(params: &MlpParams) -> Vec<u8> {
    params.to_bytes()
}

pub fn decode_model(bytes: &[u8]) -> Result<MlpParams> {
    MlpParams::from_bytes(bytes).map_err(|e| WireError::Malformed {
        kind: "model",
        reason: e.to_string(),
    })
}

/// Local selection distribution `p^l`: header (m, 0) then m values.
pub fn encode_distribution(p: &SelectionDistribution) -> Vec<u8> {
    let m = p.len();
    let mut out = header(DISTRIBUTION_MAGIC, m, 0, 8 * m);
    for v in p.probs() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn distribution_len(m: usize) -> usize {
    HEADER_BYTES + 8 * m
}

pub fn decode_distribution(bytes: &[u8]) -> Result<SelectionDistribution> {
    let (m, _) = parse_header(bytes, DISTRIBUTION_MAGIC, "distribution", |m, _| distribution_len(m))?;
    let p: Vec<f64> = read_f64s(&bytes[HEADER_BYTES..]).take(m).collect();
    SelectionDistribution::new(p).map_err(|e| WireError::Malformed {
        kind: "distribution",
        reason: e.to_string(),
    })
}

/// Global distribution `p^G` plus the derived mask as a little-endian
/// bitset of `ceil(m / 8)` bytes.
pub fn encode_selection(p: &SelectionDistribution, mask: &[bool]) -> Vec<u8> {
    let m = p.len();
    assert_eq!(mask.len(), m, "mask and distribution lengths differ");
    let mut out = header(SELECTION_MAGIC, m, 0, 8 * m + m.div_ceil(8));
    for v in p.probs() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut bits = vec![0u8; m.div_ceil(8)];
    for (i, _) in mask.iter().enumerate().filter(|(_, &b)| b) {
        bits[i / 8] |= 1 << (i % 8);
    }
    out.extend_from_slice(&bits);
    out
}

pub fn selection_len(m: usize) -> usize {
    HEADER_BYTES + 8 * m + m.div_ceil(8)
}

pub fn decode_selection(bytes: &[u8]) -> Result<(SelectionDistribution, Vec<bool>)> {
    let (m, _) = parse_header(bytes, SELECTION_MAGIC, "selection", |m, _| selection_len(m))?;
    let body = &bytes[HEADER_BYTES..];
    let p: Vec<f64> = read_f64s(&body[..8 * m]).collect();
    let bits = &body[8 * m..];
    let mask = (0..m).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
    let p = SelectionDistribution::new(p).map_err(|e| WireError::Malformed {
        kind: "selection",
        reason: e.to_string(),
    })?;
    Ok((p, mask))
}

/// Raw feature rows: header (rows, cols) then the values row-major.
pub fn encode_rows(x: &Matrix) -> Vec<u8> {
    let mut out = header(ROWS_MAGIC, x.n_rows(), x.n_cols(), 8 * x.as_slice().len());
    for v in x.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn rows_len(rows: usize, cols: usize) -> usize {
    HEADER_BYTES + 8 * rows * cols
}

pub fn decode_rows(bytes: &[u8]) -> Result<Matrix> {
    let (r, c) = parse_header(bytes, ROWS_MAGIC, "rows", rows_len)?;
    Ok(Matrix::from_vec(r, c, read_f64s(&bytes[HEADER_BYTES..]).collect()))
}
