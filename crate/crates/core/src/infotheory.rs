//! Plug-in (histogram) entropy and mutual information estimators, in bits.
//!
//! Continuous columns are first mapped to bin indices with [`discretize`];
//! every estimator then works on empirical cell counts. Joint distributions
//! are stored sparsely: only occupied cells are materialised, so the cost is
//! bounded by the row count rather than the product of bin counts.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

/// Default bound on occupied joint cells.
pub const DEFAULT_CELL_CAP: usize = 1_000_000;

// joint keys below this use a flat lookup table instead of hashing
const DENSE_KEY_LIMIT: usize = 1 << 20;

#[derive(Debug, Error, PartialEq)]
pub enum InfoError {
    #[error("cannot discretize an empty column")]
    EmptyColumn,
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("column contains a non-finite value")]
    NonFinite,
    #[error("column lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("joint distribution occupies more than {cap} cells; reduce the conditioning set or the bin count")]
    CellCapExceeded { cap: usize },
}

pub type Result<T> = std::result::Result<T, InfoError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BinStrategy {
    #[default]
    EqualFrequency,
    EqualWidth,
}

/// A column mapped to bin indices in `0..n_bins`.
///
/// `edges` has `n_bins + 1` strictly increasing entries, except for a
/// constant column which has the single bin `[v, v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedColumn {
    bins: Vec<u32>,
    n_bins: usize,
    edges: Vec<f64>,
}

impl DiscretizedColumn {
    /// Wraps precomputed bin indices; edges are the integer bin boundaries.
    pub fn from_bins(bins: Vec<u32>, n_bins: usize) -> Self {
        assert!(n_bins >= 1, "at least one bin");
        assert!(
            bins.iter().all(|&b| (b as usize) < n_bins),
            "bin index out of range"
        );
        let edges = (0..=n_bins).map(|e| e as f64).collect();
        Self {
            bins,
            n_bins,
            edges,
        }
    }

    pub fn bins(&self) -> &[u32] {
        &self.bins
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Same column with its rows reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            bins: order.iter().map(|&i| self.bins[i]).collect(),
            n_bins: self.n_bins,
            edges: self.edges.clone(),
        }
    }
}

/// Maps each value to a bin.
///
/// Equal-frequency cuts are the linear-interpolation sample quantiles at
/// `j / n_bins`; repeated cuts are collapsed, which lowers the effective bin
/// count, and a discrete column keeps one bin per level when levels are
/// common enough. A value falls in bin `b` when exactly `b` interior edges
/// are `<=` it.
pub fn discretize(values: &[f64], n_bins: usize, strategy: BinStrategy) -> Result<DiscretizedColumn> {
    if values.is_empty() {
        return Err(InfoError::EmptyColumn);
    }
    if n_bins < 2 {
        return Err(InfoError::TooFewBins(n_bins));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(InfoError::NonFinite);
    }

    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if lo == hi {
        return Ok(DiscretizedColumn {
            bins: vec![0; values.len()],
            n_bins: 1,
            edges: vec![lo, hi],
        });
    }

    let edges: Vec<f64> = match strategy {
        BinStrategy::EqualFrequency => {
            // interior cuts: distinct quantiles above the minimum
            let mut cuts: Vec<f64> = (1..n_bins)
                .map(|j| crate::traffic::quantile_sorted(&sorted, j as f64 / n_bins as f64))
                .filter(|&q| q > lo)
                .collect();
            cuts.dedup();
            let mut edges = Vec::with_capacity(cuts.len() + 2);
            edges.push(lo);
            edges.extend_from_slice(&cuts);
            // a mass point at the maximum keeps its own closed bin
            edges.push(if cuts.last() == Some(&hi) { hi.next_up() } else { hi });
            edges
        }
        BinStrategy::EqualWidth => {
            let width = (hi - lo) / n_bins as f64;
            (0..=n_bins)
                .map(|j| if j == n_bins { hi } else { lo + width * j as f64 })
                .collect()
        }
    };
    let n_eff = edges.len() - 1;
    let interior = &edges[1..n_eff];
    let bins = values
        .iter()
        .map(|&v| interior.partition_point(|&e| e <= v) as u32)
        .collect();
    Ok(DiscretizedColumn {
        bins,
        n_bins: n_eff,
        edges,
    })
}

/// Discretizes every column of `x` with the same settings.
pub fn discretize_columns(x: &Matrix, n_bins: usize, strategy: BinStrategy) -> Result<Vec<DiscretizedColumn>> {
    (0..x.n_cols())
        .map(|j| discretize(&x.column(j), n_bins, strategy))
        .collect()
}

fn entropy_of_counts(counts: impl Iterator<Item = usize>, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n_f = n as f64;
    let sum: f64 = counts
        .filter(|&c| c > 0)
        .map(|c| {
            let c = c as f64;
            c * c.log2()
        })
        .sum();
    (n_f.log2() - sum / n_f).max(0.0)
}

/// Entropy of one column over its occupied bins.
pub fn entropy(col: &DiscretizedColumn) -> f64 {
    let mut counts = vec![0usize; col.n_bins];
    for &b in &col.bins {
        counts[b as usize] += 1;
    }
    entropy_of_counts(counts.into_iter(), col.len())
}

/// Estimator settings shared by the joint quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimator {
    pub cell_cap: usize,
}

impl Default for Estimator {
    fn default() -> Self {
        Self {
            cell_cap: DEFAULT_CELL_CAP,
        }
    }
}

impl Estimator {
    pub fn new(cell_cap: usize) -> Self {
        Self { cell_cap }
    }

    /// Dense cell code per row for the tuple of `cols`, plus the number of
    /// occupied cells. No columns means one cell holding every row.
    fn joint_codes(&self, cols: &[&DiscretizedColumn]) -> Result<(Vec<u32>, usize)> {
        let n = cols.first().map_or(0, |c| c.len());
        for c in cols {
            if c.len() != n {
                return Err(InfoError::LengthMismatch(n, c.len()));
            }
        }
        let mut codes = vec![0u32; n];
        let mut n_codes = 1usize;
        let mut table: Vec<u32> = Vec::new();
        for col in cols {
            let stride = col.n_bins;
            let key_space = n_codes * stride;
            let mut next = 0u32;
            if key_space <= DENSE_KEY_LIMIT.max(4 * n) {
                table.clear();
                table.resize(key_space, u32::MAX);
                for (code, &b) in codes.iter_mut().zip(&col.bins) {
                    let slot = &mut table[*code as usize * stride + b as usize];
                    if *slot == u32::MAX {
                        *slot = next;
                        next += 1;
                    }
                    *code = *slot;
                }
            } else {
                let mut remap: HashMap<u64, u32> = HashMap::with_capacity(n_codes.min(n));
                for (code, &b) in codes.iter_mut().zip(&col.bins) {
                    let key = u64::from(*code) * stride as u64 + u64::from(b);
                    *code = *remap.entry(key).or_insert_with(|| {
                        next += 1;
                        next - 1
                    });
                }
            }
            n_codes = next as usize;
            if n_codes > self.cell_cap {
                return Err(InfoError::CellCapExceeded { cap: self.cell_cap });
            }
        }
        Ok((codes, n_codes))
    }

    /// Entropy of the joint empirical distribution of `cols`.
    pub fn joint_entropy(&self, cols: &[&DiscretizedColumn]) -> Result<f64> {
        if cols.is_empty() {
            return Ok(0.0);
        }
        let (codes, n_codes) = self.joint_codes(cols)?;
        let mut counts = vec![0usize; n_codes];
        for c in &codes {
            counts[*c as usize] += 1;
        }
        Ok(entropy_of_counts(counts.into_iter(), codes.len()))
    }

    /// `I(U; y) = H(y) + H(U) - H(U, y)`, clamped at zero.
    pub fn mutual_information(&self, u: &[&DiscretizedColumn], y: &DiscretizedColumn) -> Result<f64> {
        if u.is_empty() {
            return Ok(0.0);
        }
        let mut uy: Vec<&DiscretizedColumn> = u.to_vec();
        uy.push(y);
        let mi = entropy(y) + self.joint_entropy(u)? - self.joint_entropy(&uy)?;
        Ok(mi.max(0.0))
    }

    /// `I(x; y | U) = H(x,U) + H(y,U) - H(x,y,U) - H(U)`, clamped at zero.
    pub fn conditional_mi(
        &self,
        x: &DiscretizedColumn,
        y: &DiscretizedColumn,
        u: &[&DiscretizedColumn],
    ) -> Result<f64> {
        if x.len() != y.len() {
            return Err(InfoError::LengthMismatch(x.len(), y.len()));
        }
        fn with<'a>(extra: &[&'a DiscretizedColumn], u: &[&'a DiscretizedColumn]) -> Vec<&'a DiscretizedColumn> {
            let mut v = extra.to_vec();
            v.extend_from_slice(u);
            v
        }
        let cmi = self.joint_entropy(&with(&[x], u))? + self.joint_entropy(&with(&[y], u))?
            - self.joint_entropy(&with(&[x, y], u))?
            - self.joint_entropy(u)?;
        Ok(cmi.max(0.0))
    }
}

pub fn joint_entropy(cols: &[&DiscretizedColumn]) -> Result<f64> {
    Estimator::default().joint_entropy(cols)
}

pub fn mutual_information(u: &[&DiscretizedColumn], y: &DiscretizedColumn) -> Result<f64> {
    Estimator::default().mutual_information(u, y)
}

pub fn conditional_mi(x: &DiscretizedColumn, y: &DiscretizedColumn, u: &[&DiscretizedColumn]) -> Result<f64> {
    Estimator::default().conditional_mi(x, y, u)
}
