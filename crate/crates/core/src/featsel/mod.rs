//! Feature selection: the cross-entropy selector, incremental MI rankers
//! (mRMR, CMIM, DISR), the ANOVA F-score ranker and federated merging of
//! selection distributions.

mod anova;
mod ce;
mod rank;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::infotheory::{discretize, discretize_columns, BinStrategy, DiscretizedColumn, Estimator, InfoError};
use crate::matrix::Matrix;

pub use anova::{anova_f_score, anova_rank, DEFAULT_ANOVA_GROUPS};
pub use ce::{ce_select, ce_select_problem, CeObjective, CeParams, MaskScorer, DEFAULT_BINS};
pub use rank::{cmim_rank, disr_rank, mrmr_rank};

#[derive(Debug, Error, PartialEq)]
pub enum FeatselError {
    #[error(transparent)]
    Info(#[from] InfoError),
    #[error("k = {k} out of range 1..={m}")]
    KOutOfRange { k: usize, m: usize },
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("feature matrix has no columns")]
    NoFeatures,
    #[error("label length {labels} does not match {rows} rows")]
    LabelMismatch { rows: usize, labels: usize },
    #[error("ANOVA needs at least 2 non-empty label groups, got {0}")]
    TooFewGroups(usize),
    #[error("every candidate mask was empty for {0} consecutive iterations")]
    DegenerateSampling(usize),
    #[error("non-finite objective value")]
    NonFinite,
    #[error("selection distributions have different lengths ({0} vs {1})")]
    DistributionLength(usize, usize),
    #[error("no samples to weight the distributions")]
    ZeroSamples,
    #[error("no distributions to aggregate")]
    NoDistributions,
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
}

pub type Result<T> = std::result::Result<T, FeatselError>;

/// Independent Bernoulli selection probabilities, one per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDistribution {
    p: Vec<f64>,
}

impl SelectionDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(FeatselError::InvalidProbability(bad));
        }
        Ok(Self { p })
    }

    pub fn uniform(m: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; m])
    }

    /// Indicator distribution of a mask.
    pub fn from_mask(mask: &[bool]) -> Self {
        Self {
            p: mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Outcome of any selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub mask: Vec<bool>,
    pub distribution: SelectionDistribution,
    /// Plug-in `I(selected; y)` in bits.
    pub objective: f64,
    /// Greedy order for incremental methods.
    pub ranking: Option<Vec<usize>>,
}

impl SelectionResult {
    pub fn selected(&self) -> Vec<usize> {
        mask_indices(&self.mask)
    }
}

pub fn mask_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect()
}

/// Discretized view of `(X, y)` shared by every MI-based selector.
#[derive(Debug, Clone)]
pub struct SelectionProblem {
    x: Matrix,
    y: Vec<f64>,
    pub columns: Vec<DiscretizedColumn>,
    pub target: DiscretizedColumn,
    pub estimator: Estimator,
}

impl SelectionProblem {
    pub fn new(x: &Matrix, y: &[f64], bins: usize, strategy: BinStrategy) -> Result<Self> {
        check_shapes(x, y)?;
        Ok(Self {
            columns: discretize_columns(x, bins, strategy)?,
            target: discretize(y, bins, strategy)?,
            x: x.clone(),
            y: y.to_vec(),
            estimator: Estimator::default(),
        })
    }

    /// Problem over already-binned columns; the bin indices double as the
    /// raw values.
    pub fn from_discretized(columns: Vec<DiscretizedColumn>, target: DiscretizedColumn) -> Self {
        let as_f64 = |c: &DiscretizedColumn| c.bins().iter().map(|&b| f64::from(b)).collect::<Vec<_>>();
        let raw: Vec<Vec<f64>> = columns.iter().map(as_f64).collect();
        Self {
            x: Matrix::from_columns(&raw),
            y: as_f64(&target),
            columns,
            target,
            estimator: Estimator::default(),
        }
    }

    pub fn raw_features(&self) -> &Matrix {
        &self.x
    }

    pub fn raw_target(&self) -> &[f64] {
        &self.y
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    /// Plug-in `I(U; y)` for the features in `mask`.
    pub fn mask_mi(&self, mask: &[bool]) -> Result<f64> {
        let cols: Vec<&DiscretizedColumn> = mask_indices(mask)
            .into_iter()
            .map(|i| &self.columns[i])
            .collect();
        Ok(self.estimator.mutual_information(&cols, &self.target)?)
    }

    fn ranking_result(&self, ranking: Vec<usize>) -> Result<SelectionResult> {
        let mut mask = vec![false; self.n_features()];
        for &i in &ranking {
            mask[i] = true;
        }
        Ok(SelectionResult {
            objective: self.mask_mi(&mask)?,
            distribution: SelectionDistribution::from_mask(&mask),
            mask,
            ranking: Some(ranking),
        })
    }
}

fn check_shapes(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.n_cols() == 0 {
        return Err(FeatselError::NoFeatures);
    }
    if x.n_rows() != y.len() {
        return Err(FeatselError::LabelMismatch {
            rows: x.n_rows(),
            labels: y.len(),
        });
    }
    if x.n_rows() < 2 {
        return Err(FeatselError::TooFewRows {
            need: 2,
            got: x.n_rows(),
        });
    }
    Ok(())
}

fn check_k(k: usize, m: usize) -> Result<()> {
    if k == 0 || k > m {
        Err(FeatselError::KOutOfRange { k, m })
    } else {
        Ok(())
    }
}

/// Size-weighted merge of local selection distributions:
/// `p_G = sum_l q_l p_l` with `q_l = n_l / sum n`.
pub fn aggregate_distributions(locals: &[(SelectionDistribution, usize)]) -> Result<SelectionDistribution> {
    let (first, _) = locals.first().ok_or(FeatselError::NoDistributions)?;
    let m = first.len();
    if let Some((d, _)) = locals.iter().find(|(d, _)| d.len() != m) {
        return Err(FeatselError::DistributionLength(m, d.len()));
    }
    let total: usize = locals.iter().map(|(_, n)| n).sum();
    if total == 0 || locals.iter().any(|(_, n)| *n == 0) {
        return Err(FeatselError::ZeroSamples);
    }
    let mut p = vec![0.0; m];
    for (d, n) in locals {
        let q = *n as f64 / total as f64;
        for (acc, pi) in p.iter_mut().zip(d.probs()) {
            *acc += q * pi;
        }
    }
    // rounding can push a convex combination a hair past 1
    for v in &mut p {
        *v = v.clamp(0.0, 1.0);
    }
    SelectionDistribution::new(p)
}

/// `p_i >= threshold`, falling back to the single most likely feature so the
/// mask is never empty.
pub fn mask_from_distribution(p: &SelectionDistribution, threshold: f64) -> Vec<bool> {
    let mut mask: Vec<bool> = p.probs().iter().map(|&v| v >= threshold).collect();
    if !mask.iter().any(|&b| b) && !mask.is_empty() {
        let best = p
            .probs()
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > p.probs()[best] { i } else { best });
        mask[best] = true;
    }
    mask
}

/// One named selector outcome for the CSV report.
#[derive(Debug, Clone)]
pub struct MethodSelection<'a> {
    pub method: &'a str,
    pub result: &'a SelectionResult,
}

/// Writes `method,feature_index,feature_name,selected,rank_or_prob`.
///
/// Feature indices are 1-based. Ranked methods report the 1-based rank
/// (blank when unranked); the CE selector reports its final probability.
pub fn write_selection_report<W: Write>(
    writer: W,
    feature_names: &[&str],
    selections: &[MethodSelection<'_>],
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "feature_index", "feature_name", "selected", "rank_or_prob"])?;
    for sel in selections {
        for (j, name) in feature_names.iter().enumerate() {
            let value = match &sel.result.ranking {
                Some(r) => r
                    .iter()
                    .position(|&f| f == j)
                    .map(|pos| (pos + 1).to_string())
                    .unwrap_or_default(),
                None => sel.result.distribution.probs()[j].to_string(),
            };
            w.write_record([
                sel.method.to_string(),
                (j + 1).to_string(),
                name.to_string(),
                u8::from(sel.result.mask[j]).to_string(),
                value,
            ])?;
        }
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(p: &[f64]) -> SelectionDistribution {
        SelectionDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn aggregate_examples() {
        let g = aggregate_distributions(&[(dist(&[1.0, 0.0]), 100), (dist(&[0.0, 1.0]), 100)]).unwrap();
        assert_eq!(g.probs(), &[0.5, 0.5]);

        let p = dist(&[0.3, 0.9, 0.1]);
        let g = aggregate_distributions(&[(p.clone(), 7), (p.clone(), 3), (p.clone(), 11)]).unwrap();
        for (a, b) in g.probs().iter().zip(p.probs()) {
            assert!((a - b).abs() < 1e-15);
        }

        let g = aggregate_distributions(&[(dist(&[0.8, 0.2]), 100), (dist(&[0.4, 0.6]), 300)]).unwrap();
        assert!((g.probs()[0] - 0.5).abs() < 1e-15);
        assert!((g.probs()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn aggregate_errors() {
        assert_eq!(
            aggregate_distributions(&[(dist(&[0.1]), 1), (dist(&[0.1, 0.2]), 1)]),
            Err(FeatselError::DistributionLength(1, 2))
        );
        assert_eq!(
            aggregate_distributions(&[(dist(&[0.1]), 0)]),
            Err(FeatselError::ZeroSamples)
        );
        assert_eq!(aggregate_distributions(&[]), Err(FeatselError::NoDistributions));
    }

    #[test]
    fn mask_examples() {
        assert_eq!(mask_from_distribution(&dist(&[0.9, 0.1, 0.6]), 0.5), vec![true, false, true]);
        assert_eq!(mask_from_distribution(&dist(&[0.2, 0.3]), 0.5), vec![false, true]);
        assert_eq!(mask_from_distribution(&dist(&[0.5, 0.5]), 0.5), vec![true, true]);
    }

    #[test]
    fn invalid_probability_rejected() {
        assert!(SelectionDistribution::new(vec![1.2]).is_err());
        assert!(SelectionDistribution::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn report_shape() {
        let res = SelectionResult {
            mask: vec![true, false],
            distribution: SelectionDistribution::from_mask(&[true, false]),
            objective: 0.3,
            ranking: Some(vec![0]),
        };
        let mut out = Vec::new();
        write_selection_report(&mut out, &["a", "b"], &[MethodSelection { method: "mrmr", result: &res }]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "method,feature_index,feature_name,selected,rank_or_prob\nmrmr,1,a,1,1\nmrmr,2,b,0,\n"
        );
    }

    proptest! {
        #[test]
        fn aggregate_is_convex(
            raw in prop::collection::vec((prop::collection::vec(0.0f64..=1.0, 4), 1usize..1000), 1..8)
        ) {
            let locals: Vec<_> = raw.iter().map(|(p, n)| (dist(p), *n)).collect();
            let g = aggregate_distributions(&locals).unwrap();
            for i in 0..4 {
                let lo = raw.iter().map(|(p, _)| p[i]).fold(f64::INFINITY, f64::min);
                let hi = raw.iter().map(|(p, _)| p[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(g.probs()[i] >= lo - 1e-12 && g.probs()[i] <= hi + 1e-12);
            }
        }
    }
}
