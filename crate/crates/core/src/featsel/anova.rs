//! One-way ANOVA F-score ranking against a binned continuous label.

use super::{check_k, check_shapes, FeatselError, Result, SelectionProblem, SelectionResult};
use crate::infotheory::{discretize, BinStrategy};

pub const DEFAULT_ANOVA_GROUPS: usize = 4;

/// F = (SSB / (G - 1)) / (SSW / (n - G)) over the non-empty groups.
///
/// Returns `+inf` when groups differ but are internally constant, and 0 when
/// the feature does not vary at all.
pub fn anova_f_score(values: &[f64], groups: &[u32]) -> Result<f64> {
    let n_groups = groups.iter().max().map_or(0, |&g| g as usize + 1);
    let mut sum = vec![0.0; n_groups];
    let mut count = vec![0usize; n_groups];
    for (&v, &g) in values.iter().zip(groups) {
        sum[g as usize] += v;
        count[g as usize] += 1;
    }
    let occupied: Vec<usize> = (0..n_groups).filter(|&g| count[g] > 0).collect();
    if occupied.len() < 2 {
        return Err(FeatselError::TooFewGroups(occupied.len()));
    }
    let n = values.len() as f64;
    let grand = values.iter().sum::<f64>() / n;
    let means: Vec<f64> = (0..n_groups)
        .map(|g| if count[g] > 0 { sum[g] / count[g] as f64 } else { 0.0 })
        .collect();
    let ssb: f64 = occupied
        .iter()
        .map(|&g| count[g] as f64 * (means[g] - grand).powi(2))
        .sum();
    let ssw: f64 = values
        .iter()
        .zip(groups)
        .map(|(&v, &g)| (v - means[g as usize]).powi(2))
        .sum();
    let df_between = (occupied.len() - 1) as f64;
    let df_within = n - occupied.len() as f64;
    // relative guard: sums of squares below this are rounding noise
    let scale = values.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE) * 1e-24;
    if ssb <= scale {
        return Ok(0.0);
    }
    if ssw <= scale || df_within <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((ssb / df_between) / (ssw / df_within))
}

/// Ranks features by descending F-score against `groups` equal-frequency bins
/// of `y`. Features with zero variance go last.
pub fn anova_rank(problem: &SelectionProblem, k: usize, groups: usize) -> Result<SelectionResult> {
    let (x, y) = (problem.raw_features(), problem.raw_target());
    check_shapes(x, y)?;
    let m = x.n_cols();
    check_k(k, m)?;
    let binned = discretize(y, groups.max(2), BinStrategy::EqualFrequency)?;
    let labels = binned.bins();

    let mut keyed = Vec::with_capacity(m);
    for j in 0..m {
        let col = x.column(j);
        let first = col[0];
        let constant = col.iter().all(|&v| v == first);
        let f = anova_f_score(&col, labels)?;
        keyed.push((constant, f, j));
    }
    // non-constant first, then larger F, then lower index
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    let ranking: Vec<usize> = keyed.iter().take(k).map(|&(_, _, j)| j).collect();
    problem.ranking_result(ranking)
}
