//! Greedy incremental MI rankers. Ties go to the lowest feature index.

use super::{check_k, Result, SelectionProblem, SelectionResult};
use crate::infotheory::entropy;

/// Index of the largest score among unselected features; the first maximum
/// wins.
fn argmax_unselected(scores: &[f64], taken: &[bool]) -> usize {
    let mut best: Option<usize> = None;
    for (j, &s) in scores.iter().enumerate() {
        if taken[j] {
            continue;
        }
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(j);
        }
    }
    best.expect("k <= m leaves a candidate")
}

fn relevance(problem: &SelectionProblem) -> Result<Vec<f64>> {
    problem
        .columns
        .iter()
        .map(|c| Ok(problem.estimator.mutual_information(&[c], &problem.target)?))
        .collect()
}

/// mRMR: `argmax_j I(x_j; y) - mean_{s in U} I(x_j; x_s)`.
pub fn mrmr_rank(problem: &SelectionProblem, k: usize) -> Result<SelectionResult> {
    let m = problem.n_features();
    check_k(k, m)?;
    let rel = relevance(problem)?;
    let mut redundancy_sum = vec![0.0; m];
    let mut taken = vec![false; m];
    let mut ranking = Vec::with_capacity(k);
    while ranking.len() < k {
        let scores: Vec<f64> = if ranking.is_empty() {
            rel.clone()
        } else {
            let u = ranking.len() as f64;
            rel.iter()
                .zip(&redundancy_sum)
                .map(|(r, s)| r - s / u)
                .collect()
        };
        let pick = argmax_unselected(&scores, &taken);
        taken[pick] = true;
        ranking.push(pick);
        if ranking.len() < k {
            let chosen = &problem.columns[pick];
            for j in (0..m).filter(|&j| !taken[j]) {
                redundancy_sum[j] += problem
                    .estimator
                    .mutual_information(&[&problem.columns[j]], chosen)?;
            }
        }
    }
    problem.ranking_result(ranking)
}

/// CMIM: `argmax_j min_{s in U} I(x_j; y | x_s)`, with `I(x_j; y)` for empty U.
pub fn cmim_rank(problem: &SelectionProblem, k: usize) -> Result<SelectionResult> {
    let m = problem.n_features();
    check_k(k, m)?;
    let mut scores = relevance(problem)?;
    let mut taken = vec![false; m];
    let mut ranking = Vec::with_capacity(k);
    while ranking.len() < k {
        let pick = argmax_unselected(&scores, &taken);
        taken[pick] = true;
        ranking.push(pick);
        if ranking.len() < k {
            let chosen = &problem.columns[pick];
            for j in (0..m).filter(|&j| !taken[j]) {
                let cmi = problem.estimator.conditional_mi(
                    &problem.columns[j],
                    &problem.target,
                    &[chosen],
                )?;
                scores[j] = scores[j].min(cmi);
            }
        }
    }
    problem.ranking_result(ranking)
}

/// DISR: `argmax_j sum_{s in U} I(x_j, x_s; y) / H(x_j, x_s, y)`; for empty U
/// the score is `I(x_j; y) / H(x_j, y)`.
pub fn disr_rank(problem: &SelectionProblem, k: usize) -> Result<SelectionResult> {
    let m = problem.n_features();
    check_k(k, m)?;
    let est = &problem.estimator;
    let y = &problem.target;
    let ratio = |mi: f64, h: f64| if h > 0.0 { mi / h } else { 0.0 };

    let mut first = Vec::with_capacity(m);
    for c in &problem.columns {
        let mi = est.mutual_information(&[c], y)?;
        first.push(ratio(mi, est.joint_entropy(&[c, y])?));
    }
    let mut sums = vec![0.0; m];
    let mut taken = vec![false; m];
    let mut ranking = Vec::with_capacity(k);
    while ranking.len() < k {
        let scores = if ranking.is_empty() { &first } else { &sums };
        let pick = argmax_unselected(scores, &taken);
        taken[pick] = true;
        ranking.push(pick);
        if ranking.len() < k {
            let chosen = &problem.columns[pick];
            for j in (0..m).filter(|&j| !taken[j]) {
                let xj = &problem.columns[j];
                let mi = est.mutual_information(&[xj, chosen], y)?;
                sums[j] += ratio(mi, est.joint_entropy(&[xj, chosen, y])?);
            }
        }
    }
    // constant target: every score is zero and the order is by index
    debug_assert!(entropy(y) > 0.0 || ranking.windows(2).all(|w| w[0] < w[1]));
    problem.ranking_result(ranking)
}
