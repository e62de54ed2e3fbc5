//! Cross-entropy search over feature subsets.
//!
//! Each iteration draws candidate masks from independent Bernoulli
//! probabilities `p`, scores them, keeps the elite fraction and moves `p`
//! toward the elite mean. The converged `p` is the object exchanged in the
//! federated protocol.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mask_from_distribution, FeatselError, Result, SelectionDistribution, SelectionProblem, SelectionResult};
use crate::infotheory::{BinStrategy, DiscretizedColumn};
use crate::matrix::Matrix;

pub const DEFAULT_BINS: usize = 10;

/// What a candidate mask is scored by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CeObjective {
    /// Plug-in `I(U; y)`.
    PlugIn,
    /// Plug-in `I(U; y)` minus its mean over `permutations` seeded shuffles of
    /// `y`. The shuffled value estimates the upward bias that sparse joint
    /// cells add to the plug-in estimate, so extra uninformative columns stop
    /// paying off.
    NullAdjusted { permutations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeParams {
    /// Candidate masks per iteration.
    pub candidates: usize,
    pub elite_frac: f64,
    /// Weight of the elite mean in the probability update.
    pub smoothing: f64,
    pub init_prob: f64,
    /// Converged once every `p_i` is within this distance of 0 or 1.
    pub tolerance: f64,
    pub max_iters: usize,
    /// Scores closer than this count as equal; the smaller mask then wins.
    pub tie_tolerance: f64,
    pub objective: CeObjective,
    pub seed: u64,
}

impl Default for CeParams {
    fn default() -> Self {
        Self {
            candidates: 50,
            elite_frac: 0.1,
            smoothing: 0.7,
            init_prob: 0.5,
            tolerance: 0.05,
            max_iters: 100,
            tie_tolerance: 1e-9,
            objective: CeObjective::NullAdjusted { permutations: 4 },
            seed: 0,
        }
    }
}

/// Cross-entropy selection on raw `(X, y)` discretized with `bins`
/// equal-frequency bins.
pub fn ce_select(x: &Matrix, y: &[f64], bins: usize, params: &CeParams) -> Result<SelectionResult> {
    let problem = SelectionProblem::new(x, y, bins, BinStrategy::EqualFrequency)?;
    ce_select_problem(&problem, params)
}

/// Memoised mask scorer.
pub struct MaskScorer<'a> {
    problem: &'a SelectionProblem,
    nulls: Vec<DiscretizedColumn>,
    cache: HashMap<Vec<bool>, f64>,
}

impl<'a> MaskScorer<'a> {
    pub fn new(problem: &'a SelectionProblem, objective: CeObjective, seed: u64) -> Self {
        let nulls = match objective {
            CeObjective::PlugIn => Vec::new(),
            CeObjective::NullAdjusted { permutations } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(0x6e75_6c6c);
                (0..permutations)
                    .map(|_| {
                        let mut order: Vec<usize> = (0..problem.n_rows()).collect();
                        order.shuffle(&mut rng);
                        problem.target.permuted(&order)
                    })
                    .collect()
            }
        };
        Self {
            problem,
            nulls,
            cache: HashMap::new(),
        }
    }

    pub fn score(&mut self, mask: &[bool]) -> Result<f64> {
        if let Some(&s) = self.cache.get(mask) {
            return Ok(s);
        }
        let cols: Vec<&DiscretizedColumn> = super::mask_indices(mask)
            .into_iter()
            .map(|i| &self.problem.columns[i])
            .collect();
        let est = &self.problem.estimator;
        let mut s = est.mutual_information(&cols, &self.problem.target)?;
        if !self.nulls.is_empty() {
            let mut null = 0.0;
            for t in &self.nulls {
                null += est.mutual_information(&cols, t)?;
            }
            s -= null / self.nulls.len() as f64;
        }
        if !s.is_finite() {
            return Err(FeatselError::NonFinite);
        }
        self.cache.insert(mask.to_vec(), s);
        Ok(s)
    }
}

fn converged(p: &[f64], tol: f64) -> bool {
    p.iter().all(|&v| v <= tol || v >= 1.0 - tol)
}

pub fn ce_select_problem(problem: &SelectionProblem, params: &CeParams) -> Result<SelectionResult> {
    let m = problem.n_features();
    if m == 0 {
        return Err(FeatselError::NoFeatures);
    }
    let mut scorer = MaskScorer::new(problem, params.objective, params.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut p = vec![params.init_prob.clamp(0.0, 1.0); m];
    let n_cand = params.candidates.max(1);
    let n_elite = ((params.elite_frac * n_cand as f64).ceil() as usize).clamp(1, n_cand);
    let tie = params.tie_tolerance.max(f64::MIN_POSITIVE);

    let mut iter = 0;
    let mut degenerate = 0;
    while iter < params.max_iters && !converged(&p, params.tolerance) {
        let masks: Vec<Vec<bool>> = (0..n_cand)
            .map(|_| p.iter().map(|&pi| rng.random_bool(pi)).collect())
            .collect();
        if masks.iter().all(|mk| !mk.iter().any(|&b| b)) {
            degenerate += 1;
            if degenerate >= params.max_iters {
                return Err(FeatselError::DegenerateSampling(degenerate));
            }
            continue;
        }
        degenerate = 0;

        let mut ranked = Vec::with_capacity(n_cand);
        for (idx, mk) in masks.iter().enumerate() {
            // empty masks carry no information and sort below everything
            let score = if mk.iter().any(|&b| b) {
                scorer.score(mk)?
            } else {
                f64::NEG_INFINITY
            };
            let size = mk.iter().filter(|&&b| b).count();
            let bucket = if score.is_finite() {
                (score / tie).round() as i64
            } else {
                i64::MIN
            };
            ranked.push((bucket, size, idx));
        }
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut elite_mean = vec![0.0; m];
        for &(_, _, idx) in &ranked[..n_elite] {
            for (acc, &b) in elite_mean.iter_mut().zip(&masks[idx]) {
                if b {
                    *acc += 1.0;
                }
            }
        }
        for (pi, e) in p.iter_mut().zip(&elite_mean) {
            *pi = ((1.0 - params.smoothing) * *pi + params.smoothing * e / n_elite as f64).clamp(0.0, 1.0);
        }
        iter += 1;
    }

    let distribution = SelectionDistribution::new(p)?;
    let mask = mask_from_distribution(&distribution, 0.5);
    Ok(SelectionResult {
        objective: problem.mask_mi(&mask)?,
        distribution,
        mask,
        ranking: None,
    })
}
