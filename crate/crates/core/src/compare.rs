//! Side-by-side evaluation of feature selectors: each selector picks a
//! subset on the training rows, a regressor is trained on that subset, and
//! its RMSE is measured on held-out rows next to an all-features baseline.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::featsel::{
    anova_rank, ce_select_problem, cmim_rank, disr_rank, mask_indices, mrmr_rank, CeParams, FeatselError,
    SelectionProblem, SelectionResult, DEFAULT_ANOVA_GROUPS, DEFAULT_BINS,
};
use crate::infotheory::BinStrategy;
use crate::matrix::Matrix;
use crate::regressor::{Model, RegressorError, TrainConfig, DEFAULT_HIDDEN};

#[derive(Debug, thiserror::Error)]
pub enum CompareError {
    #[error(transparent)]
    Featsel(#[from] FeatselError),
    #[error(transparent)]
    Regressor(#[from] RegressorError),
    #[error("unknown selection method '{0}' (expected ce, mrmr, cmim, disr, anova or all)")]
    UnknownMethod(String),
    #[error("k = {k} exceeds the {m} available features")]
    KTooLarge { k: usize, m: usize },
    #[error("test fraction {0} leaves no training or no test rows")]
    BadSplit(f64),
}

pub type Result<T> = std::result::Result<T, CompareError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ce,
    Mrmr,
    Cmim,
    Disr,
    Anova,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ce, Method::Mrmr, Method::Cmim, Method::Disr, Method::Anova];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ce => "ce",
            Method::Mrmr => "mrmr",
            Method::Cmim => "cmim",
            Method::Disr => "disr",
            Method::Anova => "anova",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CompareError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ce" => Ok(Method::Ce),
            "mrmr" => Ok(Method::Mrmr),
            "cmim" => Ok(Method::Cmim),
            "disr" | "dsr" => Ok(Method::Disr),
            "anova" => Ok(Method::Anova),
            _ => Err(CompareError::UnknownMethod(s.to_string())),
        }
    }
}

/// Parses `all` or a comma-separated list of method names, keeping order and
/// dropping repeats.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(Method::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in list.split(',').filter(|p| !p.trim().is_empty()) {
        let m: Method = part.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(CompareError::UnknownMethod(list.to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    /// Subset size for the ranking methods; CE chooses its own size.
    pub k: usize,
    pub bins: usize,
    pub anova_groups: usize,
    pub ce: CeParams,
    pub hidden: usize,
    pub train: TrainConfig,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            k: 5,
            bins: DEFAULT_BINS,
            anova_groups: DEFAULT_ANOVA_GROUPS,
            ce: CeParams::default(),
            hidden: DEFAULT_HIDDEN,
            train: TrainConfig {
                epochs: 100,
                lr: 1e-2,
                ..TrainConfig::default()
            },
        }
    }
}

/// One row of the comparison; `method` is `None` for the all-features
/// baseline, which has no selection result.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub method: Option<Method>,
    pub selection: Option<SelectionResult>,
    pub columns: Vec<usize>,
    pub rmse: f64,
}

impl MethodOutcome {
    pub fn label(&self) -> &'static str {
        self.method.map_or("all", Method::name)
    }
}

/// Seeded shuffle into training and test rows.
pub fn holdout_split(x: &Matrix, y: &[f64], test_frac: f64, seed: u64) -> Result<(Matrix, Vec<f64>, Matrix, Vec<f64>)> {
    let n = x.n_rows();
    let n_test = (test_frac * n as f64).round() as usize;
    if !(0.0..1.0).contains(&test_frac) || n_test == 0 || n_test >= n {
        return Err(CompareError::BadSplit(test_frac));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test, train) = order.split_at(n_test);
    let pick = |idx: &[usize]| idx.iter().map(|&i| y[i]).collect::<Vec<_>>();
    Ok((x.select_rows(train), pick(train), x.select_rows(test), pick(test)))
}

/// Runs one selector on an already discretized problem.
pub fn select(problem: &SelectionProblem, method: Method, config: &ComparisonConfig) -> Result<SelectionResult> {
    let m = problem.n_features();
    if method != Method::Ce && config.k > m {
        return Err(CompareError::KTooLarge { k: config.k, m });
    }
    Ok(match method {
        Method::Ce => ce_select_problem(problem, &config.ce)?,
        Method::Mrmr => mrmr_rank(problem, config.k)?,
        Method::Cmim => cmim_rank(problem, config.k)?,
        Method::Disr => disr_rank(problem, config.k)?,
        Method::Anova => anova_rank(problem, config.k, config.anova_groups)?,
    })
}

/// Test RMSE of a regressor trained on `columns` of the training rows.
pub fn subset_rmse(
    train: (&Matrix, &[f64]),
    test: (&Matrix, &[f64]),
    columns: &[usize],
    config: &ComparisonConfig,
) -> Result<f64> {
    let (model, _) = Model::fit(&train.0.select_columns(columns), train.1, config.hidden, &config.train)?;
    Ok(model.rmse(&test.0.select_columns(columns), test.1)?)
}

/// Selects on the training rows with every method, then trains and scores
/// one regressor per subset. The all-features baseline comes first.
pub fn compare_selectors(
    train: (&Matrix, &[f64]),
    test: (&Matrix, &[f64]),
    methods: &[Method],
    config: &ComparisonConfig,
) -> Result<Vec<MethodOutcome>> {
    let m = train.0.n_cols();
    if config.k > m && methods.iter().any(|&mt| mt != Method::Ce) {
        return Err(CompareError::KTooLarge { k: config.k, m });
    }
    let problem = SelectionProblem::new(train.0, train.1, config.bins, BinStrategy::EqualFrequency)?;
    let all: Vec<usize> = (0..m).collect();
    let mut out = vec![MethodOutcome {
        method: None,
        selection: None,
        rmse: subset_rmse(train, test, &all, config)?,
        columns: all,
    }];
    for &method in methods {
        let selection = select(&problem, method, config)?;
        let columns = mask_indices(&selection.mask);
        out.push(MethodOutcome {
            method: Some(method),
            rmse: subset_rmse(train, test, &columns, config)?,
            selection: Some(selection),
            columns,
        });
    }
    Ok(out)
}

/// Writes `method,n_selected,features,rmse` with 1-based feature indices
/// joined by `;`.
pub fn write_rmse_table<W: Write>(writer: W, outcomes: &[MethodOutcome]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "n_selected", "features", "rmse"])?;
    for o in outcomes {
        let features = o.columns.iter().map(|c| (c + 1).to_string()).collect::<Vec<_>>().join(";");
        w.write_record([o.label().to_string(), o.columns.len().to_string(), features, o.rmse.to_string()])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::{planted_benchmark, PlantedConfig, PLANTED};

    #[test]
    fn method_lists() {
        assert_eq!(parse_methods("all").unwrap(), Method::ALL.to_vec());
        assert_eq!(parse_methods("CE, dsr,ce").unwrap(), vec![Method::Ce, Method::Disr]);
        assert!(matches!(parse_methods("ce,lasso"), Err(CompareError::UnknownMethod(_))));
        assert!(parse_methods(" , ").is_err());
    }

    #[test]
    fn holdout_partitions_rows() {
        let x = Matrix::from_rows(&(0..10).map(|i| [i as f64]).collect::<Vec<_>>());
        let y: Vec<f64> = (0..10).map(f64::from).collect();
        let (xtr, ytr, xte, yte) = holdout_split(&x, &y, 0.3, 1).unwrap();
        assert_eq!((xtr.n_rows(), xte.n_rows()), (7, 3));
        let mut seen: Vec<f64> = ytr.iter().chain(&yte).copied().collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, y);
        assert_eq!(xte.column(0), yte);
        assert!(holdout_split(&x, &y, 0.0, 1).is_err());
    }

    #[test]
    fn k_larger_than_m_fails_before_training() {
        let (x, y) = planted_benchmark(&PlantedConfig { rows: 100, ..PlantedConfig::default() }, 0);
        let cfg = ComparisonConfig { k: 10, ..ComparisonConfig::default() };
        let r = compare_selectors((&x, &y), (&x, &y), &[Method::Mrmr], &cfg);
        assert!(matches!(r, Err(CompareError::KTooLarge { k: 10, m: 9 })));
    }

    #[test]
    fn comparison_rows_and_table() {
        let (x, y) = planted_benchmark(&PlantedConfig { rows: 1500, ..PlantedConfig::default() }, 3);
        let (xtr, ytr, xte, yte) = holdout_split(&x, &y, 0.2, 3).unwrap();
        let cfg = ComparisonConfig {
            train: TrainConfig { epochs: 5, lr: 1e-2, ..TrainConfig::default() },
            ..ComparisonConfig::default()
        };
        let out = compare_selectors((&xtr, &ytr), (&xte, &yte), &[Method::Ce, Method::Cmim], &cfg).unwrap();
        assert_eq!(out.iter().map(MethodOutcome::label).collect::<Vec<_>>(), ["all", "ce", "cmim"]);
        assert_eq!(out[2].columns.len(), 5);
        assert_eq!(out[1].columns, PLANTED);
        assert!(out.iter().all(|o| o.rmse.is_finite()));

        let mut buf = Vec::new();
        write_rmse_table(&mut buf, &out).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("method,n_selected,features,rmse\nall,9,1;2;3;4;5;6;7;8;9,"));
        assert!(text.contains("\nce,5,3;6;7;8;9,"));
    }
}
