//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per
//! criterion, then reruns everything to confirm the written reports are
//! bitwise identical. Exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use quicfed::benchmark::{planted_benchmark, PlantedConfig, PLANTED};
use quicfed::compare::{compare_selectors, holdout_split, write_rmse_table, ComparisonConfig, Method, MethodOutcome};
use quicfed::featsel::{
    aggregate_distributions, ce_select_problem, mask_indices, write_selection_report, CeParams, MaskScorer,
    MethodSelection, SelectionDistribution, SelectionProblem,
};
use quicfed::federation::{run_experiment, ExperimentData, ExperimentReport, FederationConfig, Mode};
use quicfed::infotheory::{conditional_mi, mutual_information, BinStrategy, DiscretizedColumn};
use quicfed::regressor::{loss_and_grad, MlpParams, Normalization};
use quicfed::traffic::{extract_features, generate_synthetic_trace, Service, SynthConfig};
use quicfed::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const SEEDS: u64 = 20;

struct Outcome {
    pass: bool,
    detail: String,
    /// Report files the run wrote, by name.
    files: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self {
            pass,
            detail,
            files: Vec::new(),
        }
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

/// Probability of every observed tuple of the given columns.
fn tuple_probs(cols: &[&DiscretizedColumn]) -> BTreeMap<Vec<u32>, f64> {
    let n = cols[0].len();
    let mut counts = BTreeMap::new();
    for r in 0..n {
        *counts.entry(cols.iter().map(|c| c.bins()[r]).collect()).or_insert(0usize) += 1;
    }
    counts.into_iter().map(|(k, c)| (k, c as f64 / n as f64)).collect()
}

/// `sum p(u,y) log2 p(u,y) / (p(u) p(y))`.
fn brute_mi(u: &[&DiscretizedColumn], y: &DiscretizedColumn) -> f64 {
    let mut all = u.to_vec();
    all.push(y);
    let (pu, py, puy) = (tuple_probs(u), tuple_probs(&[y]), tuple_probs(&all));
    puy.iter()
        .map(|(k, &p)| {
            let (ku, ky) = k.split_at(u.len());
            p * (p / (pu[ku] * py[ky])).log2()
        })
        .sum()
}

/// `sum p(x,y,u) log2 p(u) p(x,y,u) / (p(x,u) p(y,u))`.
fn brute_cmi(x: &DiscretizedColumn, y: &DiscretizedColumn, u: &[&DiscretizedColumn]) -> f64 {
    fn concat<'a>(head: &[&'a DiscretizedColumn], tail: &[&'a DiscretizedColumn]) -> Vec<&'a DiscretizedColumn> {
        head.iter().chain(tail).copied().collect()
    }
    let pu = if u.is_empty() { BTreeMap::from([(vec![], 1.0)]) } else { tuple_probs(u) };
    let (pxu, pyu, pxyu) = (tuple_probs(&concat(&[x], u)), tuple_probs(&concat(&[y], u)), tuple_probs(&concat(&[x, y], u)));
    pxyu.iter()
        .map(|(k, &p)| {
            let (xv, yv, uv) = (k[0], k[1], &k[2..]);
            let key = |v: u32| std::iter::once(v).chain(uv.iter().copied()).collect::<Vec<_>>();
            p * (pu[uv] * p / (pxu[&key(xv)] * pyu[&key(yv)])).log2()
        })
        .sum()
}

fn random_column(rng: &mut ChaCha8Rng, rows: usize) -> DiscretizedColumn {
    let n_bins = rng.random_range(2..=16usize);
    DiscretizedColumn::from_bins((0..rows).map(|_| rng.random_range(0..n_bins as u32)).collect(), n_bins)
}

fn criterion_mi_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let rows = rng.random_range(1..=500usize);
        let cols: Vec<DiscretizedColumn> = (0..4).map(|_| random_column(&mut rng, rows)).collect();
        let k = 1 + i % 3;
        let u: Vec<&DiscretizedColumn> = cols[..k].iter().collect();
        let mi = mutual_information(&u, &cols[3]).expect("within the cell cap");
        worst = worst.max((mi - brute_mi(&u, &cols[3])).abs());
        let cond: Vec<&DiscretizedColumn> = cols[2..4 - (i % 2)].iter().collect();
        let cmi = conditional_mi(&cols[0], &cols[1], &cond).expect("within the cell cap");
        worst = worst.max((cmi - brute_cmi(&cols[0], &cols[1], &cond)).abs());
    }
    // sanity of the oracle itself: independent fair coins carry no information
    let coin = DiscretizedColumn::from_bins(vec![0, 1, 0, 1], 2);
    let other = DiscretizedColumn::from_bins(vec![0, 0, 1, 1], 2);
    let oracle_ok = brute_mi(&[&coin], &other).abs() < 1e-15 && (brute_mi(&[&coin], &coin) - 1.0).abs() < 1e-15;
    Outcome::new(
        worst < 1e-12 && oracle_ok,
        format!("200 instances, max |estimator - oracle| = {worst:.2e} bits (tol 1e-12)"),
    )
}

fn criterion_gradients() -> Outcome {
    let step = 1e-5;
    let mut worst = 0.0f64;
    for instance in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + instance);
        let m = rng.random_range(1..=6usize);
        let h = rng.random_range(1..=8usize);
        let rows = rng.random_range(1..=24usize);
        let x = Matrix::from_vec(rows, m, (0..rows * m).map(|_| rng.random_range(-2.0..2.0)).collect());
        let y: Vec<f64> = (0..rows).map(|_| rng.random()).collect();
        let mut p = MlpParams::init(m, h, instance).unwrap();
        p.tensors_mut()
            .into_iter()
            .flatten()
            .for_each(|v| *v += rng.random_range(-0.3..0.3));
        let stats = Normalization::identity(m);
        let (_, grad) = loss_and_grad(&p, &x, &y, &stats).unwrap();
        for (k, an) in grad.values().enumerate() {
            let loss_at = |delta: f64| {
                let mut q = p.clone();
                let mut idx = k;
                for t in q.tensors_mut() {
                    if idx < t.len() {
                        t[idx] += delta;
                        break;
                    }
                    idx -= t.len();
                }
                loss_and_grad(&q, &x, &y, &stats).unwrap().0
            };
            let fd = (loss_at(step) - loss_at(-step)) / (2.0 * step);
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-8));
        }
    }
    Outcome::new(worst < 1e-4, format!("50 instances, max relative error = {worst:.2e} (tol 1e-4)"))
}

fn benchmark_split(seed: u64) -> (Matrix, Vec<f64>, Matrix, Vec<f64>) {
    let cfg = PlantedConfig {
        rows: 5000,
        ..PlantedConfig::default()
    };
    let (x, y) = planted_benchmark(&cfg, seed);
    holdout_split(&x, &y, 0.2, seed).unwrap()
}

fn criterion_ce_recovery() -> Outcome {
    let runs: Vec<(Vec<usize>, Vec<usize>, Vec<u8>)> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let (xtr, ytr, _, _) = benchmark_split(seed);
            let problem = SelectionProblem::new(&xtr, &ytr, 10, BinStrategy::EqualFrequency).unwrap();
            let params = CeParams {
                seed,
                ..CeParams::default()
            };
            let ce = ce_select_problem(&problem, &params).unwrap();
            let mut scorer = MaskScorer::new(&problem, params.objective, seed);
            let mut best = (f64::NEG_INFINITY, u32::MAX, Vec::new());
            for bits in 1u32..(1 << 9) {
                let mask: Vec<bool> = (0..9).map(|i| bits >> i & 1 == 1).collect();
                let score = scorer.score(&mask).unwrap();
                let size = bits.count_ones();
                let tied = (score - best.0).abs() <= params.tie_tolerance;
                if score > best.0 + params.tie_tolerance || (tied && size < best.1) {
                    best = (score, size, mask);
                }
            }
            let mut report = Vec::new();
            write_selection_report(
                &mut report,
                &quicfed::traffic::FEATURE_NAMES,
                &[MethodSelection {
                    method: "ce",
                    result: &ce,
                }],
            )
            .unwrap();
            (ce.selected(), mask_indices(&best.2), report)
        })
        .collect();
    let hits = runs.iter().filter(|(ce, _, _)| ce == &PLANTED).count();
    let validated = runs.iter().filter(|(ce, oracle, _)| ce == &PLANTED && oracle == &PLANTED).count();
    let misses: Vec<String> = runs
        .iter()
        .enumerate()
        .filter(|(_, (ce, _, _))| ce != &PLANTED)
        .map(|(s, (ce, _, _))| format!("seed {s}: {ce:?}"))
        .collect();
    let mut out = Outcome::new(
        validated >= 18,
        format!(
            "CE returned {{3,6,7,8,9}} in {hits}/20 seeds, {validated}/20 also the exhaustive-oracle optimum (need 18){}",
            if misses.is_empty() { String::new() } else { format!("; misses: {}", misses.join(", ")) }
        ),
    );
    out.files = runs
        .into_iter()
        .enumerate()
        .map(|(s, (_, _, r))| (format!("ce_seed{s}.csv"), r))
        .collect();
    out
}

fn comparison(seed: u64, methods: &[Method]) -> Vec<MethodOutcome> {
    let (xtr, ytr, xte, yte) = benchmark_split(seed);
    let mut cfg = ComparisonConfig::default();
    cfg.ce.seed = seed;
    cfg.train.seed = seed;
    compare_selectors((&xtr, &ytr), (&xte, &yte), methods, &cfg).unwrap()
}

fn rmse_file(outcomes: &[MethodOutcome]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_rmse_table(&mut buf, outcomes).unwrap();
    buf
}

fn criterion_degradation() -> Outcome {
    let runs: Vec<Vec<MethodOutcome>> = (0..SEEDS).into_par_iter().map(|s| comparison(s, &[Method::Ce])).collect();
    let mean = |i: usize| runs.iter().map(|r| r[i].rmse).sum::<f64>() / runs.len() as f64;
    let (all, ce) = (mean(0), mean(1));
    let five = runs.iter().filter(|r| r[1].columns.len() == 5).count();
    let ratio = ce / all;
    let worst = runs.iter().map(|r| r[1].rmse / r[0].rmse).fold(0.0, f64::max);
    let mut out = Outcome::new(
        ratio <= 1.05,
        format!(
            "mean RMSE over 20 seeds: CE subset {ce:.5} vs all features {all:.5}, ratio {ratio:.4} (tol 1.05); \
             worst single seed {worst:.4}; CE chose 5 features in {five}/20"
        ),
    );
    out.files = runs
        .iter()
        .enumerate()
        .map(|(s, r)| (format!("degradation_seed{s}.csv"), rmse_file(r)))
        .collect();
    out
}

fn criterion_ordering() -> Outcome {
    let methods = [Method::Ce, Method::Cmim, Method::Anova, Method::Disr, Method::Mrmr];
    let runs: Vec<Vec<MethodOutcome>> = (0..SEEDS).into_par_iter().map(|s| comparison(s, &methods)).collect();
    let ordered: Vec<bool> = runs
        .iter()
        .map(|r| {
            let (ce, cmim, anova, disr, mrmr) = (r[1].rmse, r[2].rmse, r[3].rmse, r[4].rmse, r[5].rmse);
            ce <= anova && cmim <= anova && anova <= disr.max(mrmr)
        })
        .collect();
    let count = ordered.iter().filter(|&&o| o).count();
    let failing: Vec<String> = ordered
        .iter()
        .enumerate()
        .filter(|(_, &o)| !o)
        .map(|(s, _)| s.to_string())
        .collect();
    let mut out = Outcome::new(
        count >= 15,
        format!(
            "CE, CMIM <= ANOVA <= max(DISR, mRMR) in {count}/20 seeds (need 15); failing seeds: [{}]",
            failing.join(", ")
        ),
    );
    out.files = runs
        .iter()
        .enumerate()
        .map(|(s, r)| (format!("ordering_seed{s}.csv"), rmse_file(r)))
        .collect();
    out
}

fn criterion_aggregation() -> Outcome {
    let p = |v: Vec<f64>| SelectionDistribution::new(v).unwrap();
    // q = (100, 300) / 400 = (0.25, 0.75)
    let two = aggregate_distributions(&[(p(vec![1.0, 0.0, 0.5]), 100), (p(vec![0.0, 1.0, 0.5]), 300)]).unwrap();
    // q = (1, 1, 2) / 4; dyadic inputs keep every product exact
    let three = aggregate_distributions(&[
        (p(vec![0.25, 0.75]), 10),
        (p(vec![0.75, 0.25]), 10),
        (p(vec![1.0, 0.0]), 20),
    ])
    .unwrap();
    let hand_ok = two.probs() == [0.25, 0.75, 0.5] && three.probs() == [0.75, 0.25];

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut convex_fail = 0;
    for _ in 0..1000 {
        let m = rng.random_range(1..=12usize);
        let l = rng.random_range(1..=10usize);
        let locals: Vec<(SelectionDistribution, usize)> = (0..l)
            .map(|_| (p((0..m).map(|_| rng.random()).collect()), rng.random_range(1..=5000usize)))
            .collect();
        let g = aggregate_distributions(&locals).unwrap();
        let convex = (0..m).all(|j| {
            let lo = locals.iter().map(|(d, _)| d.probs()[j]).fold(f64::INFINITY, f64::min);
            let hi = locals.iter().map(|(d, _)| d.probs()[j]).fold(f64::NEG_INFINITY, f64::max);
            let v = g.probs()[j];
            (0.0..=1.0).contains(&v) && v >= lo - 1e-15 && v <= hi + 1e-15
        });
        if !convex {
            convex_fail += 1;
        }
    }
    Outcome::new(
        hand_ok && convex_fail == 0,
        format!(
            "hand examples {}; {}/1000 random cases within the componentwise hull of the inputs",
            if hand_ok { "exact" } else { "MISMATCH" },
            1000 - convex_fail
        ),
    )
}

fn experiment_data(seed: u64, cfg: &FederationConfig) -> ExperimentData {
    let trace = generate_synthetic_trace(&SynthConfig::default(), 8000.0, seed).unwrap();
    let rows = extract_features(&trace, 1.0, Service::YouTube).unwrap();
    ExperimentData::from_rows(&rows, cfg).unwrap()
}

fn report_files(tag: &str, report: &ExperimentReport) -> Vec<(String, Vec<u8>)> {
    let (mut json, mut csv) = (Vec::new(), Vec::new());
    report.write_json(&mut json).unwrap();
    report.write_round_csv(&mut csv).unwrap();
    vec![(format!("{tag}.json"), json), (format!("{tag}.csv"), csv)]
}

fn criterion_traffic() -> Outcome {
    let cfg = FederationConfig::default();
    let data = experiment_data(cfg.seed, &cfg);
    let reports: Vec<ExperimentReport> = [Mode::Cr, Mode::Fr, Mode::Rfr]
        .into_par_iter()
        .map(|mode| run_experiment(&data, &cfg, mode).unwrap())
        .collect();
    let per_round = |r: &ExperimentReport| r.totals.traffic_mb.total();
    let cumulative = |r: &ExperimentReport| r.totals.traffic_mb_cumulative.total();
    let (cr, fr, rfr) = (&reports[0], &reports[1], &reports[2]);
    let ordered = per_round(rfr) < per_round(fr) && per_round(fr) < per_round(cr);
    let ratio = per_round(cr) / per_round(fr);
    let bytes = rfr.total_bytes();
    let split_ok = bytes.feature_selection > 0
        && bytes.federation > 0
        && rfr.rounds.iter().all(|r| {
            let t = r.traffic();
            t.total() == t.federation + t.feature_selection
        })
        && bytes.total() == bytes.federation + bytes.feature_selection;
    let mut out = Outcome::new(
        ordered && ratio > 5.0 && split_ok,
        format!(
            "average traffic per round RFR {:.4} < FR {:.4} < CR {:.4} MB: {ordered}; CR/FR = {ratio:.1} (need > 5); \
             RFR split federation {} + feature selection {} = {} bytes: {split_ok}; \
             cumulative RFR {:.4}, FR {:.4}, CR {:.4} MB over {}/{}/{} rounds",
            per_round(rfr),
            per_round(fr),
            per_round(cr),
            bytes.federation,
            bytes.feature_selection,
            bytes.total(),
            cumulative(rfr),
            cumulative(fr),
            cumulative(cr),
            rfr.totals.rounds_run,
            fr.totals.rounds_run,
            cr.totals.rounds_run,
        ),
    );
    for (tag, r) in ["cr", "fr", "rfr"].iter().zip(&reports) {
        out.files.extend(report_files(&format!("traffic_{tag}"), r));
    }
    out
}

fn criterion_convergence() -> Outcome {
    let runs: Vec<[ExperimentReport; 3]> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let cfg = FederationConfig {
                seed,
                ..FederationConfig::default()
            };
            let data = experiment_data(seed, &cfg);
            [Mode::Cr, Mode::Fr, Mode::Rfr].map(|mode| run_experiment(&data, &cfg, mode).unwrap())
        })
        .collect();
    let converged = |i: usize| runs.iter().filter(|r| r[i].totals.conv_rounds.federation.is_some()).count();
    let (fr_conv, rfr_conv) = (converged(1), converged(2));
    let max_rounds = |i: usize| runs.iter().map(|r| r[i].totals.rounds_run).max().unwrap_or(0);
    let ordered = runs
        .iter()
        .filter(|r| r[0].totals.rmse <= r[1].totals.rmse && r[1].totals.rmse <= r[2].totals.rmse)
        .count();
    let mean = |i: usize| runs.iter().map(|r| r[i].totals.rmse).sum::<f64>() / runs.len() as f64;
    let mut out = Outcome::new(
        fr_conv == 20 && rfr_conv == 20 && ordered >= 15,
        format!(
            "converged within 50 rounds: FR {fr_conv}/20 (max {} rounds), RFR {rfr_conv}/20 (max {} rounds); \
             RMSE CR <= FR <= RFR in {ordered}/20 seeds (need 15); mean RMSE CR {:.4}, FR {:.4}, RFR {:.4}",
            max_rounds(1),
            max_rounds(2),
            mean(0),
            mean(1),
            mean(2)
        ),
    );
    for (s, r) in runs.iter().enumerate() {
        for (tag, rep) in ["cr", "fr", "rfr"].iter().zip(r) {
            out.files.extend(report_files(&format!("convergence_seed{s}_{tag}"), rep));
        }
    }
    out
}

fn write_files(dir: &Path, files: &[(String, Vec<u8>)]) {
    std::fs::create_dir_all(dir).unwrap();
    for (name, bytes) in files {
        std::fs::write(dir.join(name), bytes).unwrap();
    }
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            id: 1,
            name: "MI estimator matches the brute-force oracle",
            budget: Duration::from_secs(10),
            run: criterion_mi_oracle,
        },
        Criterion {
            id: 2,
            name: "analytic gradients match central differences",
            budget: Duration::from_secs(5),
            run: criterion_gradients,
        },
        Criterion {
            id: 3,
            name: "CE recovers the planted subset",
            budget: Duration::from_secs(60),
            run: criterion_ce_recovery,
        },
        Criterion {
            id: 4,
            name: "CE subset RMSE within 5% of all features",
            budget: Duration::from_secs(120),
            run: criterion_degradation,
        },
        Criterion {
            id: 5,
            name: "selector RMSE ordering",
            budget: Duration::from_secs(300),
            run: criterion_ordering,
        },
        Criterion {
            id: 6,
            name: "federated aggregation is exact and convex",
            budget: Duration::from_secs(60),
            run: criterion_aggregation,
        },
        Criterion {
            id: 7,
            name: "protocol traffic ordering",
            budget: Duration::from_secs(300),
            run: criterion_traffic,
        },
        Criterion {
            id: 8,
            name: "federation convergence and RMSE ordering",
            budget: Duration::from_secs(900),
            run: criterion_convergence,
        },
    ];

    let root = tempfile::tempdir().expect("temporary directory");
    let mut failures = 0;
    let mut first_files = Vec::new();
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let in_time = elapsed <= c.budget;
        let pass = outcome.pass && in_time;
        failures += usize::from(!pass);
        println!(
            "criterion {}: {} - {} | {} | {:.1}s (budget {}s)",
            c.id,
            if pass { "PASS" } else { "FAIL" },
            c.name,
            outcome.detail,
            elapsed.as_secs_f64(),
            c.budget.as_secs()
        );
        write_files(&root.path().join("first"), &outcome.files);
        first_files.extend(outcome.files.into_iter().map(|(name, _)| name));
    }

    let start = Instant::now();
    for c in &criteria {
        write_files(&root.path().join("second"), &(c.run)().files);
    }
    let differing: Vec<&String> = first_files
        .iter()
        .filter(|name| {
            std::fs::read(root.path().join("first").join(name)).ok()
                != std::fs::read(root.path().join("second").join(name)).ok()
        })
        .collect();
    let pass = differing.is_empty() && !first_files.is_empty();
    failures += usize::from(!pass);
    println!(
        "criterion 9: {} - repeated runs write identical reports | {} report files compared, {} differ{} | {:.1}s",
        if pass { "PASS" } else { "FAIL" },
        first_files.len(),
        differing.len(),
        if differing.is_empty() { String::new() } else { format!(": {differing:?}") },
        start.elapsed().as_secs_f64()
    );

    if failures == 0 {
        println!("acceptance: all 9 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria fail");
        ExitCode::FAILURE
    }
}
