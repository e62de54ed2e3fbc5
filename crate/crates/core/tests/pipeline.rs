//! Trace to federation, through the public library API.

use quicfed::federation::{run_experiment, ExperimentData, Federation, FederationConfig, Mode};
use quicfed::traffic::{extract_features, generate_synthetic_trace, FeatureRow, Service, SynthConfig};

fn rows(seed: u64) -> Vec<FeatureRow> {
    let trace = generate_synthetic_trace(&SynthConfig::default(), 1500.0, seed).unwrap();
    extract_features(&trace, 1.0, Service::YouTube).unwrap()
}

fn config(seed: u64) -> FederationConfig {
    FederationConfig {
        num_gateways: 4,
        pretrain_epochs: 30,
        local_epochs: 5,
        max_rounds: 10,
        seed,
        ..FederationConfig::default()
    }
}

#[test]
fn partitions_cover_every_row_once() {
    let rows = rows(1);
    let cfg = config(1);
    let data = ExperimentData::from_rows(&rows, &cfg).unwrap();
    let gateway_rows: usize = data.gateway_rows.iter().map(|g| g.n_rows()).sum();
    assert_eq!(data.test_x.n_rows() + data.labeled_x.n_rows() + gateway_rows, rows.len());
    assert_eq!(data.test_x.n_rows(), (0.2 * rows.len() as f64).round() as usize);
    assert_eq!(data.gateway_rows.len(), 4);
}

#[test]
fn rfr_gateways_share_the_broadcast_mask() {
    let cfg = config(2);
    let data = ExperimentData::from_rows(&rows(2), &cfg).unwrap();
    let mut fed = Federation::step0_pretrain(&data, &cfg).unwrap();
    for _ in 0..3 {
        let report = fed.run_round(Mode::Rfr).unwrap();
        assert!(report.uplink_bytes.feature_selection > 0);
        for g in &fed.gateways {
            assert_eq!(g.mask, fed.server.mask);
            assert_eq!(g.global, fed.server.global);
            let local = g.local.as_ref().unwrap();
            assert_eq!(local.params.m_in(), fed.server.active_columns().len());
        }
    }
}

#[test]
fn every_mode_reports_consistent_totals() {
    let cfg = config(3);
    let data = ExperimentData::from_rows(&rows(3), &cfg).unwrap();
    for mode in [Mode::Cr, Mode::Fr, Mode::Rfr] {
        let report = run_experiment(&data, &cfg, mode).unwrap();
        let bytes = report.total_bytes();
        let mb = report.totals.traffic_mb_cumulative;
        assert_eq!(mb.federation, bytes.federation as f64 / 1e6);
        assert_eq!(mb.feature_selection, bytes.feature_selection as f64 / 1e6);
        assert_eq!(report.totals.rounds_run, report.rounds.len());
        assert!(report.rounds.len() <= cfg.max_rounds);
        assert!(report.totals.rmse.is_finite());
        assert_eq!(mode == Mode::Rfr, bytes.feature_selection > 0);
        for (i, r) in report.rounds.iter().enumerate() {
            assert_eq!(r.round, i + 1);
            assert!(r.weight_delta.is_none_or(|d| d >= 0.0));
        }
        if let Some(k) = report.totals.conv_rounds.federation {
            assert_eq!(k, report.rounds.len());
            assert!(report.rounds[k - 1].converged);
        }
    }
}
