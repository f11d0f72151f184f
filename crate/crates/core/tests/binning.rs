// SPDX-License-Identifier: Apache-2.0

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use upf_telemetry::binning::*;
use upf_telemetry::error::BinningError;
use upf_telemetry::sketch::bin_of;
use upf_telemetry::types::*;

fn lognormal(n: usize, seed: u64, scale: f64) -> Vec<Nanos> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = LogNormal::new(11.0, 0.8).unwrap();
    (0..n)
        .map(|_| (d.sample(&mut rng) * scale) as Nanos)
        .collect()
}

fn occupancy_above(samples: &[Nanos], boundary: Nanos) -> f64 {
    samples.iter().filter(|&&x| x >= boundary).count() as f64 / samples.len() as f64
}

#[test]
fn region_shape() {
    let r = DiagnosticRegion::new(8, 2, 1).unwrap();
    assert_eq!(r.lat_tail_bins, vec![6, 7]);
    assert_eq!(r.iat_head_bins, vec![0]);
    assert_eq!(r.k_bins(), 3);
    assert!(DiagnosticRegion::new(8, 0, 0).is_err());
    assert!(DiagnosticRegion::new(4, 4, 1).is_err());
}

#[test]
fn target_occupancy_on_a_million_samples() {
    let samples = lognormal(1_000_000, 1, 1.0);
    let cfg = BinningConfig {
        fit_samples: 0,
        ..Default::default()
    };
    let fit = fit_edges(&samples, &cfg, 2, Side::Tail).unwrap();
    let boundary = fit.edges[bin_boundary_index(&cfg, 2)];
    let n_t = samples.iter().filter(|&&x| x >= boundary).count();
    // N_T^max = rho * N = 10^4 up to ties at the quantile
    assert!((n_t as i64 - 10_000).abs() <= 2, "{n_t}");
}

fn bin_boundary_index(cfg: &BinningConfig, region: usize) -> usize {
    cfg.bins - 1 - region
}

#[test]
fn refit_at_two_percent_keeps_occupancy() {
    let samples = lognormal(200_000, 2, 1.0);
    let cfg = BinningConfig {
        rho: 0.02,
        ..Default::default()
    };
    let fit = fit_edges(&samples, &cfg, 2, Side::Tail).unwrap();
    let occ = occupancy_above(&samples, fit.edges[bin_boundary_index(&cfg, 2)]);
    assert!((occ - 0.02).abs() <= 0.002, "{occ}");
    let head = fit_edges(&samples, &cfg, 1, Side::Head).unwrap();
    let below =
        samples.iter().filter(|&&x| x < head.edges[0]).count() as f64 / samples.len() as f64;
    assert!((below - 0.02).abs() <= 0.002, "{below}");
    assert_eq!(head.diag_bins, vec![0]);
}

#[test]
fn every_strategy_gives_strictly_increasing_total_edges() {
    let samples = lognormal(50_000, 3, 1.0);
    for strategy in BinningStrategy::ALL {
        for side in [Side::Tail, Side::Head] {
            let cfg = BinningConfig {
                strategy,
                ..Default::default()
            };
            let fit = fit_edges(&samples, &cfg, 2, side).unwrap();
            assert_eq!(fit.edges.len(), 7, "{strategy:?}");
            assert!(
                fit.edges.windows(2).all(|w| w[0] < w[1]),
                "{strategy:?} {side:?} {:?}",
                fit.edges
            );
            for &x in samples.iter().take(1000) {
                assert!(bin_of(x, &fit.edges) < 8);
            }
        }
    }
}

#[test]
fn p90_anchors() {
    let samples: Vec<Nanos> = (1..=100_000).collect();
    let cfg = BinningConfig {
        strategy: BinningStrategy::P90Log,
        ..Default::default()
    };
    let fit = fit_edges(&samples, &cfg, 2, Side::Tail).unwrap();
    assert_eq!(fit.edges[5], 90_001);
    assert_eq!(fit.edges[6], 99_801);
}

#[test]
fn quantile_edges_are_equal_frequency() {
    let samples: Vec<Nanos> = (0..8000).collect();
    let cfg = BinningConfig {
        strategy: BinningStrategy::Quantile,
        ..Default::default()
    };
    let fit = fit_edges(&samples, &cfg, 2, Side::Tail).unwrap();
    assert_eq!(fit.edges, vec![1000, 2000, 3000, 4000, 5000, 6000, 7000]);
}

#[test]
fn identical_samples_are_degenerate() {
    let samples = vec![4_000; 1000];
    let cfg = BinningConfig {
        strategy: BinningStrategy::Quantile,
        ..Default::default()
    };
    assert!(matches!(
        fit_edges(&samples, &cfg, 2, Side::Tail),
        Err(BinningError::Degenerate { .. })
    ));
    let mut two = vec![4_000; 1000];
    two.push(5_000);
    match fit_edges(&two, &cfg, 2, Side::Tail) {
        Err(BinningError::Degenerate { duplicated }) => assert!(!duplicated.is_empty()),
        other => panic!("{other:?}"),
    }
    assert_eq!(
        fit_edges(&[], &cfg, 2, Side::Tail),
        Err(BinningError::Empty)
    );
}

#[test]
fn ties_at_the_quantile_do_not_blow_the_cap() {
    // 97% of packets see the bare serialization delay
    let mut samples = vec![8_000; 9_700];
    samples.extend((0..300).map(|i| 9_000 + i * 10));
    let cfg = BinningConfig {
        rho: 0.05,
        ..Default::default()
    };
    let fit = fit_edges(&samples, &cfg, 2, Side::Tail).unwrap();
    assert!(occupancy_above(&samples, fit.edges[5]) <= 0.05);
}

#[test]
fn occupancy_examples() {
    let t = WindowTotals {
        n_total: 1_000_000,
        n_diag: 10_000,
    };
    assert!((diagnostic_occupancy(&t) - 0.01).abs() < 1e-15);
    assert_eq!(
        diagnostic_occupancy(&WindowTotals {
            n_total: 0,
            n_diag: 0
        }),
        0.0
    );
}

#[test]
fn drift_raises_occupancy_and_triggers() {
    let base = lognormal(100_000, 4, 1.0);
    let cfg = BinningConfig::default();
    let fit = fit_edges(&base, &cfg, 2, Side::Tail).unwrap();
    let boundary = fit.edges[bin_boundary_index(&cfg, 2)];
    let drifted = lognormal(100_000, 5, 2.0);
    let occ = occupancy_above(&drifted, boundary);
    assert!(occ > cfg.rho, "{occ}");
    let mut mon = DriftMonitor::default();
    for _ in 0..5 {
        mon.observe(&WindowTotals {
            n_total: drifted.len() as u64,
            n_diag: (occ * drifted.len() as f64) as u64,
        });
    }
    assert_eq!(mon.decide(&cfg, true), RebinDecision::Rebin);
    assert_eq!(mon.decide(&cfg, false), RebinDecision::NoRebin);
}

#[test]
fn rebin_decisions() {
    let cfg = BinningConfig::default();
    assert_eq!(
        maybe_rebin(&[0.012, 0.015, 0.02, 0.001, 0.016], &cfg, true),
        RebinDecision::Rebin
    );
    assert_eq!(
        maybe_rebin(&[0.012, 0.015, 0.02, 0.001, 0.016], &cfg, false),
        RebinDecision::NoRebin
    );
    assert_eq!(
        maybe_rebin(&[0.009, 0.009, 0.009], &cfg, true),
        RebinDecision::NoRebin
    );
    // only the last five windows count
    assert_eq!(
        maybe_rebin(&[0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0], &cfg, true),
        RebinDecision::NoRebin
    );
    assert_eq!(maybe_rebin(&[], &cfg, true), RebinDecision::NoRebin);
}
