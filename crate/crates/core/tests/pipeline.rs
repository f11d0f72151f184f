// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;

use proptest::prelude::*;
use upf_telemetry::analysis::DetectorKind;
use upf_telemetry::baselines::Mode;
use upf_telemetry::binning::Side;
use upf_telemetry::pipeline::{calibrate, fallback_edges, run, RunOptions, RunOutput};
use upf_telemetry::sim::{presets, AnomalyKind, Scope};
use upf_telemetry::sketch::bin_of;
use upf_telemetry::types::FlowKey;

fn burst_run(seed: u64, records: Option<&mut Vec<u8>>) -> RunOutput {
    let spec = presets::preset("microburst-50ms", seed).unwrap();
    run(&spec, &RunOptions::default(), records).unwrap()
}

#[test]
fn every_mode_reports_every_window() {
    let out = burst_run(1, None);
    assert_eq!(out.windows, 10);
    for mode in Mode::ALL {
        let windows: BTreeSet<u64> = out
            .features
            .iter()
            .filter(|f| f.mode == mode)
            .map(|f| f.window)
            .collect();
        assert_eq!(windows, (0..10).collect(), "{mode}");
    }
    let pm: Vec<_> = out.features.iter().filter(|f| f.mode == Mode::Pm).collect();
    assert!(pm.iter().all(|f| matches!(f.scope, Scope::Qfi(_))));
    assert_eq!(pm.len(), 10 * 2);
    let sketch_flows = out
        .features
        .iter()
        .filter(|f| f.mode == Mode::Sketch && f.window == 3)
        .count();
    assert_eq!(sketch_flows, 20);
}

#[test]
fn sketch_cost_is_fixed_by_shape() {
    let spec = presets::preset("microburst-50ms", 1).unwrap();
    let out = burst_run(1, None);
    let expect = 88 * spec.telemetry.width * spec.telemetry.depth * spec.qfi_map.len();
    let sketch: Vec<u64> = out
        .costs
        .iter()
        .filter(|c| c.mode == Mode::Sketch)
        .map(|c| c.bytes)
        .collect();
    assert_eq!(sketch.len(), 10);
    assert!(sketch.iter().all(|&b| b as usize == expect));
    let pm: Vec<u64> = out
        .costs
        .iter()
        .filter(|c| c.mode == Mode::Pm)
        .map(|c| c.bytes)
        .collect();
    assert!(pm.iter().all(|&b| b == 32 * 2));
}

#[test]
fn burst_is_labelled_on_its_flow_and_window() {
    let out = burst_run(1, None);
    let active: Vec<_> = out.labels.iter().filter(|l| l.active).collect();
    assert!(!active.is_empty());
    let key = FlowKey::new(1, 1).unwrap();
    assert!(active
        .iter()
        .all(|l| l.window == 5 && l.kind == AnomalyKind::Microburst));
    assert!(active.iter().any(|l| l.scope == Scope::Flow(key)));
}

#[test]
fn runs_repeat_exactly_and_depend_on_the_seed() {
    let (mut ra, mut rb, mut rc) = (Vec::new(), Vec::new(), Vec::new());
    let a = burst_run(3, Some(&mut ra));
    let b = burst_run(3, Some(&mut rb));
    let c = burst_run(4, Some(&mut rc));
    assert!(!ra.is_empty());
    assert_eq!(ra, rb);
    assert_ne!(ra, rc);
    let csv = |o: &RunOutput| o.features.iter().map(|f| f.to_csv(8)).collect::<Vec<_>>();
    assert_eq!(csv(&a), csv(&b));
    assert_eq!(a.metrics, b.metrics);
    assert_ne!(csv(&a), csv(&c));
}

#[test]
fn quiet_scenario_has_no_defined_auprc() {
    let spec = presets::preset("minimal", 1).unwrap();
    let out = run(&spec, &RunOptions::default(), None::<&mut Vec<u8>>).unwrap();
    assert!(out.labels.iter().all(|l| !l.active));
    assert!(out
        .metrics
        .iter()
        .all(|r| r.auprc.is_none() && r.positives == 0));
    let modes: BTreeSet<Mode> = out.metrics.iter().map(|r| r.mode).collect();
    assert_eq!(modes.len(), 3);
    assert!(out
        .metrics
        .iter()
        .any(|r| r.mode == Mode::Sketch && r.detector == Some(DetectorKind::DiagLift)));
}

#[test]
fn calibration_covers_every_queue_and_flow() {
    let spec = presets::preset("microburst-50ms", 1).unwrap();
    let cal = calibrate(&spec).unwrap();
    assert_eq!(cal.n_t.len(), 2);
    assert_eq!(cal.n_prime.len(), 2);
    assert!(cal.n_prime.iter().all(|&n| n > 0.0));
    assert_eq!(cal.flows.len(), 20);
    let k = cal.flows[&FlowKey::new(1, 1).unwrap()];
    assert!((k.x_k - 1000.0).abs() < 20.0, "{k:?}");
    for qid in 0..2 {
        assert_eq!(cal.edges.lat[qid].len(), 7);
        assert!(cal.edges.iat[qid].windows(2).all(|w| w[0] < w[1]));
    }
}

proptest! {
    #[test]
    fn fallback_edges_keep_the_constant_out_of_the_region(v in 0u64..10_000_000, bins in 2usize..16) {
        for side in [Side::Tail, Side::Head] {
            let e = fallback_edges(v, bins, side);
            prop_assert_eq!(e.len(), bins - 1);
            prop_assert!(e[0] >= 1);
            prop_assert!(e.windows(2).all(|w| w[0] < w[1]));
            let b = bin_of(v.max(1), &e);
            match side {
                Side::Tail => prop_assert_eq!(b, 0),
                Side::Head => prop_assert!(b >= 1),
            }
        }
    }
}
