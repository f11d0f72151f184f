// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use upf_telemetry::analysis::*;
use upf_telemetry::baselines::{Mode, Observation, PmCollector, Postcard};
use upf_telemetry::binning::DiagnosticRegion;
use upf_telemetry::error::AnalysisError;
use upf_telemetry::sim::{AnomalyKind, GroundTruthLabel, Scope};
use upf_telemetry::sizing::FlowBaseline;
use upf_telemetry::sketch::{HistogramSketch, WindowExport};
use upf_telemetry::types::{Color, FlowKey, Nanos, PacketEvent, SketchConfig};

const US: Nanos = 1_000;
const LAT: [Nanos; 7] = [
    10 * US,
    20 * US,
    40 * US,
    80 * US,
    160 * US,
    320 * US,
    640 * US,
];
const IAT: [Nanos; 7] = [
    50 * US,
    100 * US,
    200 * US,
    400 * US,
    800 * US,
    1600 * US,
    3200 * US,
];

fn region() -> DiagnosticRegion {
    DiagnosticRegion::new(8, 2, 1).unwrap()
}

fn key(teid: u32, qfi: u8) -> FlowKey {
    FlowKey::new(teid, qfi).unwrap()
}

fn pkt(k: FlowKey, qid: u16, t: Nanos, sojourn: Nanos, color: Color) -> PacketEvent {
    PacketEvent {
        key: k,
        qid,
        bytes: 100 + (t % 700) as u32,
        arrival_ns: t,
        sojourn_ns: sojourn,
        color,
    }
}

fn random_stream(rng: &mut ChaCha8Rng, flows: u32, packets: usize) -> Vec<PacketEvent> {
    let mut t = 0;
    (0..packets)
        .map(|_| {
            t += rng.random_range(1..2_000);
            let k = key(rng.random_range(1..=flows), 1);
            let color = Color::ALL[rng.random_range(0..3)];
            pkt(k, 0, t, rng.random_range(1..1_000 * US), color)
        })
        .collect()
}

fn sketch_window(config: &SketchConfig, stream: &[PacketEvent]) -> WindowExport {
    let mut s =
        HistogramSketch::new(config.clone(), 0, LAT.to_vec(), IAT.to_vec(), region()).unwrap();
    for e in stream {
        s.update(e).unwrap();
    }
    s.export_window(0)
}

fn exact_window(stream: &[PacketEvent], with_delay: bool) -> ExactFlows {
    let mut ex = ExactFlows::new(8, [(0u16, LAT.to_vec(), IAT.to_vec())], with_delay);
    for e in stream {
        ex.observe_packet(e);
    }
    ex
}

fn postcards(stream: &[PacketEvent]) -> Vec<Postcard> {
    stream
        .iter()
        .map(|e| Postcard {
            window: 0,
            key: e.key,
            qid: e.qid,
            arrival_ns: e.arrival_ns,
            sojourn_ns: e.sojourn_ns,
            color: e.color,
            bytes: e.bytes,
        })
        .collect()
}

#[test]
fn collision_free_sketch_matches_full_postcards() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let stream = random_stream(&mut rng, 1, 5_000);
    let k = key(1, 1);
    let config = SketchConfig::new(64, 3, 8, 1, 7).unwrap();
    let exp = sketch_window(&config, &stream);
    let reg: BTreeSet<FlowKey> = [k].into();
    let sk = extract_sketch_features(0, &[exp], &config, &[(k, 0)], &reg, &region()).unwrap();
    let mut sampler = ExactFlows::new(8, [(0u16, LAT.to_vec(), IAT.to_vec())], true);
    let pc =
        extract_postcard_features(0, &postcards(&stream), &mut sampler, &reg, &region()).unwrap();
    assert_eq!(sk.len(), 1);
    assert_eq!(pc.len(), 1);
    for f in Feature::ALL {
        if f == Feature::MeanDelayUs {
            assert_eq!(sk[0].get(f), None);
            assert!(pc[0].get(f).is_some());
        } else {
            assert_eq!(sk[0].get(f), pc[0].get(f), "{f:?}");
        }
    }
    assert_eq!(sk[0].lat_frac, pc[0].lat_frac);
    assert_eq!(sk[0].iat_frac, pc[0].iat_frac);
}

#[test]
fn pm_vectors_are_qfi_scoped_with_absent_distributions() {
    let mut pm = PmCollector::new(1_000_000_000, [1, 2]);
    let e = pkt(key(5, 1), 0, 10, 30 * US, Color::Green);
    pm.observe(Observation::Packet(&e));
    let fv = extract_pm_features(&pm.close_window(0)).unwrap();
    assert_eq!(fv.len(), 2);
    for v in &fv {
        assert!(matches!(v.scope, Scope::Qfi(_)));
        for f in [
            Feature::LatTail,
            Feature::IatHead,
            Feature::DiagFrac,
            Feature::YellowFrac,
            Feature::TeidsPerQfi,
        ] {
            assert_eq!(v.get(f), None);
        }
        assert!(v.lat_frac.is_none() && v.iat_frac.is_none());
        assert!(v.to_csv(8).contains(",NA"));
    }
    assert_eq!(fv[0].get(Feature::MeanDelayUs), Some(30.0));
}

#[test]
fn sketch_masses_never_undercount_on_a_thousand_flows() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let stream = random_stream(&mut rng, 1000, 60_000);
    let config = SketchConfig::new(128, 3, 8, 1, 9).unwrap();
    let exp = sketch_window(&config, &stream);
    let truth = exact_window(&stream, false).take_window();
    let keys: Vec<(FlowKey, u16)> = truth.keys().map(|k| (*k, 0)).collect();
    let reg: BTreeSet<FlowKey> = truth.keys().copied().collect();
    let est = extract_sketch_features(0, &[exp], &config, &keys, &reg, &region()).unwrap();
    let r = region();
    for fv in &est {
        let Scope::Flow(k) = fv.scope else { panic!() };
        let t = &truth[&k];
        let pk = fv.get(Feature::Pkts).unwrap();
        assert!(pk >= t.pkts as f64);
        assert!(fv.get(Feature::Bytes).unwrap() >= t.bytes as f64);
        // the tail mass is additive and dominates truth; the tail fraction
        // may not, because its denominator is overestimated too
        let tail_mass = (fv.get(Feature::LatTail).unwrap() * pk).round();
        let true_tail: u64 = r.lat_tail_bins.iter().map(|&b| t.lat[b]).sum();
        assert!(tail_mass >= true_tail as f64);
        for f in [
            Feature::LatTail,
            Feature::IatHead,
            Feature::YellowFrac,
            Feature::RedFrac,
        ] {
            let v = fv.get(f).unwrap();
            assert!((0.0..=1.0).contains(&v), "{f:?} = {v}");
        }
        assert!(!fv.unregistered);
    }
}

#[test]
fn unknown_sketch_keys_are_estimated_and_flagged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let stream = random_stream(&mut rng, 10, 1_000);
    let config = SketchConfig::new(64, 3, 8, 1, 9).unwrap();
    let exp = sketch_window(&config, &stream);
    let ghost = key(999, 1);
    let out = extract_sketch_features(
        0,
        &[exp],
        &config,
        &[(ghost, 0)],
        &BTreeSet::new(),
        &region(),
    )
    .unwrap();
    assert_eq!(out.len(), 1);
    assert!(out[0].unregistered);
}

#[test]
fn extraction_is_deterministic_and_rejects_mixed_windows() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let stream = random_stream(&mut rng, 50, 5_000);
    let config = SketchConfig::new(64, 3, 8, 1, 9).unwrap();
    let keys: Vec<(FlowKey, u16)> = (1..=50).map(|t| (key(t, 1), 0)).collect();
    let reg = BTreeSet::new();
    let a = extract_sketch_features(
        0,
        &[sketch_window(&config, &stream)],
        &config,
        &keys,
        &reg,
        &region(),
    )
    .unwrap();
    let b = extract_sketch_features(
        0,
        &[sketch_window(&config, &stream)],
        &config,
        &keys,
        &reg,
        &region(),
    )
    .unwrap();
    assert_eq!(a, b);
    assert_eq!(
        extract_sketch_features(
            1,
            &[sketch_window(&config, &stream)],
            &config,
            &keys,
            &reg,
            &region()
        ),
        Err(AnalysisError::MixedWindows(1, 0))
    );
}

fn flow_fv(pkts: f64, diag: f64) -> FeatureVector {
    let mut ex = ExactFlows::new(8, [(0u16, LAT.to_vec(), IAT.to_vec())], false);
    ex.observe_packet(&pkt(key(1, 1), 0, 0, US, Color::Green));
    let reg: BTreeSet<FlowKey> = [key(1, 1)].into();
    let mut fv = extract_postcard_features(0, &[], &mut ex, &reg, &region())
        .unwrap()
        .remove(0);
    fv.values[Feature::Pkts as usize] = Some(pkts);
    fv.values[Feature::DiagFrac as usize] = if pkts > 0.0 { Some(diag / pkts) } else { None };
    fv
}

#[test]
fn lift_threshold_is_the_float_after_one_half() {
    assert_eq!(LIFT_THRESHOLD, f64::from_bits(0.5f64.to_bits() + 1));
}

#[test]
fn lift_rule_edge_cases() {
    let base = FlowBaseline::new(1000.0, 10.0, 500.0, 1e5);
    // eps = 0 and no lift: ratio equals the baseline maximum, no fire
    let out = diag_lift_detector(&flow_fv(1000.0, 10.0), &base, 0.0);
    assert!(!out.fired);
    assert!(out.score <= 0.5);
    // empty window
    let out = diag_lift_detector(&flow_fv(0.0, 0.0), &base, 0.01);
    assert_eq!((out.score, out.fired), (0.0, false));
    // just above the collision-inflated baseline
    let eps = std::f64::consts::E / 512.0;
    let m = base.max_baseline_ratio(eps);
    assert!(diag_lift_detector(&flow_fv(1000.0, m * 1000.0 + 1.0), &base, eps).fired);
    assert!(!diag_lift_detector(&flow_fv(1000.0, m * 1000.0 - 1.0), &base, eps).fired);
}

proptest! {
    #[test]
    fn lift_score_is_monotone_in_diagnostic_mass(pk in 1.0f64..1e5, a in 0.0f64..1.0, b in 0.0f64..1.0, xk in 1.0f64..1e4, xt in 0.0f64..100.0, nt in 0.0f64..1e4) {
        let base = FlowBaseline::new(xk, xt.min(xk), nt, 1e5);
        let (lo, hi) = (a.min(b) * pk, a.max(b) * pk);
        let s_lo = diag_lift_detector(&flow_fv(pk, lo), &base, 0.005);
        let s_hi = diag_lift_detector(&flow_fv(pk, hi), &base, 0.005);
        prop_assert!(s_hi.score >= s_lo.score);
        prop_assert_eq!(s_hi.fired, s_hi.score >= LIFT_THRESHOLD);
        prop_assert!((0.0..=1.0).contains(&s_hi.score));
    }

    #[test]
    fn blocked_folds_never_interleave(windows in proptest::collection::vec(0u64..200, 1..400), folds in 1usize..8) {
        let f = blocked_folds(&windows, folds);
        for fold in 0..folds {
            let test: Vec<u64> = windows.iter().zip(&f).filter(|(_, &k)| k == fold).map(|(w, _)| *w).collect();
            let train: BTreeSet<u64> = windows.iter().zip(&f).filter(|(_, &k)| k != fold).map(|(w, _)| *w).collect();
            prop_assert!(test.iter().all(|w| !train.contains(w)));
            if let (Some(lo), Some(hi)) = (test.iter().min(), test.iter().max()) {
                prop_assert!(train.iter().all(|w| w < lo || w > hi));
            }
        }
    }
}

#[test]
fn perfect_scorer_gives_unit_metrics() {
    let s: Vec<(f64, bool)> = (0..100).map(|i| (i as f64 / 100.0, i >= 90)).collect();
    assert_eq!(average_precision(&s), Some(1.0));
    assert_eq!(best_f1(&s).unwrap().0, 1.0);
}

#[test]
fn constant_scorer_gives_prevalence() {
    let s: Vec<(f64, bool)> = (0..200).map(|i| (0.3, i % 4 == 0)).collect();
    assert!((average_precision(&s).unwrap() - 0.25).abs() < 1e-12);
}

#[test]
fn step_interpolated_ap_hand_example() {
    let s = [(0.9, true), (0.8, false), (0.7, true)];
    assert!((average_precision(&s).unwrap() - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    assert_eq!(average_precision(&[(0.5, false)]), None);
    assert_eq!(best_f1(&[(0.5, false)]), None);
    assert_eq!(f1_at(&s, 0.75), 0.5);
    assert_eq!(best_f1(&s), Some((2.0 / 3.0, 0.9)));
    // alarming everywhere is not a candidate
    assert_eq!(
        best_f1(&[(0.2, true), (0.2, false)]),
        Some((0.0, f64::INFINITY))
    );
}

#[test]
fn shuffled_labels_give_prevalence_ap() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 2_000;
    let trials = 50;
    let mut mean = 0.0;
    for _ in 0..trials {
        let mut y: Vec<bool> = (0..n).map(|i| i < n / 5).collect();
        y.shuffle(&mut rng);
        let s: Vec<(f64, bool)> = y.iter().map(|&b| (rng.random::<f64>(), b)).collect();
        mean += average_precision(&s).unwrap() / trials as f64;
    }
    assert!((mean - 0.2).abs() < 0.02, "mean AP {mean}");
}

#[test]
fn ttfd_is_bounded_by_the_window_and_censors_misses() {
    let w = 1_000_000_000;
    let onset = 5_400_000_000;
    let d = time_to_detect(onset, onset + 50_000_000, w, |win| win == 5).unwrap();
    assert!(d <= w);
    assert_eq!(d, 600_000_000);
    assert_eq!(
        time_to_detect(onset, onset + 50_000_000, w, |win| win == 6),
        None
    );
    let s = summarize_ttfd(&[Some(3), None, Some(1), Some(2)]);
    assert_eq!((s.median_ns, s.detected, s.censored), (Some(2.0), 3, 1));
    let s = summarize_ttfd(&[Some(1), Some(4)]);
    assert_eq!(s.median_ns, Some(2.5));
}

#[test]
fn pareto_frontier() {
    let pts = [
        (1.0, Some(0.5)),
        (2.0, Some(0.4)),
        (3.0, Some(0.9)),
        (3.0, Some(0.8)),
        (0.5, None),
    ];
    assert_eq!(pareto_flags(&pts), [true, false, true, false, false]);
}

fn separable(n: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<bool>, Vec<u64>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    for i in 0..n {
        let pos = i % 7 == 0;
        let c = if pos { 3.0 } else { -3.0 };
        x.push(vec![
            c + rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ]);
        y.push(pos);
        w.push(i as u64 / 10);
    }
    (x, y, w)
}

#[test]
fn separable_features_give_perfect_held_out_f1() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (x, y, w) = separable(700, &mut rng);
    let s = cross_val_scores(&x, &y, &w, 5, 1.0);
    let scored: Vec<(f64, bool)> = s.into_iter().zip(y).collect();
    assert_eq!(best_f1(&scored).unwrap().0, 1.0);
    assert_eq!(average_precision(&scored), Some(1.0));
}

#[test]
fn logistic_weights_point_the_right_way() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (x, y, _) = separable(300, &mut rng);
    let m = LogisticModel::fit(&x, &y, 1.0).unwrap();
    assert!(m.weights()[0] > 0.0);
    assert!(m.score(&[3.0, 0.0]) > 0.9 && m.score(&[-3.0, 0.0]) < 0.1);
}

#[test]
fn single_class_training_names_the_missing_class() {
    let mut ex = ExactFlows::new(8, [(0u16, LAT.to_vec(), IAT.to_vec())], false);
    let stream: Vec<PacketEvent> = (0..10)
        .map(|i| pkt(key(1, 1), 0, i * 1000, US, Color::Green))
        .collect();
    let reg: BTreeSet<FlowKey> = [key(1, 1)].into();
    let fv = extract_postcard_features(0, &postcards(&stream), &mut ex, &reg, &region()).unwrap();
    let labels = LabelIndex::new(&[]);
    let err = train_detectors(
        &fv,
        &labels,
        &Baselines::default(),
        Mode::Dsmp,
        &[AnomalyKind::Congestion],
        1.0,
    )
    .unwrap_err();
    assert_eq!(
        err,
        AnalysisError::SingleClass {
            kind: "congestion".into(),
            missing: "positive"
        }
    );
    assert!(err.to_string().contains("positive"));
    assert_eq!(
        train_detectors(
            &fv,
            &labels,
            &Baselines::default(),
            Mode::Pm,
            &[AnomalyKind::Congestion],
            1.0
        )
        .unwrap_err(),
        AnalysisError::NoFeatures
    );
}

#[test]
fn labels_cover_flows_through_their_qfi() {
    let l = [GroundTruthLabel {
        window: 3,
        scope: Scope::Qfi(4),
        kind: AnomalyKind::Congestion,
        active: true,
    }];
    let ix = LabelIndex::new(&l);
    assert!(is_positive(
        &ix,
        3,
        Scope::Flow(key(9, 4)),
        AnomalyKind::Congestion
    ));
    assert!(!is_positive(
        &ix,
        3,
        Scope::Flow(key(9, 5)),
        AnomalyKind::Congestion
    ));
    assert!(!is_positive(&ix, 2, Scope::Qfi(4), AnomalyKind::Congestion));
    assert!(ix.unit_positive(3, 4, AnomalyKind::Congestion));
}

#[test]
fn external_scores_parse() {
    let text = "window,teid,qfi,score\n0,7,3,0.25\n1,,5,1.0\n";
    let s = read_external_scores(text.as_bytes()).unwrap();
    assert_eq!(s[&(0, Scope::Flow(key(7, 3)))], 0.25);
    assert_eq!(s[&(1, Scope::Qfi(5))], 1.0);
    assert!(read_external_scores("0,7,3,1.5\n".as_bytes()).is_err());
}

#[test]
fn lifts_use_log_ratio_for_volume() {
    let mut b = Baselines::default();
    let base = flow_fv(99.0, 0.0);
    b.observe(&base);
    let fv = flow_fv(199.0, 0.0);
    let row = b.lift_row(&fv, &[Feature::Pkts, Feature::MeanDelayUs]);
    assert!((row[0] - 2f64.ln()).abs() < 1e-12);
    assert_eq!(row[1], 0.0);
}
