// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;

use proptest::prelude::*;
use upf_telemetry::sim::{
    self, generate_traffic, inject_all, inject_anomaly, label_windows, presets, run_queues,
    AnomalyEvent, AnomalyKind, DropReason, Effect, FlowSpec, MeterSpec, PacketSize, QfiMap,
    QueueSpec, ScenarioSpec, Scope, TelemetrySpec, TrafficProfile,
};
use upf_telemetry::types::{Color, FlowKey, PacketEvent};

fn flow(teid: u32, qfi: u8, rate_pps: f64, profile: TrafficProfile, bytes: u32) -> FlowSpec {
    FlowSpec {
        teid,
        qfi,
        app: "test".into(),
        rate_pps,
        profile,
        size: PacketSize::Fixed { bytes },
        meter: None,
    }
}

fn queue(qid: u16, tier: u8, weight: u32) -> QueueSpec {
    QueueSpec {
        qid,
        tier,
        weight,
        rate_bps: 0,
        buffer_pkts: 100_000,
    }
}

fn scenario(
    flows: Vec<FlowSpec>,
    qfi_map: Vec<QfiMap>,
    queues: Vec<QueueSpec>,
    duration_s: u64,
    port_rate_bps: u64,
) -> ScenarioSpec {
    ScenarioSpec {
        name: "t".into(),
        duration_s,
        seed: 42,
        port_rate_bps,
        flows,
        qfi_map,
        queues,
        anomalies: vec![],
        telemetry: TelemetrySpec::default(),
    }
}

fn one_flow(rate: f64, profile: TrafficProfile) -> ScenarioSpec {
    scenario(
        vec![flow(1, 1, rate, profile, 200)],
        vec![QfiMap { qfi: 1, qid: 0 }],
        vec![queue(0, 0, 1500)],
        1,
        1_000_000_000,
    )
}

#[test]
fn cbr_flow_is_evenly_spaced() {
    let spec = one_flow(1000.0, TrafficProfile::Cbr { jitter: 0.0 });
    let ev = generate_traffic(&spec).unwrap();
    assert_eq!(ev.len(), 1000);
    assert!(ev
        .windows(2)
        .all(|w| w[1].arrival_ns - w[0].arrival_ns == 1_000_000));
}

#[test]
fn generation_is_deterministic_and_seed_sensitive() {
    let spec = presets::preset("congestion", 3).unwrap();
    let short = ScenarioSpec {
        duration_s: 5,
        anomalies: vec![],
        ..spec
    };
    let a = generate_traffic(&short).unwrap();
    let b = generate_traffic(&short).unwrap();
    assert_eq!(a, b);
    let c = generate_traffic(&ScenarioSpec { seed: 4, ..short }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn aggregate_count_matches_sum_of_rates() {
    // 900 Poisson flows, 10^6 pps in total, 10 s: 10^7 events, sd ~ 3162
    let flows = (0..900)
        .map(|i| {
            flow(
                i / 9,
                1 + (i % 9) as u8,
                1e6 / 900.0,
                TrafficProfile::Poisson,
                64,
            )
        })
        .collect();
    let qfi_map = (1..=9)
        .map(|q| QfiMap {
            qfi: q,
            qid: (q - 1) as u16 % 8,
        })
        .collect();
    let queues = (0..8).map(|q| queue(q, 0, 1500)).collect();
    let spec = scenario(flows, qfi_map, queues, 10, 10_000_000_000);
    let n = generate_traffic(&spec).unwrap().len() as f64;
    assert!((n - 1e7).abs() < 5.0 * 3163.0, "{n}");
}

#[test]
fn arrivals_are_strictly_increasing_per_flow() {
    let spec = ScenarioSpec {
        duration_s: 20,
        anomalies: vec![],
        ..presets::preset("mixed", 1).unwrap()
    };
    let ev = generate_traffic(&spec).unwrap();
    let mut last: HashMap<FlowKey, u64> = HashMap::new();
    for e in &ev {
        if let Some(p) = last.insert(e.key, e.arrival_ns) {
            assert!(e.arrival_ns > p);
        }
    }
    assert!(ev.windows(2).all(|w| w[0].arrival_ns <= w[1].arrival_ns));
}

#[test]
fn overload_is_rejected() {
    let spec = scenario(
        vec![flow(1, 1, 1e6, TrafficProfile::Poisson, 1500)],
        vec![QfiMap { qfi: 1, qid: 0 }],
        vec![queue(0, 0, 1500)],
        1,
        1_000_000,
    );
    assert!(generate_traffic(&spec).is_err());
}

#[test]
fn idle_queue_sojourn_is_serialization_only() {
    let mut spec = one_flow(100.0, TrafficProfile::Cbr { jitter: 0.0 });
    spec.flows[0].meter = Some(MeterSpec {
        cir_bps: 1_000_000,
        cbs_bytes: 10_000,
        pir_bps: 2_000_000,
        pbs_bytes: 20_000,
    });
    let out = run_queues(&generate_traffic(&spec).unwrap(), &spec).unwrap();
    assert_eq!(out.delivered.len(), 100);
    // 200 bytes at 1 Gb/s
    assert!(out
        .delivered
        .iter()
        .all(|e| e.sojourn_ns == 1_600 && e.color == Color::Green));
}

#[test]
fn equal_weights_share_a_saturated_tier_evenly() {
    let flows = vec![
        flow(1, 1, 100_000.0, TrafficProfile::Poisson, 1000),
        flow(2, 2, 100_000.0, TrafficProfile::Poisson, 1000),
    ];
    let spec = scenario(
        flows,
        vec![QfiMap { qfi: 1, qid: 0 }, QfiMap { qfi: 2, qid: 1 }],
        vec![queue(0, 0, 1500), queue(1, 0, 1500)],
        1,
        800_000_000,
    );
    let out = run_queues(&generate_traffic(&spec).unwrap(), &spec).unwrap();
    let mut bytes = [0u64; 2];
    for e in out
        .delivered
        .iter()
        .filter(|e| e.departure_ns() < 1_000_000_000)
    {
        bytes[e.qid as usize] += e.bytes as u64;
    }
    let share = bytes[0] as f64 / (bytes[0] + bytes[1]) as f64;
    assert!((share - 0.5).abs() < 0.05, "{share}");
}

#[test]
fn strict_priority_serves_the_top_tier_first() {
    let flows = vec![
        flow(1, 1, 50_000.0, TrafficProfile::Poisson, 1000),
        flow(2, 2, 100_000.0, TrafficProfile::Poisson, 1000),
    ];
    let spec = scenario(
        flows,
        vec![QfiMap { qfi: 1, qid: 0 }, QfiMap { qfi: 2, qid: 1 }],
        vec![queue(0, 0, 1500), queue(1, 1, 1500)],
        1,
        800_000_000,
    );
    let out = run_queues(&generate_traffic(&spec).unwrap(), &spec).unwrap();
    let mean = |q: u16| {
        let v: Vec<u64> = out
            .delivered
            .iter()
            .filter(|e| e.qid == q)
            .map(|e| e.sojourn_ns)
            .collect();
        v.iter().sum::<u64>() as f64 / v.len() as f64
    };
    assert!(mean(0) < 50_000.0 && mean(1) > 10.0 * mean(0));
}

#[test]
fn twice_peak_rate_loses_about_half_to_the_meter() {
    let mut spec = one_flow(1000.0, TrafficProfile::Cbr { jitter: 0.0 });
    spec.duration_s = 20;
    // 1000 pps * 200 B = 1.6 Mb/s offered, PIR 0.8 Mb/s
    spec.flows[0].meter = Some(MeterSpec {
        cir_bps: 400_000,
        cbs_bytes: 1_000,
        pir_bps: 800_000,
        pbs_bytes: 2_000,
    });
    let arrivals = generate_traffic(&spec).unwrap();
    let out = run_queues(&arrivals, &spec).unwrap();
    let red = out
        .drops
        .iter()
        .filter(|d| d.reason == DropReason::Meter)
        .count() as f64
        / arrivals.len() as f64;
    assert!((red - 0.5).abs() < 0.02, "{red}");
    assert!(out.delivered.iter().any(|e| e.color == Color::Yellow));
}

#[test]
fn all_zero_weights_in_a_tier_are_rejected() {
    let spec = scenario(
        vec![flow(1, 1, 10.0, TrafficProfile::Poisson, 100)],
        vec![QfiMap { qfi: 1, qid: 0 }],
        vec![queue(0, 0, 0), queue(1, 0, 0)],
        1,
        1_000_000,
    );
    assert!(run_queues(&[], &spec).is_err());
    assert!(spec.validate().is_err());
}

#[test]
fn conservation_and_fifo_per_queue() {
    let spec = presets::preset("congestion", 9).unwrap();
    let spec = ScenarioSpec {
        duration_s: 60,
        anomalies: vec![AnomalyEvent {
            effect: Effect::Congestion { factor: 3.0 },
            flows: vec![],
            qfis: vec![4],
            start_ms: 10_000,
            duration_ms: 30_000,
        }],
        ..spec
    };
    let arrivals = inject_all(generate_traffic(&spec).unwrap(), &spec).unwrap();
    let out = run_queues(&arrivals, &spec).unwrap();
    assert!(!out.drops.is_empty());
    let mut inn: HashMap<FlowKey, usize> = HashMap::new();
    let mut outn: HashMap<FlowKey, usize> = HashMap::new();
    for e in &arrivals {
        *inn.entry(e.key).or_default() += 1;
    }
    for e in &out.delivered {
        *outn.entry(e.key).or_default() += 1;
    }
    for d in &out.drops {
        *outn.entry(d.key).or_default() += 1;
    }
    assert_eq!(inn, outn);
    let mut last_dep: HashMap<u16, u64> = HashMap::new();
    for e in &out.delivered {
        let p = last_dep.insert(e.qid, e.departure_ns()).unwrap_or(0);
        assert!(e.departure_ns() > p, "queue {} reordered", e.qid);
    }
}

#[test]
fn fifty_ms_burst_injects_2500_packets() {
    let spec = presets::preset("microburst-50ms", 1).unwrap();
    let base = generate_traffic(&spec).unwrap();
    let burst = inject_all(base.clone(), &spec).unwrap();
    assert_eq!(burst.len() - base.len(), 2500);
}

#[test]
fn zero_duration_anomaly_changes_nothing() {
    let spec = presets::preset("microburst-50ms", 1).unwrap();
    let base = generate_traffic(&spec).unwrap();
    let ev = AnomalyEvent {
        duration_ms: 0,
        ..spec.anomalies[0].clone()
    };
    assert_eq!(inject_anomaly(base.clone(), &ev, &spec, 0).unwrap(), base);
}

fn rate_by<K: std::hash::Hash + Eq>(
    ev: &[PacketEvent],
    lo: u64,
    hi: u64,
    key: impl Fn(&PacketEvent) -> K,
) -> HashMap<K, usize> {
    let mut m = HashMap::new();
    for e in ev
        .iter()
        .filter(|e| e.arrival_ns >= lo && e.arrival_ns < hi)
    {
        *m.entry(key(e)).or_default() += 1;
    }
    m
}

#[test]
fn policy_abuse_moves_the_culprit_more_than_its_qfi() {
    let spec = presets::preset("policy-abuse", 2).unwrap();
    let ev = spec.anomalies[0].clone();
    let culprit = ev.flows[0];
    let spec = ScenarioSpec {
        duration_s: (ev.start_ms + ev.duration_ms) / 1000 + 1,
        anomalies: vec![ev.clone()],
        ..spec
    };
    let base = generate_traffic(&spec).unwrap();
    let abused = inject_all(base.clone(), &spec).unwrap();
    let (lo, hi) = (ev.start_ns(), ev.end_ns());
    let Effect::PolicyAbuse { remap_qfi, .. } = ev.effect else {
        unreachable!()
    };
    let teid_delta = rate_by(&abused, lo, hi, |e| e.key.teid())[&culprit.teid()] as f64
        - rate_by(&base, lo, hi, |e| e.key.teid())[&culprit.teid()] as f64;
    let q_base = rate_by(&base, lo, hi, |e| e.key.qfi());
    let q_abused = rate_by(&abused, lo, hi, |e| e.key.qfi());
    let qfi_delta =
        (q_abused[&remap_qfi] as f64 - q_base[&remap_qfi] as f64) / q_base[&remap_qfi] as f64;
    let teid_rel = teid_delta
        / rate_by(&base, lo, hi, |e| e.key)
            .get(&culprit)
            .copied()
            .unwrap_or(1) as f64;
    assert!(
        teid_rel > qfi_delta,
        "per-TEID change {teid_rel} vs QFI change {qfi_delta}"
    );
    assert!(abused
        .iter()
        .any(|e| e.key == culprit.with_qfi(remap_qfi).unwrap() && e.arrival_ns >= lo));
}

#[test]
fn labels_cover_overlapped_windows() {
    let mut spec = presets::preset("minimal", 1).unwrap();
    assert!(label_windows(&spec).is_empty());
    spec.duration_s = 20;
    let key = spec.flows[0].key();
    spec.anomalies = vec![AnomalyEvent {
        effect: Effect::Microburst { multiplier: 2.0 },
        flows: vec![key],
        qfis: vec![],
        start_ms: 10_000,
        duration_ms: 2_200,
    }];
    let windows: Vec<u64> = label_windows(&spec).iter().map(|l| l.window).collect();
    assert_eq!(windows, vec![10, 11, 12]);

    spec.anomalies.push(AnomalyEvent {
        effect: Effect::Congestion { factor: 2.0 },
        flows: vec![],
        qfis: vec![1],
        start_ms: 11_500,
        duration_ms: 100,
    });
    let in_11: Vec<_> = label_windows(&spec)
        .into_iter()
        .filter(|l| l.window == 11)
        .collect();
    assert_eq!(in_11.len(), 2);
    assert!(in_11
        .iter()
        .any(|l| l.kind == AnomalyKind::Congestion && l.scope == Scope::Qfi(1)));
}

#[test]
fn contention_bunches_target_arrivals() {
    let spec = presets::preset("contention", 5).unwrap();
    let ev = spec.anomalies[0].clone();
    let spec = ScenarioSpec {
        duration_s: (ev.start_ms + ev.duration_ms) / 1000 + 2,
        anomalies: vec![ev.clone()],
        ..spec
    };
    let base = generate_traffic(&spec).unwrap();
    let hit = inject_all(base.clone(), &spec).unwrap();
    assert_eq!(base.len(), hit.len());
    let target = ev.flows[0];
    let gaps = |s: &[PacketEvent]| -> Vec<u64> {
        let t: Vec<u64> = s
            .iter()
            .filter(|e| {
                e.key.teid() == target.teid()
                    && e.arrival_ns >= ev.start_ns()
                    && e.arrival_ns < ev.end_ns()
            })
            .map(|e| e.arrival_ns)
            .collect();
        t.windows(2).map(|w| w[1] - w[0]).collect()
    };
    let var = |g: &[u64]| {
        let m = g.iter().sum::<u64>() as f64 / g.len() as f64;
        g.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / g.len() as f64
    };
    assert!(var(&gaps(&hit)) > var(&gaps(&base)));
}

#[test]
fn scenario_toml_round_trips_and_reports_fields() {
    for name in presets::PRESETS {
        let spec = presets::preset(name, 11).unwrap();
        spec.validate().unwrap();
        let text = spec.to_toml_string();
        assert_eq!(ScenarioSpec::from_toml_str(&text).unwrap(), spec, "{name}");
    }
    let mut spec = presets::preset("minimal", 1).unwrap();
    spec.flows[0].rate_pps = -1.0;
    let err = ScenarioSpec::from_toml_str(&spec.to_toml_string())
        .unwrap_err()
        .to_string();
    assert!(err.contains("flows[0].rate_pps"), "{err}");
    assert!(ScenarioSpec::from_toml_str("name = 3").is_err());
}

#[test]
fn capture_round_trips() {
    let spec = presets::preset("minimal", 1).unwrap();
    let out = run_queues(&generate_traffic(&spec).unwrap(), &spec).unwrap();
    let mut buf = Vec::new();
    sim::capture::write_capture(&mut buf, &out).unwrap();
    let back = sim::capture::read_capture(buf.as_slice()).unwrap();
    assert_eq!(back.delivered, out.delivered);
    assert_eq!(back.queue_depth, out.queue_depth);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn sojourn_nonnegative_and_conserved(seed in 0u64..1000, rate in 1_000.0f64..60_000.0, buffer in 1usize..64) {
        let flows = vec![
            flow(1, 1, rate, TrafficProfile::Poisson, 1200),
            flow(2, 2, rate / 2.0, TrafficProfile::OnOff { on_ms: 5.0, off_ms: 5.0, jitter: 0.1 }, 600),
        ];
        let mut queues = vec![queue(0, 0, 1500), queue(1, 1, 1500)];
        queues[0].buffer_pkts = buffer;
        queues[1].rate_bps = 50_000_000;
        let mut spec = scenario(flows, vec![QfiMap { qfi: 1, qid: 0 }, QfiMap { qfi: 2, qid: 1 }], queues, 1, 200_000_000);
        spec.seed = seed;
        let arrivals = generate_traffic(&spec).unwrap();
        let out = run_queues(&arrivals, &spec).unwrap();
        prop_assert_eq!(out.delivered.len() + out.drops.len(), arrivals.len());
        prop_assert!(out.delivered.iter().all(|e| e.sojourn_ns > 0));
    }
}
