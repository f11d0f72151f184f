// SPDX-License-Identifier: Apache-2.0

//! Built-in desk-scale scenarios.
//!
//! Traffic rates, burst factors and backhaul parameters are knobs chosen to
//! reproduce each anomaly's qualitative signature at a few thousand packets
//! per second; anomaly durations and spacing follow the published ranges.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::anomaly::draw_ms;
use super::scenario::{
    AnomalyEvent, Effect, FlowSpec, MeterSpec, PacketSize, QfiMap, QueueSpec, ScenarioSpec,
    TelemetrySpec, TrafficProfile,
};
use super::{sub_rng, STREAM_PRESET};
use crate::types::FlowKey;

pub const PRESETS: [&str; 8] = [
    "minimal",
    "microburst",
    "congestion",
    "contention",
    "policy-abuse",
    "mixed",
    "microburst-50ms",
    "burst-heavy",
];

/// Look up a preset by name.
pub fn preset(name: &str, seed: u64) -> Option<ScenarioSpec> {
    Some(match name {
        "minimal" => minimal(seed),
        "microburst" => single(name, seed, 300, &[Kind::Microburst]),
        "congestion" => single(name, seed, 600, &[Kind::Congestion]),
        "contention" => single(name, seed, 600, &[Kind::Contention]),
        "policy-abuse" => single(name, seed, 900, &[Kind::PolicyAbuse]),
        "mixed" => single(
            name,
            seed,
            900,
            &[
                Kind::Microburst,
                Kind::Congestion,
                Kind::Contention,
                Kind::PolicyAbuse,
            ],
        ),
        "microburst-50ms" => microburst_50ms(seed),
        "burst-heavy" => burst_heavy(seed),
        _ => return None,
    })
}

fn minimal(seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        name: "minimal".into(),
        duration_s: 5,
        seed,
        port_rate_bps: 100_000_000,
        flows: vec![FlowSpec {
            teid: 1,
            qfi: 1,
            app: "voip".into(),
            rate_pps: 100.0,
            profile: TrafficProfile::Cbr { jitter: 0.05 },
            size: PacketSize::Fixed { bytes: 200 },
            meter: None,
        }],
        qfi_map: vec![QfiMap { qfi: 1, qid: 0 }],
        queues: vec![QueueSpec {
            qid: 0,
            tier: 0,
            weight: 1500,
            rate_bps: 0,
            buffer_pkts: 256,
        }],
        anomalies: vec![],
        telemetry: TelemetrySpec {
            calibration_s: 3,
            folds: 2,
            ..TelemetrySpec::default()
        },
    }
}

/// Per-UE service mix: one flow per QFI.
struct App {
    qfi: u8,
    name: &'static str,
    rate_pps: f64,
    profile: TrafficProfile,
    size: PacketSize,
    metered: bool,
}

fn apps() -> Vec<App> {
    use PacketSize::*;
    use TrafficProfile::*;
    vec![
        App {
            qfi: 1,
            name: "voip",
            rate_pps: 50.0,
            profile: Cbr { jitter: 0.1 },
            size: Fixed { bytes: 160 },
            metered: true,
        },
        App {
            qfi: 2,
            name: "iot",
            rate_pps: 10.0,
            profile: Cbr { jitter: 0.2 },
            size: Fixed { bytes: 120 },
            metered: true,
        },
        App {
            qfi: 3,
            name: "cloud-gaming",
            rate_pps: 120.0,
            profile: OnOff {
                on_ms: 40.0,
                off_ms: 20.0,
                jitter: 0.1,
            },
            size: Uniform {
                min: 200,
                max: 1200,
            },
            metered: true,
        },
        App {
            qfi: 4,
            name: "live-streaming",
            rate_pps: 150.0,
            profile: OnOff {
                on_ms: 200.0,
                off_ms: 100.0,
                jitter: 0.1,
            },
            size: Uniform {
                min: 1000,
                max: 1400,
            },
            metered: false,
        },
        App {
            qfi: 5,
            name: "buffered-streaming",
            rate_pps: 150.0,
            profile: OnOff {
                on_ms: 500.0,
                off_ms: 1500.0,
                jitter: 0.05,
            },
            size: Fixed { bytes: 1400 },
            metered: false,
        },
        App {
            qfi: 6,
            name: "best-effort",
            rate_pps: 60.0,
            profile: Poisson,
            size: Uniform { min: 64, max: 1500 },
            metered: false,
        },
        App {
            qfi: 7,
            name: "bulk",
            rate_pps: 60.0,
            profile: Poisson,
            size: Fixed { bytes: 1400 },
            metered: false,
        },
        App {
            qfi: 8,
            name: "video-call",
            rate_pps: 30.0,
            profile: Cbr { jitter: 0.1 },
            size: Uniform {
                min: 400,
                max: 1000,
            },
            metered: true,
        },
        App {
            qfi: 9,
            name: "signaling",
            rate_pps: 10.0,
            profile: Poisson,
            size: Fixed { bytes: 200 },
            metered: false,
        },
    ]
}

const UES: u32 = 12;
const FIRST_TEID: u32 = 1001;

fn meter_for(rate_pps: f64, size: &PacketSize, profile: &TrafficProfile) -> MeterSpec {
    let peak_factor = match profile {
        TrafficProfile::OnOff { on_ms, off_ms, .. } => (on_ms + off_ms) / on_ms,
        _ => 1.0,
    };
    let bps = rate_pps * size.mean() * 8.0;
    let max_bytes = match *size {
        PacketSize::Fixed { bytes } => bytes,
        PacketSize::Uniform { max, .. } => max,
    } as u64;
    MeterSpec {
        cir_bps: (1.5 * peak_factor * bps) as u64,
        cbs_bytes: 20 * max_bytes,
        pir_bps: (2.0 * peak_factor * bps) as u64,
        pbs_bytes: 40 * max_bytes,
    }
}

fn ue_flows() -> Vec<FlowSpec> {
    let mut flows = Vec::new();
    for u in 0..UES {
        for a in apps() {
            flows.push(FlowSpec {
                teid: FIRST_TEID + u,
                qfi: a.qfi,
                app: a.name.into(),
                rate_pps: a.rate_pps,
                meter: a
                    .metered
                    .then(|| meter_for(a.rate_pps, &a.size, &a.profile)),
                profile: a.profile,
                size: a.size,
            });
        }
    }
    flows
}

/// QFI → QID and per-queue policy. Voice and IoT sit in the top tier;
/// interactive traffic in the middle tier; bulk classes share the bottom
/// tier by byte weight. Shapers are set with headroom over the mean load.
fn ue_queues() -> (Vec<QfiMap>, Vec<QueueSpec>) {
    let qfi_map = [
        (1, 0),
        (2, 1),
        (3, 2),
        (4, 3),
        (5, 4),
        (6, 5),
        (7, 6),
        (8, 7),
        (9, 7),
    ]
    .iter()
    .map(|&(qfi, qid)| QfiMap { qfi, qid })
    .collect();
    let q = |qid: u16, tier: u8, weight: u32, rate_mbps: f64| QueueSpec {
        qid,
        tier,
        weight,
        rate_bps: (rate_mbps * 1e6) as u64,
        buffer_pkts: 400,
    };
    let queues = vec![
        q(0, 0, 1500, 0.0),
        q(1, 0, 1500, 0.0),
        q(2, 1, 3000, 16.0),
        q(3, 1, 3000, 26.0),
        q(4, 2, 4500, 30.0),
        q(5, 2, 1500, 8.0),
        q(6, 2, 3000, 12.0),
        q(7, 1, 1500, 4.0),
    ];
    (qfi_map, queues)
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Microburst,
    Congestion,
    Contention,
    PolicyAbuse,
}

/// Start-to-start spacing and duration ranges, in milliseconds.
fn ranges(kind: Kind) -> ((u64, u64), (u64, u64)) {
    match kind {
        Kind::Microburst => ((300, 1_000), (10_000, 30_000)),
        Kind::Congestion => ((25_000, 40_000), (60_000, 120_000)),
        Kind::Contention => ((12_000, 30_000), (90_000, 150_000)),
        Kind::PolicyAbuse => ((30_000, 60_000), (150_000, 300_000)),
    }
}

fn effect(kind: Kind, rng: &mut impl Rng) -> Effect {
    match kind {
        Kind::Microburst => Effect::Microburst {
            multiplier: rng.random_range(4.0..8.0),
        },
        Kind::Congestion => Effect::Congestion {
            factor: rng.random_range(1.8..2.5),
        },
        Kind::Contention => Effect::Contention {
            cross_rate_bps: 30_000_000,
            backhaul_bps: 40_000_000,
            period_ms: 200,
        },
        Kind::PolicyAbuse => Effect::PolicyAbuse {
            remap_qfi: 3,
            multiplier: rng.random_range(2.0..3.0),
        },
    }
}

fn targets(kind: Kind, rng: &mut impl Rng) -> (Vec<FlowKey>, Vec<u8>) {
    let teids: Vec<u32> = (FIRST_TEID..FIRST_TEID + UES).collect();
    let key = |t: u32, q: u8| FlowKey::new(t, q).expect("preset QFI fits");
    match kind {
        Kind::Microburst => {
            let n = rng.random_range(1..=2);
            let picks: Vec<FlowKey> = teids
                .choose_multiple(rng, n)
                .map(|&t| key(t, *[1u8, 3, 4, 8].choose(rng).expect("non-empty")))
                .collect();
            (picks, vec![])
        }
        Kind::Congestion => (vec![], vec![*[3u8, 4, 6].choose(rng).expect("non-empty")]),
        Kind::Contention => {
            // one cell site: a third of the UEs, all of their flows
            let site: Vec<u32> = teids
                .choose_multiple(rng, (UES / 3) as usize)
                .copied()
                .collect();
            let flows = site
                .iter()
                .flat_map(|&t| apps().into_iter().map(move |a| key(t, a.qfi)))
                .collect();
            (flows, vec![])
        }
        Kind::PolicyAbuse => {
            let t = *teids.choose(rng).expect("non-empty");
            (
                vec![key(t, *[6u8, 7].choose(rng).expect("non-empty"))],
                vec![],
            )
        }
    }
}

fn schedule(kind: Kind, horizon_ms: u64, rng: &mut impl Rng) -> Vec<AnomalyEvent> {
    let ((dlo, dhi), (glo, ghi)) = ranges(kind);
    let mut out = Vec::new();
    let mut t = draw_ms(rng, glo / 4, glo / 2);
    loop {
        let d = draw_ms(rng, dlo, dhi);
        if t + d + 2_000 > horizon_ms {
            break;
        }
        let (flows, qfis) = targets(kind, rng);
        out.push(AnomalyEvent {
            effect: effect(kind, rng),
            flows,
            qfis,
            start_ms: t,
            duration_ms: d,
        });
        t += draw_ms(rng, glo, ghi);
    }
    out
}

fn single(name: &str, seed: u64, duration_s: u64, kinds: &[Kind]) -> ScenarioSpec {
    let (qfi_map, queues) = ue_queues();
    let mut anomalies = Vec::new();
    for (i, &k) in kinds.iter().enumerate() {
        let mut rng = sub_rng(seed, STREAM_PRESET, i as u64);
        anomalies.extend(schedule(k, duration_s * 1000, &mut rng));
    }
    anomalies.sort_by_key(|a| (a.start_ms, a.duration_ms));
    ScenarioSpec {
        name: name.into(),
        duration_s,
        seed,
        port_rate_bps: 100_000_000,
        flows: ue_flows(),
        qfi_map,
        queues,
        anomalies,
        telemetry: TelemetrySpec {
            calibration_s: 60,
            dsmp_delta_ns: 200_000,
            ..TelemetrySpec::default()
        },
    }
}

/// Twenty constant-rate flows at 1000 pps; one of them bursts to 51x for 50 ms.
fn microburst_50ms(seed: u64) -> ScenarioSpec {
    let flows = (0..20)
        .map(|i| FlowSpec {
            teid: 1 + i / 2,
            qfi: 1 + (i % 2) as u8,
            app: "voip".into(),
            rate_pps: 1000.0,
            profile: TrafficProfile::Cbr { jitter: 0.05 },
            size: PacketSize::Fixed { bytes: 200 },
            meter: None,
        })
        .collect();
    ScenarioSpec {
        name: "microburst-50ms".into(),
        duration_s: 10,
        seed,
        port_rate_bps: 1_000_000_000,
        flows,
        qfi_map: vec![QfiMap { qfi: 1, qid: 0 }, QfiMap { qfi: 2, qid: 1 }],
        queues: vec![
            QueueSpec {
                qid: 0,
                tier: 0,
                weight: 1500,
                rate_bps: 0,
                buffer_pkts: 4096,
            },
            QueueSpec {
                qid: 1,
                tier: 0,
                weight: 1500,
                rate_bps: 0,
                buffer_pkts: 4096,
            },
        ],
        anomalies: vec![AnomalyEvent {
            effect: Effect::Microburst { multiplier: 51.0 },
            flows: vec![FlowKey::new(1, 1).expect("valid key")],
            qfis: vec![],
            start_ms: 5_200,
            duration_ms: 50,
        }],
        telemetry: TelemetrySpec {
            calibration_s: 10,
            folds: 2,
            ..TelemetrySpec::default()
        },
    }
}

/// High packet rate on a fast port with two 10x burst windows.
fn burst_heavy(seed: u64) -> ScenarioSpec {
    let flows: Vec<FlowSpec> = (0..40)
        .map(|i| FlowSpec {
            teid: 1 + i / 4,
            qfi: 1 + (i % 4) as u8,
            app: "streaming".into(),
            rate_pps: 4_000.0,
            profile: TrafficProfile::OnOff {
                on_ms: 20.0,
                off_ms: 20.0,
                jitter: 0.2,
            },
            size: PacketSize::Uniform { min: 64, max: 1500 },
            meter: None,
        })
        .collect();
    let all: Vec<FlowKey> = flows.iter().map(|f| f.key()).collect();
    let burst = |start_ms| AnomalyEvent {
        effect: Effect::Microburst { multiplier: 10.0 },
        flows: all.clone(),
        qfis: vec![],
        start_ms,
        duration_ms: 1_000,
    };
    ScenarioSpec {
        name: "burst-heavy".into(),
        duration_s: 20,
        seed,
        port_rate_bps: 10_000_000_000,
        flows,
        qfi_map: (0..4)
            .map(|q| QfiMap {
                qfi: 1 + q as u8,
                qid: q,
            })
            .collect(),
        queues: (0..4)
            .map(|q| QueueSpec {
                qid: q,
                tier: 0,
                weight: 1500,
                rate_bps: 0,
                buffer_pkts: 8192,
            })
            .collect(),
        anomalies: vec![burst(6_000), burst(14_000)],
        telemetry: TelemetrySpec {
            calibration_s: 5,
            dsmp_delta_ns: 100,
            folds: 2,
            ..TelemetrySpec::default()
        },
    }
}
