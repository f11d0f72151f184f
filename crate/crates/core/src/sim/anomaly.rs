// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scenario::{AnomalyEvent, AnomalyKind, Effect, FlowSpec, ScenarioSpec, TrafficProfile};
use super::traffic::{arrival_times, sample_size, sort_stream};
use super::{sub_rng, STREAM_ANOMALY};
use crate::error::ScenarioError;
use crate::types::{Color, FlowKey, Nanos, PacketEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scope {
    Flow(FlowKey),
    Qfi(u8),
}

impl Scope {
    pub fn qfi(&self) -> u8 {
        match self {
            Scope::Flow(k) => k.qfi(),
            Scope::Qfi(q) => *q,
        }
    }
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scope::Flow(k) => write!(f, "flow:{k}"),
            Scope::Qfi(q) => write!(f, "qfi:{q}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroundTruthLabel {
    pub window: u64,
    pub scope: Scope,
    pub kind: AnomalyKind,
    pub active: bool,
}

/// Flows hit by an anomaly: those listed plus every flow in a listed QFI.
pub fn target_flows<'a>(ev: &AnomalyEvent, spec: &'a ScenarioSpec) -> Vec<&'a FlowSpec> {
    spec.flows
        .iter()
        .filter(|f| ev.flows.contains(&f.key()) || ev.qfis.contains(&f.qfi))
        .collect()
}

/// Apply every anomaly of the scenario in order. Packets pushed past the
/// end of the scenario are discarded.
pub fn inject_all(
    mut stream: Vec<PacketEvent>,
    spec: &ScenarioSpec,
) -> Result<Vec<PacketEvent>, ScenarioError> {
    for (i, ev) in spec.anomalies.iter().enumerate() {
        stream = inject_anomaly(stream, ev, spec, i as u64)?;
    }
    let horizon = spec.duration_ns();
    stream.retain(|e| e.arrival_ns < horizon);
    Ok(stream)
}

/// Apply one anomaly. `index` selects the anomaly's random stream.
pub fn inject_anomaly(
    mut stream: Vec<PacketEvent>,
    ev: &AnomalyEvent,
    spec: &ScenarioSpec,
    index: u64,
) -> Result<Vec<PacketEvent>, ScenarioError> {
    let (start, end) = (ev.start_ns(), ev.end_ns());
    if end > spec.duration_ns() {
        return Err(ScenarioError::field(
            "anomalies",
            format!("anomaly {index} ends after the scenario"),
        ));
    }
    if start == end {
        return Ok(stream);
    }
    let mut rng = sub_rng(spec.seed, STREAM_ANOMALY, index);
    let targets = target_flows(ev, spec);
    let qid_of = |qfi: u8| {
        spec.qid_of(qfi)
            .ok_or_else(|| ScenarioError::field("qfi_map", format!("QFI {qfi} is not mapped")))
    };

    match ev.effect {
        Effect::Microburst { multiplier } => {
            for f in &targets {
                let extra =
                    ((multiplier - 1.0) * f.rate_pps * (end - start) as f64 / 1e9).round() as u64;
                let qid = qid_of(f.qfi)?;
                for j in 0..extra {
                    let t =
                        start + ((j as f64 + 0.5) * (end - start) as f64 / extra as f64) as Nanos;
                    stream.push(extra_packet(
                        f.key(),
                        qid,
                        t,
                        sample_size(&f.size, &mut rng),
                    ));
                }
            }
        }
        Effect::Congestion { factor } => {
            for f in &targets {
                let qid = qid_of(f.qfi)?;
                for t in arrival_times(
                    &TrafficProfile::Poisson,
                    (factor - 1.0) * f.rate_pps,
                    start,
                    end,
                    &mut rng,
                ) {
                    stream.push(extra_packet(
                        f.key(),
                        qid,
                        t,
                        sample_size(&f.size, &mut rng),
                    ));
                }
            }
        }
        Effect::PolicyAbuse {
            remap_qfi,
            multiplier,
        } => {
            let qid = qid_of(remap_qfi)?;
            let remap: Vec<(FlowKey, FlowKey)> = targets
                .iter()
                .map(|f| {
                    Ok((
                        f.key(),
                        f.key()
                            .with_qfi(remap_qfi)
                            .map_err(|e| ScenarioError::field("remap_qfi", e.to_string()))?,
                    ))
                })
                .collect::<Result<_, ScenarioError>>()?;
            for e in stream
                .iter_mut()
                .filter(|e| e.arrival_ns >= start && e.arrival_ns < end)
            {
                if let Some((_, to)) = remap.iter().find(|(from, _)| *from == e.key) {
                    e.key = *to;
                    e.qid = qid;
                }
            }
            for (f, (_, to)) in targets.iter().zip(&remap) {
                for t in arrival_times(
                    &TrafficProfile::Poisson,
                    (multiplier - 1.0) * f.rate_pps,
                    start,
                    end,
                    &mut rng,
                ) {
                    stream.push(extra_packet(*to, qid, t, sample_size(&f.size, &mut rng)));
                }
            }
        }
        Effect::Contention {
            cross_rate_bps,
            backhaul_bps,
            period_ms,
        } => {
            let keys: BTreeSet<FlowKey> = targets.iter().map(|f| f.key()).collect();
            let link = Backhaul {
                start,
                end,
                half: period_ms * 500_000,
                free_bps: backhaul_bps.saturating_sub(cross_rate_bps),
                backhaul_bps,
            };
            link.apply(&mut stream, &keys);
        }
    }
    sort_stream(&mut stream);
    Ok(stream)
}

fn extra_packet(key: FlowKey, qid: u16, t: Nanos, bytes: u32) -> PacketEvent {
    PacketEvent {
        key,
        qid,
        bytes,
        arrival_ns: t,
        sojourn_ns: 0,
        color: Color::Green,
    }
}

/// Upstream FIFO shared with unmonitored cross traffic that is on during
/// the first half of every period.
struct Backhaul {
    start: Nanos,
    end: Nanos,
    half: Nanos,
    free_bps: u64,
    backhaul_bps: u64,
}

impl Backhaul {
    fn cross_on(&self, t: Nanos) -> bool {
        t >= self.start && t < self.end && ((t - self.start) / self.half).is_multiple_of(2)
    }

    fn next_off(&self, t: Nanos) -> Nanos {
        let k = (t - self.start) / self.half;
        (self.start + (k + 1) * self.half).min(self.end)
    }

    fn rate_at(&self, t: Nanos) -> u64 {
        if self.cross_on(t) {
            self.free_bps
        } else {
            self.backhaul_bps
        }
    }

    /// Delays target packets that arrive during the anomaly, plus any that
    /// queue behind them after it ends.
    fn apply(&self, stream: &mut [PacketEvent], keys: &BTreeSet<FlowKey>) {
        let mut free_at: Nanos = 0;
        for e in stream
            .iter_mut()
            .filter(|e| e.arrival_ns >= self.start && keys.contains(&e.key))
        {
            if e.arrival_ns >= self.end && free_at <= e.arrival_ns {
                break;
            }
            let mut t = e.arrival_ns.max(free_at);
            while self.rate_at(t) == 0 {
                t = self.next_off(t);
            }
            let rate = self.rate_at(t);
            t += (e.bytes as u128 * 8_000_000_000).div_ceil(rate as u128) as Nanos;
            free_at = t;
            e.arrival_ns = t;
        }
    }
}

/// One label per (window, scope, kind) overlapping an anomaly interval.
pub fn label_windows(spec: &ScenarioSpec) -> Vec<GroundTruthLabel> {
    let win = spec.window_ns();
    let mut out = BTreeSet::new();
    for ev in &spec.anomalies {
        if ev.duration_ms == 0 {
            continue;
        }
        let first = ev.start_ns() / win;
        let last = (ev.end_ns() - 1) / win;
        let mut scopes: Vec<Scope> = ev
            .flows
            .iter()
            .map(|k| Scope::Flow(*k))
            .chain(ev.qfis.iter().map(|q| Scope::Qfi(*q)))
            .collect();
        if let Effect::PolicyAbuse { remap_qfi, .. } = ev.effect {
            scopes.extend(
                ev.flows
                    .iter()
                    .filter_map(|k| k.with_qfi(remap_qfi).ok())
                    .map(Scope::Flow),
            );
        }
        for window in first..=last {
            for &scope in &scopes {
                out.insert(GroundTruthLabel {
                    window,
                    scope,
                    kind: ev.kind(),
                    active: true,
                });
            }
        }
    }
    out.into_iter().collect()
}

/// Draw an anomaly start and duration inside a schedule slot.
pub(crate) fn draw_ms(rng: &mut impl Rng, lo_ms: u64, hi_ms: u64) -> u64 {
    if hi_ms <= lo_ms {
        lo_ms
    } else {
        rng.random_range(lo_ms..=hi_ms)
    }
}
