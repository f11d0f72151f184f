// SPDX-License-Identifier: Apache-2.0

//! Egress scheduling: per-flow metering, tail-drop FIFOs per queue, strict
//! priority across tiers and deficit round robin within a tier.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};

use super::meter::TrTcm;
use super::scenario::ScenarioSpec;
use crate::error::ScenarioError;
use crate::types::{Color, FlowKey, Nanos, PacketEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DropReason {
    Meter,
    Buffer,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::Meter => "meter",
            DropReason::Buffer => "buffer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropRecord {
    pub key: FlowKey,
    pub qid: u16,
    pub bytes: u32,
    pub arrival_ns: Nanos,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Default)]
pub struct QueueOutcome {
    /// Delivered packets in arrival order, with sojourn and color filled in.
    pub delivered: Vec<PacketEvent>,
    /// Queue occupancy (packets) seen by each delivered packet on enqueue.
    pub queue_depth: Vec<u32>,
    pub drops: Vec<DropRecord>,
}

fn serialization_ns(bytes: u32, rate_bps: u64) -> Nanos {
    (bytes as u128 * 8_000_000_000).div_ceil(rate_bps as u128) as Nanos
}

struct Queue {
    fifo: VecDeque<u32>,
    cap: usize,
    quantum: u64,
    deficit: u64,
    shaper_bps: u64,
    ready_at: Nanos,
}

struct Tier {
    members: Vec<usize>,
    pos: usize,
    granted: bool,
}

struct Engine<'a> {
    arrivals: &'a [PacketEvent],
    port_bps: u64,
    queues: Vec<Queue>,
    tiers: Vec<Tier>,
    link_free_at: Nanos,
    timers: BinaryHeap<Reverse<Nanos>>,
    last_wake: Option<Nanos>,
    departure: Vec<Nanos>,
}

impl Engine<'_> {
    fn eligible(&self, q: usize, now: Nanos) -> bool {
        let q = &self.queues[q];
        !q.fifo.is_empty() && q.ready_at <= now
    }

    fn head_bytes(&self, q: usize) -> u64 {
        let idx = *self.queues[q].fifo.front().expect("non-empty queue") as usize;
        self.arrivals[idx].bytes as u64
    }

    fn pick_in_tier(&mut self, t: usize, now: Nanos) -> Option<usize> {
        let members = self.tiers[t].members.clone();
        let any_weighted = members
            .iter()
            .any(|&q| self.queues[q].quantum > 0 && self.eligible(q, now));
        if !any_weighted {
            return members.iter().copied().find(|&q| self.eligible(q, now));
        }
        loop {
            let tier = &self.tiers[t];
            let q = members[tier.pos];
            if self.queues[q].quantum > 0 && self.eligible(q, now) {
                if !self.tiers[t].granted {
                    self.queues[q].deficit += self.queues[q].quantum;
                    self.tiers[t].granted = true;
                }
                let head = self.head_bytes(q);
                if self.queues[q].deficit >= head {
                    self.queues[q].deficit -= head;
                    if self.queues[q].fifo.len() == 1 {
                        self.queues[q].deficit = 0;
                        self.advance(t);
                    }
                    return Some(q);
                }
            } else if self.queues[q].fifo.is_empty() {
                self.queues[q].deficit = 0;
            }
            self.advance(t);
        }
    }

    fn advance(&mut self, t: usize) {
        let tier = &mut self.tiers[t];
        tier.pos = (tier.pos + 1) % tier.members.len();
        tier.granted = false;
    }

    fn dispatch(&mut self, now: Nanos) {
        if self.link_free_at > now {
            return;
        }
        let picked = (0..self.tiers.len()).find_map(|t| self.pick_in_tier(t, now));
        match picked {
            Some(q) => {
                let idx = self.queues[q]
                    .fifo
                    .pop_front()
                    .expect("picked queue is non-empty") as usize;
                let bytes = self.arrivals[idx].bytes;
                let done = now + serialization_ns(bytes, self.port_bps);
                self.departure[idx] = done;
                self.link_free_at = done;
                self.timers.push(Reverse(done));
                let shaper = self.queues[q].shaper_bps;
                if shaper > 0 {
                    self.queues[q].ready_at = now + serialization_ns(bytes, shaper);
                }
            }
            None => {
                let wake = self
                    .queues
                    .iter()
                    .filter(|q| !q.fifo.is_empty())
                    .map(|q| q.ready_at)
                    .min();
                if let Some(w) = wake {
                    if w > now && self.last_wake != Some(w) {
                        self.last_wake = Some(w);
                        self.timers.push(Reverse(w));
                    }
                }
            }
        }
    }
}

/// Meter, enqueue and schedule a time-ordered arrival stream.
pub fn run_queues(
    arrivals: &[PacketEvent],
    spec: &ScenarioSpec,
) -> Result<QueueOutcome, ScenarioError> {
    spec.validate_queues()?;
    if let Some(i) = arrivals
        .windows(2)
        .position(|w| w[1].arrival_ns < w[0].arrival_ns)
    {
        return Err(ScenarioError::field(
            "arrivals",
            format!("not time-ordered at index {}", i + 1),
        ));
    }
    let mut meters: HashMap<FlowKey, TrTcm> = spec
        .flows
        .iter()
        .filter_map(|f| f.meter.map(|m| (f.key(), TrTcm::new(&m))))
        .collect();
    let mut by_tier: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, q) in spec.queues.iter().enumerate() {
        by_tier.entry(q.tier).or_default().push(i);
    }
    let mut eng = Engine {
        arrivals,
        port_bps: spec.port_rate_bps,
        queues: spec
            .queues
            .iter()
            .map(|q| Queue {
                fifo: VecDeque::new(),
                cap: q.buffer_pkts,
                quantum: q.weight as u64,
                deficit: 0,
                shaper_bps: q.rate_bps,
                ready_at: 0,
            })
            .collect(),
        tiers: by_tier
            .into_values()
            .map(|members| Tier {
                members,
                pos: 0,
                granted: false,
            })
            .collect(),
        link_free_at: 0,
        timers: BinaryHeap::new(),
        last_wake: None,
        departure: vec![Nanos::MAX; arrivals.len()],
    };

    let mut colors = vec![Color::Green; arrivals.len()];
    let mut depth = vec![0u32; arrivals.len()];
    let mut drops = Vec::new();
    let mut next = 0usize;
    loop {
        let next_arrival = arrivals.get(next).map(|e| e.arrival_ns);
        let next_timer = eng.timers.peek().map(|r| r.0);
        let now = match (next_arrival, next_timer) {
            (None, None) => break,
            (Some(a), Some(t)) if t < a => t,
            (Some(a), _) => a,
            (None, Some(t)) => t,
        };
        while eng.timers.peek().is_some_and(|r| r.0 <= now) {
            eng.timers.pop();
        }
        while next < arrivals.len() && arrivals[next].arrival_ns == now {
            let ev = &arrivals[next];
            let color = meters
                .get_mut(&ev.key)
                .map_or(Color::Green, |m| m.mark(now, ev.bytes));
            colors[next] = color;
            let q = ev.qid as usize;
            if q >= eng.queues.len() {
                return Err(ScenarioError::field(
                    "qfi_map",
                    format!("packet for missing queue {q}"),
                ));
            }
            if color == Color::Red {
                drops.push(drop_of(ev, DropReason::Meter));
            } else if eng.queues[q].fifo.len() >= eng.queues[q].cap {
                drops.push(drop_of(ev, DropReason::Buffer));
            } else {
                depth[next] = eng.queues[q].fifo.len() as u32;
                eng.queues[q].fifo.push_back(next as u32);
            }
            next += 1;
        }
        eng.dispatch(now);
    }

    let mut delivered = Vec::with_capacity(arrivals.len() - drops.len());
    let mut queue_depth = Vec::with_capacity(arrivals.len() - drops.len());
    for (i, ev) in arrivals.iter().enumerate() {
        let dep = eng.departure[i];
        if dep == Nanos::MAX {
            continue;
        }
        delivered.push(PacketEvent {
            sojourn_ns: dep - ev.arrival_ns,
            color: colors[i],
            ..*ev
        });
        queue_depth.push(depth[i]);
    }
    Ok(QueueOutcome {
        delivered,
        queue_depth,
        drops,
    })
}

fn drop_of(ev: &PacketEvent, reason: DropReason) -> DropRecord {
    DropRecord {
        key: ev.key,
        qid: ev.qid,
        bytes: ev.bytes,
        arrival_ns: ev.arrival_ns,
        reason,
    }
}
