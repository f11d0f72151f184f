// SPDX-License-Identifier: Apache-2.0

//! Comparison telemetry: per-QFI aggregate counters and change-triggered
//! postcards, plus byte-exact export cost for every mode.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::RecordError;
use crate::record::WindowRecord;
use crate::sim::{DropRecord, DsmpMetric};
use crate::types::{window_index, Color, FlowKey, Nanos, PacketEvent};

pub const PM_RECORD_BYTES: u64 = 32;
pub const POSTCARD_BYTES: u64 = 32;
pub const PM_TAG: &str = "pm";
pub const POSTCARD_TAG: &str = "postcard";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pm,
    Sketch,
    Dsmp,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Pm, Mode::Dsmp, Mode::Sketch];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Pm => "pm",
            Mode::Sketch => "sketch",
            Mode::Dsmp => "dsmp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One per-QFI counter row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QfiCounters {
    pub window: u64,
    pub qfi: u8,
    pub pkt_count: u64,
    pub byte_count: u64,
    pub drop_count: u64,
    pub delay_sum_ns: u128,
}

/// Input to the counter path: a delivered packet or a drop.
#[derive(Debug, Clone, Copy)]
pub enum Observation<'a> {
    Packet(&'a PacketEvent),
    Drop(&'a DropRecord),
}

impl Observation<'_> {
    pub fn key(&self) -> FlowKey {
        match self {
            Observation::Packet(e) => e.key,
            Observation::Drop(d) => d.key,
        }
    }

    pub fn arrival_ns(&self) -> Nanos {
        match self {
            Observation::Packet(e) => e.arrival_ns,
            Observation::Drop(d) => d.arrival_ns,
        }
    }
}

impl QfiCounters {
    pub fn mean_delay_ns(&self) -> u64 {
        if self.pkt_count == 0 {
            0
        } else {
            (self.delay_sum_ns / self.pkt_count as u128) as u64
        }
    }

    /// Fold one observation in. The TEID is discarded.
    pub fn pm_update(&mut self, obs: Observation<'_>) {
        match obs {
            Observation::Packet(e) => {
                self.pkt_count += 1;
                self.byte_count += e.bytes as u64;
                self.delay_sum_ns += e.sojourn_ns as u128;
            }
            Observation::Drop(_) => self.drop_count += 1,
        }
    }

    pub fn to_line(&self) -> String {
        format!(
            "{PM_TAG},{},{},{},{},{},{}",
            self.window,
            self.qfi,
            self.pkt_count,
            self.byte_count,
            self.drop_count,
            self.mean_delay_ns()
        )
    }
}

/// Windowed per-QFI counters. A QFI becomes active when first seen or when
/// registered, and gets a row in every later window, zeroed if idle.
#[derive(Debug, Clone)]
pub struct PmCollector {
    window_ns: Nanos,
    active: BTreeSet<u8>,
    open: BTreeMap<(u64, u8), QfiCounters>,
}

impl PmCollector {
    pub fn new(window_ns: Nanos, known_qfis: impl IntoIterator<Item = u8>) -> Self {
        Self {
            window_ns,
            active: known_qfis.into_iter().collect(),
            open: BTreeMap::new(),
        }
    }

    pub fn observe(&mut self, obs: Observation<'_>) {
        let window =
            window_index(obs.arrival_ns(), self.window_ns).expect("positive window length");
        let qfi = obs.key().qfi();
        self.active.insert(qfi);
        self.open
            .entry((window, qfi))
            .or_insert(QfiCounters {
                window,
                qfi,
                ..Default::default()
            })
            .pm_update(obs);
    }

    /// Rows for one window, one per active QFI in QFI order.
    pub fn close_window(&mut self, window: u64) -> Vec<QfiCounters> {
        self.active
            .iter()
            .map(|&qfi| {
                self.open.remove(&(window, qfi)).unwrap_or(QfiCounters {
                    window,
                    qfi,
                    ..Default::default()
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Postcard {
    pub window: u64,
    pub key: FlowKey,
    pub qid: u16,
    pub arrival_ns: Nanos,
    pub sojourn_ns: Nanos,
    pub color: Color,
    pub bytes: u32,
}

impl Postcard {
    pub fn to_line(&self) -> String {
        format!(
            "{POSTCARD_TAG},{},{},{},{},{},{},{},{}",
            self.window,
            self.key.teid(),
            self.key.qfi(),
            self.qid,
            self.arrival_ns,
            self.sojourn_ns,
            self.color.as_str(),
            self.bytes
        )
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<Self, RecordError> {
        let err = |reason: String| RecordError::Parse {
            line: line_no,
            reason,
        };
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 9 || f[0] != POSTCARD_TAG {
            return Err(err(format!("expected a {POSTCARD_TAG} line with 9 fields")));
        }
        let n = |i: usize| -> Result<u64, RecordError> {
            f[i].parse()
                .map_err(|_| err(format!("bad field {i}: {:?}", f[i])))
        };
        Ok(Self {
            window: n(1)?,
            key: FlowKey::new(n(2)? as u32, n(3)? as u8).map_err(|e| err(e.to_string()))?,
            qid: n(4)? as u16,
            arrival_ns: n(5)?,
            sojourn_ns: n(6)?,
            color: Color::parse(f[7]).ok_or_else(|| err(format!("bad color {:?}", f[7])))?,
            bytes: n(8)? as u32,
        })
    }
}

/// Change-triggered postcard filter with exact per-flow state.
#[derive(Debug, Clone)]
pub struct DeltaSmp {
    delta: u64,
    metric: DsmpMetric,
    window_ns: Nanos,
    last: HashMap<FlowKey, u64>,
}

impl DeltaSmp {
    pub fn new(delta: u64, metric: DsmpMetric, window_ns: Nanos) -> Self {
        assert!(delta > 0, "delta must be positive");
        Self {
            delta,
            metric,
            window_ns,
            last: HashMap::new(),
        }
    }

    /// Emit a postcard iff the monitored metric moved by more than delta
    /// since the flow's last export. A flow's first packet always exports.
    pub fn delta_smp_filter(&mut self, ev: &PacketEvent, queue_depth: u32) -> Option<Postcard> {
        let value = match self.metric {
            DsmpMetric::Sojourn => ev.sojourn_ns,
            DsmpMetric::QueueDepth => queue_depth as u64,
        };
        let fire = match self.last.get(&ev.key) {
            None => true,
            Some(&prev) => value.abs_diff(prev) > self.delta,
        };
        if !fire {
            return None;
        }
        self.last.insert(ev.key, value);
        Some(Postcard {
            window: window_index(ev.arrival_ns, self.window_ns).expect("positive window length"),
            key: ev.key,
            qid: ev.qid,
            arrival_ns: ev.arrival_ns,
            sojourn_ns: ev.sojourn_ns,
            color: ev.color,
            bytes: ev.bytes,
        })
    }
}

/// What a window exported, for cost accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WindowStats {
    pub active_qfis: usize,
    pub postcards: usize,
    pub width: usize,
    pub depth: usize,
    pub num_qids: usize,
    pub bins: usize,
}

/// Export bytes for one window.
pub fn export_cost(mode: Mode, stats: &WindowStats) -> u64 {
    match mode {
        Mode::Pm => PM_RECORD_BYTES * stats.active_qfis as u64,
        Mode::Sketch => {
            WindowRecord::payload_bytes(stats.bins) as u64
                * (stats.depth * stats.width * stats.num_qids) as u64
        }
        Mode::Dsmp => POSTCARD_BYTES * stats.postcards as u64,
    }
}
