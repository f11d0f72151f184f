// SPDX-License-Identifier: Apache-2.0

//! Identifiers, packet observations and window bookkeeping shared by every
//! telemetry mode.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Nanoseconds since the start of a run.
pub type Nanos = u64;

/// Default telemetry window: one second.
pub const DEFAULT_WINDOW_NS: Nanos = 1_000_000_000;

/// A QoS flow: one (TEID, QFI) pair.
///
/// Equality, ordering and hashing only look at the pair itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawFlowKey", into = "RawFlowKey")]
pub struct FlowKey {
    teid: u32,
    qfi: u8,
}

impl FlowKey {
    pub const MAX_QFI: u8 = 63;

    pub fn new(teid: u32, qfi: u8) -> Result<Self, ConfigError> {
        if qfi > Self::MAX_QFI {
            return Err(ConfigError::Invalid {
                field: "qfi".into(),
                reason: format!("{qfi} does not fit in 6 bits"),
            });
        }
        Ok(Self { teid, qfi })
    }

    pub fn teid(&self) -> u32 {
        self.teid
    }

    pub fn qfi(&self) -> u8 {
        self.qfi
    }

    /// Same tunnel, different QoS flow.
    pub fn with_qfi(&self, qfi: u8) -> Result<Self, ConfigError> {
        Self::new(self.teid, qfi)
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.teid, self.qfi)
    }
}

#[derive(Serialize, Deserialize)]
struct RawFlowKey {
    teid: u32,
    qfi: u8,
}

impl TryFrom<RawFlowKey> for FlowKey {
    type Error = ConfigError;

    fn try_from(raw: RawFlowKey) -> Result<Self, Self::Error> {
        FlowKey::new(raw.teid, raw.qfi)
    }
}

impl From<FlowKey> for RawFlowKey {
    fn from(k: FlowKey) -> Self {
        RawFlowKey {
            teid: k.teid,
            qfi: k.qfi,
        }
    }
}

/// Two-rate three-color marker outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Green,
    Yellow,
    Red,
}

impl Color {
    pub const ALL: [Color; 3] = [Color::Green, Color::Yellow, Color::Red];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Color::Green => "green",
            Color::Yellow => "yellow",
            Color::Red => "red",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "green" | "G" | "0" => Some(Color::Green),
            "yellow" | "Y" | "1" => Some(Color::Yellow),
            "red" | "R" | "2" => Some(Color::Red),
            _ => None,
        }
    }
}

/// One packet as seen by the telemetry tap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketEvent {
    pub key: FlowKey,
    pub qid: u16,
    pub bytes: u32,
    pub arrival_ns: Nanos,
    /// Queue latency including serialization.
    pub sojourn_ns: Nanos,
    pub color: Color,
}

impl PacketEvent {
    pub fn departure_ns(&self) -> Nanos {
        self.arrival_ns + self.sojourn_ns
    }
}

/// `floor(arrival_ns / window_len_ns)`.
pub fn window_index(arrival_ns: Nanos, window_len_ns: Nanos) -> Result<u64, ConfigError> {
    if window_len_ns == 0 {
        return Err(ConfigError::Invalid {
            field: "window_len_ns".into(),
            reason: "window length must be positive".into(),
        });
    }
    Ok(arrival_ns / window_len_ns)
}

/// Tracks which window a monotone event stream is currently in.
#[derive(Debug, Clone)]
pub struct WindowClock {
    window_len_ns: Nanos,
    current_window: u64,
}

impl WindowClock {
    pub fn new(window_len_ns: Nanos) -> Result<Self, ConfigError> {
        window_index(0, window_len_ns)?;
        Ok(Self {
            window_len_ns,
            current_window: 0,
        })
    }

    pub fn window_len_ns(&self) -> Nanos {
        self.window_len_ns
    }

    pub fn current_window(&self) -> u64 {
        self.current_window
    }

    pub fn window_start_ns(&self, window: u64) -> Nanos {
        window * self.window_len_ns
    }

    /// Moves the clock to the window of `arrival_ns` and returns the windows
    /// that closed on the way (possibly several when traffic has gaps).
    /// Late events stay in the current window; the index never decreases.
    pub fn advance(&mut self, arrival_ns: Nanos) -> std::ops::Range<u64> {
        let w = arrival_ns / self.window_len_ns;
        let closed = self.current_window..w.max(self.current_window);
        self.current_window = w.max(self.current_window);
        closed
    }
}

/// Dimensions of every per-queue sketch in a deployment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchConfig {
    pub width: usize,
    pub depth: usize,
    pub bins: usize,
    pub num_qids: usize,
    pub seeds: Vec<u64>,
}

impl SketchConfig {
    /// Builds a config with `depth` distinct seeds derived from `master_seed`.
    pub fn new(
        width: usize,
        depth: usize,
        bins: usize,
        num_qids: usize,
        master_seed: u64,
    ) -> Result<Self, ConfigError> {
        let mut seeds = Vec::with_capacity(depth);
        let mut s = master_seed;
        while seeds.len() < depth {
            s = s.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let candidate = mix64(s);
            if !seeds.contains(&candidate) {
                seeds.push(candidate);
            }
        }
        let cfg = Self {
            width,
            depth,
            bins,
            num_qids,
            seeds,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &str, reason: String| {
            Err(ConfigError::Invalid {
                field: field.into(),
                reason,
            })
        };
        if self.width < 2 {
            return bad("width", format!("{} < 2", self.width));
        }
        if self.depth < 1 {
            return bad("depth", "must be at least 1".into());
        }
        if self.bins < 2 {
            return bad("bins", format!("{} < 2", self.bins));
        }
        if self.num_qids < 1 {
            return bad("num_qids", "must be at least 1".into());
        }
        if self.seeds.len() != self.depth {
            return bad(
                "seeds",
                format!("{} seeds for depth {}", self.seeds.len(), self.depth),
            );
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return bad("seeds", format!("seed {s:#x} repeated"));
            }
        }
        Ok(())
    }

    /// CMS collision rate `e / w`.
    pub fn epsilon(&self) -> f64 {
        std::f64::consts::E / self.width as f64
    }

    pub fn buckets_per_sketch(&self) -> usize {
        self.width * self.depth
    }
}

impl Default for SketchConfig {
    fn default() -> Self {
        Self::new(512, 3, 8, 8, 0x5EED).expect("default sketch config is valid")
    }
}

/// Per-window packet totals of one sketch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowTotals {
    /// All packets in the window.
    pub n_total: u64,
    /// Packets counted in the diagnostic region.
    pub n_diag: u64,
}

/// 64-bit finalizer from splitmix64.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Row hash of a flow key, reduced to a bucket index in `0..width`.
#[inline]
pub fn flow_hash(key: FlowKey, seed: u64, width: usize) -> usize {
    let packed = ((key.teid as u64) << 6) | key.qfi as u64;
    let h = mix64(mix64(packed ^ seed).wrapping_add(seed.rotate_left(29)));
    (h % width as u64) as usize
}
