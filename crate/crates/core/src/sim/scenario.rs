// SPDX-License-Identifier: Apache-2.0

//! Declarative scenario description and its TOML schema.
//!
//! ```toml
//! name = "example"
//! duration_s = 60
//! seed = 7
//! port_rate_bps = 1_000_000_000
//!
//! [[flows]]
//! teid = 1
//! qfi = 1
//! app = "voip"
//! rate_pps = 50.0
//! profile = { kind = "cbr", jitter = 0.05 }
//! size = { kind = "fixed", bytes = 200 }
//! meter = { cir_bps = 200000, cbs_bytes = 3000, pir_bps = 400000, pbs_bytes = 6000 }
//!
//! [[qfi_map]]
//! qfi = 1
//! qid = 0
//!
//! [[queues]]
//! qid = 0
//! tier = 0
//! weight = 1500
//! rate_bps = 0          # 0: no shaper, only the port rate applies
//! buffer_pkts = 512
//!
//! [[anomalies]]
//! kind = "microburst"
//! multiplier = 20.0
//! flows = [{ teid = 1, qfi = 1 }]
//! start_ms = 10_000
//! duration_ms = 500
//!
//! [telemetry]
//! width = 512
//! depth = 3
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::binning::BinningConfig;
use crate::error::ScenarioError;
use crate::types::{FlowKey, Nanos, SketchConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Microburst,
    Congestion,
    Contention,
    PolicyAbuse,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 4] = [
        AnomalyKind::Microburst,
        AnomalyKind::Congestion,
        AnomalyKind::Contention,
        AnomalyKind::PolicyAbuse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::Microburst => "microburst",
            AnomalyKind::Congestion => "congestion",
            AnomalyKind::Contention => "contention",
            AnomalyKind::PolicyAbuse => "policy_abuse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrafficProfile {
    /// Constant bit rate; `jitter` is the per-packet offset as a fraction of the period.
    Cbr {
        #[serde(default)]
        jitter: f64,
    },
    /// Exponential on and off periods, constant rate while on. `rate_pps` is the long-run mean.
    OnOff {
        on_ms: f64,
        off_ms: f64,
        #[serde(default)]
        jitter: f64,
    },
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PacketSize {
    Fixed { bytes: u32 },
    Uniform { min: u32, max: u32 },
}

impl PacketSize {
    pub fn mean(&self) -> f64 {
        match *self {
            PacketSize::Fixed { bytes } => bytes as f64,
            PacketSize::Uniform { min, max } => (min as f64 + max as f64) / 2.0,
        }
    }
}

/// Per-flow two-rate three-color marker parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeterSpec {
    pub cir_bps: u64,
    pub cbs_bytes: u64,
    pub pir_bps: u64,
    pub pbs_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub teid: u32,
    pub qfi: u8,
    #[serde(default)]
    pub app: String,
    pub rate_pps: f64,
    pub profile: TrafficProfile,
    pub size: PacketSize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meter: Option<MeterSpec>,
}

impl FlowSpec {
    pub fn key(&self) -> FlowKey {
        FlowKey::new(self.teid, self.qfi).expect("validated flow key")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QfiMap {
    pub qfi: u8,
    pub qid: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueSpec {
    pub qid: u16,
    /// Strict priority; lower tiers are served first.
    pub tier: u8,
    /// Round-robin quantum in bytes within the tier.
    pub weight: u32,
    /// Per-queue shaper; 0 leaves only the port rate.
    #[serde(default)]
    pub rate_bps: u64,
    pub buffer_pkts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effect {
    /// Target flows send `multiplier` times their rate for the duration.
    Microburst { multiplier: f64 },
    /// Flows of the target QFIs send `factor` times their rate.
    Congestion { factor: f64 },
    /// Target flows cross a shared upstream link whose cross traffic
    /// toggles between `cross_rate_bps` and idle every half period.
    Contention {
        cross_rate_bps: u64,
        backhaul_bps: u64,
        #[serde(default = "default_contention_period")]
        period_ms: u64,
    },
    /// Target flows are re-marked to `remap_qfi` and send `multiplier` times their rate.
    PolicyAbuse { remap_qfi: u8, multiplier: f64 },
}

fn default_contention_period() -> u64 {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    #[serde(flatten)]
    pub effect: Effect,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flows: Vec<FlowKey>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub qfis: Vec<u8>,
    pub start_ms: u64,
    pub duration_ms: u64,
}

impl AnomalyEvent {
    pub fn kind(&self) -> AnomalyKind {
        match self.effect {
            Effect::Microburst { .. } => AnomalyKind::Microburst,
            Effect::Congestion { .. } => AnomalyKind::Congestion,
            Effect::Contention { .. } => AnomalyKind::Contention,
            Effect::PolicyAbuse { .. } => AnomalyKind::PolicyAbuse,
        }
    }

    pub fn start_ns(&self) -> Nanos {
        self.start_ms * 1_000_000
    }

    pub fn end_ns(&self) -> Nanos {
        (self.start_ms + self.duration_ms) * 1_000_000
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DsmpMetric {
    Sojourn,
    QueueDepth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TelemetrySpec {
    pub window_ms: u64,
    pub width: usize,
    pub depth: usize,
    pub hash_seed: u64,
    pub binning: BinningConfig,
    /// Anomaly-free run used to fit bin edges and per-flow baselines.
    pub calibration_s: u64,
    pub dsmp_delta_ns: u64,
    pub dsmp_metric: DsmpMetric,
    /// Refit edges when diagnostic occupancy drifts.
    pub rebin: bool,
    /// Assumed spillover for the diagnostic-lift rule.
    pub beta: f64,
    pub folds: usize,
}

impl Default for TelemetrySpec {
    fn default() -> Self {
        Self {
            window_ms: 1000,
            width: 512,
            depth: 3,
            hash_seed: 0x5EED,
            binning: BinningConfig::default(),
            calibration_s: 30,
            dsmp_delta_ns: 20_000,
            dsmp_metric: DsmpMetric::Sojourn,
            rebin: false,
            beta: 0.3,
            folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub duration_s: u64,
    pub seed: u64,
    pub port_rate_bps: u64,
    pub flows: Vec<FlowSpec>,
    pub qfi_map: Vec<QfiMap>,
    pub queues: Vec<QueueSpec>,
    #[serde(default)]
    pub anomalies: Vec<AnomalyEvent>,
    #[serde(default)]
    pub telemetry: TelemetrySpec,
}

fn bad(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::field(field, reason)
}

/// Reject offered load above this multiple of the port rate.
pub const MAX_OVERLOAD: f64 = 10.0;

impl ScenarioSpec {
    pub fn from_toml_str(s: &str) -> Result<Self, ScenarioError> {
        let spec: Self = toml::from_str(s).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn duration_ns(&self) -> Nanos {
        self.duration_s * 1_000_000_000
    }

    pub fn window_ns(&self) -> Nanos {
        self.telemetry.window_ms * 1_000_000
    }

    pub fn num_windows(&self) -> u64 {
        self.duration_ns().div_ceil(self.window_ns().max(1))
    }

    pub fn num_qids(&self) -> usize {
        self.queues.len()
    }

    pub fn qid_of(&self, qfi: u8) -> Option<u16> {
        self.qfi_map.iter().find(|m| m.qfi == qfi).map(|m| m.qid)
    }

    pub fn flow(&self, key: FlowKey) -> Option<&FlowSpec> {
        self.flows
            .iter()
            .find(|f| f.teid == key.teid() && f.qfi == key.qfi())
    }

    pub fn sketch_config(&self) -> Result<SketchConfig, ScenarioError> {
        let t = &self.telemetry;
        SketchConfig::new(
            t.width,
            t.depth,
            t.binning.bins,
            self.num_qids(),
            t.hash_seed,
        )
        .map_err(|e| ScenarioError::field("telemetry", e.to_string()))
    }

    /// Mean offered load in bits per second, before anomalies.
    pub fn offered_load_bps(&self) -> f64 {
        self.flows
            .iter()
            .map(|f| f.rate_pps * f.size.mean() * 8.0)
            .sum()
    }

    /// The same scenario without anomalies, for calibration.
    pub fn anomaly_free(&self, seed: u64, duration_s: u64) -> Self {
        Self {
            name: format!("{}-calibration", self.name),
            duration_s,
            seed,
            anomalies: Vec::new(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.is_empty() {
            return Err(bad("name", "must not be empty"));
        }
        if self.duration_s == 0 {
            return Err(bad("duration_s", "must be positive"));
        }
        if self.port_rate_bps == 0 {
            return Err(bad("port_rate_bps", "must be positive"));
        }
        self.validate_queues()?;
        if self.flows.is_empty() {
            return Err(bad("flows", "at least one flow is required"));
        }
        let mut seen = HashSet::new();
        for (i, f) in self.flows.iter().enumerate() {
            let field = |name: &str| format!("flows[{i}].{name}");
            let key = FlowKey::new(f.teid, f.qfi).map_err(|e| bad(field("qfi"), e.to_string()))?;
            if !seen.insert(key) {
                return Err(bad(field("teid"), format!("duplicate flow {key}")));
            }
            if !(f.rate_pps.is_finite() && f.rate_pps > 0.0) {
                return Err(bad(field("rate_pps"), "must be positive"));
            }
            if self.qid_of(f.qfi).is_none() {
                return Err(bad(
                    field("qfi"),
                    format!("QFI {} has no qfi_map entry", f.qfi),
                ));
            }
            match f.size {
                PacketSize::Fixed { bytes: 0 } => {
                    return Err(bad(field("size"), "bytes must be at least 1"))
                }
                PacketSize::Uniform { min, max } if min == 0 || min > max => {
                    return Err(bad(field("size"), format!("bad range {min}..={max}")))
                }
                _ => {}
            }
            match f.profile {
                TrafficProfile::Cbr { jitter } if !(0.0..1.0).contains(&jitter) => {
                    return Err(bad(field("profile.jitter"), "must lie in [0, 1)"))
                }
                TrafficProfile::OnOff {
                    on_ms,
                    off_ms,
                    jitter,
                } => {
                    if !(on_ms > 0.0 && off_ms >= 0.0 && on_ms.is_finite() && off_ms.is_finite()) {
                        return Err(bad(
                            field("profile"),
                            "on_ms must be positive and off_ms non-negative",
                        ));
                    }
                    if !(0.0..1.0).contains(&jitter) {
                        return Err(bad(field("profile.jitter"), "must lie in [0, 1)"));
                    }
                }
                _ => {}
            }
            if let Some(m) = f.meter {
                if m.cir_bps == 0 || m.pir_bps < m.cir_bps || m.cbs_bytes == 0 || m.pbs_bytes == 0 {
                    return Err(bad(
                        field("meter"),
                        "need 0 < cir_bps <= pir_bps and non-zero bursts",
                    ));
                }
            }
        }
        let load = self.offered_load_bps();
        if load > MAX_OVERLOAD * self.port_rate_bps as f64 {
            return Err(bad(
                "flows",
                format!("offered load {load:.0} bps exceeds {MAX_OVERLOAD}x the port rate"),
            ));
        }
        let horizon = self.duration_s * 1000;
        for (i, a) in self.anomalies.iter().enumerate() {
            let field = |name: &str| format!("anomalies[{i}].{name}");
            if a.start_ms + a.duration_ms > horizon {
                return Err(bad(
                    field("duration_ms"),
                    format!(
                        "ends at {} ms, after the {} ms scenario",
                        a.start_ms + a.duration_ms,
                        horizon
                    ),
                ));
            }
            if a.flows.is_empty() && a.qfis.is_empty() {
                return Err(bad(field("flows"), "no target flows or QFIs"));
            }
            for k in &a.flows {
                if self.flow(*k).is_none() {
                    return Err(bad(field("flows"), format!("unknown flow {k}")));
                }
            }
            for q in &a.qfis {
                if !self.flows.iter().any(|f| f.qfi == *q) {
                    return Err(bad(field("qfis"), format!("no flow uses QFI {q}")));
                }
            }
            match a.effect {
                Effect::Microburst { multiplier }
                    if !(multiplier >= 1.0 && multiplier.is_finite()) =>
                {
                    return Err(bad(field("multiplier"), "must be at least 1"))
                }
                Effect::Congestion { factor } if !(factor >= 1.0 && factor.is_finite()) => {
                    return Err(bad(field("factor"), "must be at least 1"))
                }
                Effect::Contention {
                    backhaul_bps,
                    period_ms,
                    ..
                } if backhaul_bps == 0 || period_ms < 2 => {
                    return Err(bad(
                        field("backhaul_bps"),
                        "backhaul rate and period (>= 2 ms) must be positive",
                    ))
                }
                Effect::PolicyAbuse {
                    remap_qfi,
                    multiplier,
                } => {
                    if self.qid_of(remap_qfi).is_none() {
                        return Err(bad(
                            field("remap_qfi"),
                            format!("QFI {remap_qfi} has no qfi_map entry"),
                        ));
                    }
                    if !(multiplier >= 1.0 && multiplier.is_finite()) {
                        return Err(bad(field("multiplier"), "must be at least 1"));
                    }
                }
                _ => {}
            }
        }
        let t = &self.telemetry;
        if t.window_ms == 0 {
            return Err(bad("telemetry.window_ms", "must be positive"));
        }
        t.binning
            .validate()
            .map_err(|e| bad("telemetry.binning", e.to_string()))?;
        self.sketch_config()?;
        if t.dsmp_delta_ns == 0 {
            return Err(bad("telemetry.dsmp_delta_ns", "must be positive"));
        }
        if !(0.0..1.0).contains(&t.beta) {
            return Err(bad("telemetry.beta", "must lie in [0, 1)"));
        }
        if t.folds < 2 {
            return Err(bad("telemetry.folds", "need at least 2 folds"));
        }
        if t.calibration_s == 0 {
            return Err(bad("telemetry.calibration_s", "must be positive"));
        }
        Ok(())
    }

    pub(crate) fn validate_queues(&self) -> Result<(), ScenarioError> {
        if self.queues.is_empty() {
            return Err(bad("queues", "at least one queue is required"));
        }
        for (i, q) in self.queues.iter().enumerate() {
            if q.qid as usize != i {
                return Err(bad(
                    format!("queues[{i}].qid"),
                    format!(
                        "queues must be listed in qid order 0..{}",
                        self.queues.len()
                    ),
                ));
            }
            if q.buffer_pkts == 0 {
                return Err(bad(format!("queues[{i}].buffer_pkts"), "must be positive"));
            }
        }
        let mut tiers: BTreeMap<u8, u64> = BTreeMap::new();
        for q in &self.queues {
            *tiers.entry(q.tier).or_default() += q.weight as u64;
        }
        if let Some((tier, _)) = tiers.iter().find(|(_, w)| **w == 0) {
            return Err(bad(
                "queues",
                format!("all weights in tier {tier} are zero"),
            ));
        }
        let mut qfis = BTreeSet::new();
        for (i, m) in self.qfi_map.iter().enumerate() {
            if m.qfi > FlowKey::MAX_QFI {
                return Err(bad(format!("qfi_map[{i}].qfi"), "does not fit in 6 bits"));
            }
            if !qfis.insert(m.qfi) {
                return Err(bad(
                    format!("qfi_map[{i}].qfi"),
                    format!("QFI {} mapped twice", m.qfi),
                ));
            }
            if m.qid as usize >= self.queues.len() {
                return Err(bad(
                    format!("qfi_map[{i}].qid"),
                    format!("queue {} does not exist", m.qid),
                ));
            }
        }
        Ok(())
    }
}
