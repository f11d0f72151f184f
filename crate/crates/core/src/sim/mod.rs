// SPDX-License-Identifier: Apache-2.0

//! Deterministic user-plane simulator.
//!
//! The pipeline is `generate_traffic` → `inject_all` → `run_queues`; labels
//! come from the scenario alone via `label_windows`. Every random draw is
//! taken from a ChaCha stream keyed by (scenario seed, purpose, index), so
//! each flow and each anomaly has its own reproducible stream.

mod anomaly;
pub mod capture;
mod meter;
pub mod presets;
mod queues;
mod scenario;
mod traffic;

pub use anomaly::{
    inject_all, inject_anomaly, label_windows, target_flows, GroundTruthLabel, Scope,
};
pub use meter::TrTcm;
pub use queues::{run_queues, DropReason, DropRecord, QueueOutcome};
pub use scenario::{
    AnomalyEvent, AnomalyKind, DsmpMetric, Effect, FlowSpec, MeterSpec, PacketSize, QfiMap,
    QueueSpec, ScenarioSpec, TelemetrySpec, TrafficProfile,
};
pub use traffic::{arrival_times, generate_traffic, sort_stream};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::types::mix64;

pub(crate) const STREAM_TRAFFIC: u64 = 1;
pub(crate) const STREAM_ANOMALY: u64 = 2;
pub(crate) const STREAM_PRESET: u64 = 3;

pub(crate) fn sub_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(mix64(seed ^ mix64(stream)) ^ index))
}
