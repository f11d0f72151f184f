// SPDX-License-Identifier: Apache-2.0

use super::scenario::MeterSpec;
use crate::types::{Color, Nanos};

/// Token credit is kept in bit-nanoseconds so refills are exact integers.
const SCALE: u128 = 8 * 1_000_000_000;

/// Color-blind two-rate three-color marker. Both buckets start full.
#[derive(Debug, Clone)]
pub struct TrTcm {
    cir_bps: u128,
    pir_bps: u128,
    c_cap: u128,
    p_cap: u128,
    c: u128,
    p: u128,
    last_ns: Nanos,
}

impl TrTcm {
    pub fn new(spec: &MeterSpec) -> Self {
        let c_cap = spec.cbs_bytes as u128 * SCALE;
        let p_cap = spec.pbs_bytes as u128 * SCALE;
        Self {
            cir_bps: spec.cir_bps as u128,
            pir_bps: spec.pir_bps as u128,
            c_cap,
            p_cap,
            c: c_cap,
            p: p_cap,
            last_ns: 0,
        }
    }

    pub fn mark(&mut self, now: Nanos, bytes: u32) -> Color {
        let dt = now.saturating_sub(self.last_ns) as u128;
        self.last_ns = self.last_ns.max(now);
        self.c = (self.c + self.cir_bps * dt).min(self.c_cap);
        self.p = (self.p + self.pir_bps * dt).min(self.p_cap);
        let need = bytes as u128 * SCALE;
        if self.p < need {
            Color::Red
        } else if self.c < need {
            self.p -= need;
            Color::Yellow
        } else {
            self.p -= need;
            self.c -= need;
            Color::Green
        }
    }
}
