// SPDX-License-Identifier: Apache-2.0

//! Count-min sketch whose buckets carry latency and inter-arrival histograms.
//!
//! One [`HistogramSketch`] exists per egress queue. Every packet touches one
//! bucket per row; a bucket keeps packet and byte counters, an `B`-bin latency
//! histogram, an `B`-bin inter-arrival histogram, the three meter color
//! tallies and the timestamp of the last packet that hit it. Inter-arrival
//! times are measured against that bucket timestamp, so colliding flows add
//! noise to each other's IAT histograms but no per-flow state is kept.
//!
//! A flow is reconstructed by taking, feature by feature, the minimum over
//! its `d` candidate buckets. Counters saturate instead of wrapping.

use crate::binning::DiagnosticRegion;
use crate::error::SketchError;
use crate::record::WindowRecord;
use crate::types::{flow_hash, Color, FlowKey, Nanos, PacketEvent, SketchConfig, WindowTotals};

/// Index of the bin holding `value`: the smallest `i` with `value < edges[i]`,
/// or `edges.len()` (the overflow bin) when no edge is larger.
#[inline]
pub fn bin_of(value: Nanos, edges: &[Nanos]) -> usize {
    edges.partition_point(|&e| value >= e)
}

fn check_edges(edges: &[Nanos], bins: usize) -> Result<(), SketchError> {
    if edges.len() + 1 != bins {
        return Err(SketchError::EdgeCount {
            bins,
            got: edges.len(),
        });
    }
    if let Some(i) = edges.windows(2).position(|w| w[0] >= w[1]) {
        return Err(SketchError::EdgesNotIncreasing { index: i + 1 });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bucket {
    pub pkt_count: u32,
    pub byte_count: u64,
    pub lat_bins: Box<[u32]>,
    pub iat_bins: Box<[u32]>,
    pub color_counts: [u32; 3],
    /// `None` until the bucket sees its first packet; survives window resets.
    pub last_seen_ns: Option<Nanos>,
}

impl Bucket {
    fn new(bins: usize) -> Self {
        Self {
            pkt_count: 0,
            byte_count: 0,
            lat_bins: vec![0; bins].into_boxed_slice(),
            iat_bins: vec![0; bins].into_boxed_slice(),
            color_counts: [0; 3],
            last_seen_ns: None,
        }
    }

    fn clear_counters(&mut self) {
        self.pkt_count = 0;
        self.byte_count = 0;
        self.lat_bins.fill(0);
        self.iat_bins.fill(0);
        self.color_counts = [0; 3];
    }
}

#[inline]
fn sat_inc32(c: &mut u32, saturated: &mut u64) {
    match c.checked_add(1) {
        Some(v) => *c = v,
        None => *saturated += 1,
    }
}

/// Per-flow reconstruction from the `d` candidate buckets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowEstimate {
    pub key: FlowKey,
    pub pkt_est: u64,
    pub byte_est: u64,
    pub lat_bin_est: Vec<u64>,
    pub iat_bin_est: Vec<u64>,
    pub color_est: [u64; 3],
    /// Latency-tail plus IAT-head mass under the region used for the query.
    pub diag_est: u64,
}

impl FlowEstimate {
    /// Mass outside the diagnostic region, floored at zero.
    pub fn outside_diag_est(&self) -> u64 {
        self.pkt_est.saturating_sub(self.diag_est)
    }
}

/// Everything the control plane collects from one sketch at a window boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowExport {
    pub window: u64,
    pub qid: u16,
    pub records: Vec<WindowRecord>,
    pub totals: WindowTotals,
}

#[derive(Debug, Clone)]
pub struct HistogramSketch {
    config: SketchConfig,
    qid: u16,
    lat_edges: Vec<Nanos>,
    iat_edges: Vec<Nanos>,
    region: DiagnosticRegion,
    buckets: Vec<Bucket>,
    saturations: u64,
    monotonicity_warnings: u64,
}

impl HistogramSketch {
    pub fn new(
        config: SketchConfig,
        qid: u16,
        lat_edges: Vec<Nanos>,
        iat_edges: Vec<Nanos>,
        region: DiagnosticRegion,
    ) -> Result<Self, SketchError> {
        config.validate()?;
        check_edges(&lat_edges, config.bins)?;
        check_edges(&iat_edges, config.bins)?;
        region.check_bins(config.bins)?;
        let buckets = (0..config.buckets_per_sketch())
            .map(|_| Bucket::new(config.bins))
            .collect();
        Ok(Self {
            config,
            qid,
            lat_edges,
            iat_edges,
            region,
            buckets,
            saturations: 0,
            monotonicity_warnings: 0,
        })
    }

    pub fn config(&self) -> &SketchConfig {
        &self.config
    }

    pub fn qid(&self) -> u16 {
        self.qid
    }

    pub fn lat_edges(&self) -> &[Nanos] {
        &self.lat_edges
    }

    pub fn iat_edges(&self) -> &[Nanos] {
        &self.iat_edges
    }

    pub fn region(&self) -> &DiagnosticRegion {
        &self.region
    }

    /// Number of increments dropped because a counter was already at its maximum.
    pub fn saturations(&self) -> u64 {
        self.saturations
    }

    /// Packets whose arrival preceded the bucket timestamp.
    pub fn monotonicity_warnings(&self) -> u64 {
        self.monotonicity_warnings
    }

    /// Swaps in refitted edges. Only call between an export and the next update.
    pub fn set_edges(
        &mut self,
        lat_edges: Vec<Nanos>,
        iat_edges: Vec<Nanos>,
        region: DiagnosticRegion,
    ) -> Result<(), SketchError> {
        check_edges(&lat_edges, self.config.bins)?;
        check_edges(&iat_edges, self.config.bins)?;
        region.check_bins(self.config.bins)?;
        self.lat_edges = lat_edges;
        self.iat_edges = iat_edges;
        self.region = region;
        Ok(())
    }

    pub fn bucket(&self, row: usize, col: usize) -> &Bucket {
        &self.buckets[row * self.config.width + col]
    }

    /// Column hit by `key` in `row`.
    pub fn column(&self, row: usize, key: FlowKey) -> usize {
        flow_hash(key, self.config.seeds[row], self.config.width)
    }

    pub fn update(&mut self, ev: &PacketEvent) -> Result<(), SketchError> {
        if ev.qid != self.qid {
            return Err(SketchError::QidMismatch {
                expected: self.qid,
                got: ev.qid,
            });
        }
        let lat_bin = bin_of(ev.sojourn_ns, &self.lat_edges);
        let color = ev.color.index();
        let width = self.config.width;
        for row in 0..self.config.depth {
            let col = flow_hash(ev.key, self.config.seeds[row], width);
            let b = &mut self.buckets[row * width + col];
            sat_inc32(&mut b.pkt_count, &mut self.saturations);
            match b.byte_count.checked_add(ev.bytes as u64) {
                Some(v) => b.byte_count = v,
                None => {
                    b.byte_count = u64::MAX;
                    self.saturations += 1;
                }
            }
            sat_inc32(&mut b.lat_bins[lat_bin], &mut self.saturations);
            if let Some(last) = b.last_seen_ns {
                let iat = if ev.arrival_ns < last {
                    self.monotonicity_warnings += 1;
                    0
                } else {
                    ev.arrival_ns - last
                };
                let iat_bin = bin_of(iat, &self.iat_edges);
                sat_inc32(&mut b.iat_bins[iat_bin], &mut self.saturations);
            }
            b.last_seen_ns = Some(ev.arrival_ns);
            sat_inc32(&mut b.color_counts[color], &mut self.saturations);
        }
        Ok(())
    }

    /// Row-wise minimum over the buckets `key` hashes to.
    pub fn query_flow(&self, key: FlowKey, region: &DiagnosticRegion) -> FlowEstimate {
        let bins = self.config.bins;
        let mut est = FlowEstimate {
            key,
            pkt_est: u64::MAX,
            byte_est: u64::MAX,
            lat_bin_est: vec![u64::MAX; bins],
            iat_bin_est: vec![u64::MAX; bins],
            color_est: [u64::MAX; 3],
            diag_est: 0,
        };
        for row in 0..self.config.depth {
            let b = self.bucket(row, self.column(row, key));
            est.pkt_est = est.pkt_est.min(b.pkt_count as u64);
            est.byte_est = est.byte_est.min(b.byte_count);
            for (e, &v) in est.lat_bin_est.iter_mut().zip(b.lat_bins.iter()) {
                *e = (*e).min(v as u64);
            }
            for (e, &v) in est.iat_bin_est.iter_mut().zip(b.iat_bins.iter()) {
                *e = (*e).min(v as u64);
            }
            for (e, &v) in est.color_est.iter_mut().zip(b.color_counts.iter()) {
                *e = (*e).min(v as u64);
            }
        }
        est.diag_est = region.diag_mass(&est.lat_bin_est, &est.iat_bin_est);
        est
    }

    /// Window totals read from row 0 (every row sees every packet).
    pub fn totals(&self) -> WindowTotals {
        let w = self.config.width;
        let mut t = WindowTotals::default();
        for b in &self.buckets[..w] {
            t.n_total += b.pkt_count as u64;
            t.n_diag += self.region.diag_mass_u32(&b.lat_bins, &b.iat_bins);
        }
        t
    }

    /// Emits one record per bucket, then zeroes every counter and histogram.
    /// Bucket timestamps are kept so IATs stay continuous across windows.
    pub fn export_window(&mut self, window: u64) -> WindowExport {
        let totals = self.totals();
        let w = self.config.width;
        let mut records = Vec::with_capacity(self.buckets.len());
        for (i, b) in self.buckets.iter_mut().enumerate() {
            records.push(WindowRecord {
                window,
                qid: self.qid,
                row: (i / w) as u16,
                col: (i % w) as u32,
                pkt: b.pkt_count,
                bytes: b.byte_count,
                lat_bins: b.lat_bins.to_vec(),
                iat_bins: b.iat_bins.to_vec(),
                colors: b.color_counts,
            });
            b.clear_counters();
        }
        WindowExport {
            window,
            qid: self.qid,
            records,
            totals,
        }
    }
}

/// Rebuilds per-flow estimates from exported records, as a collector would.
///
/// `records` must hold the full `d x w` export of one sketch.
pub fn query_records(
    records: &[WindowRecord],
    config: &SketchConfig,
    key: FlowKey,
    region: &DiagnosticRegion,
) -> Option<FlowEstimate> {
    if records.len() != config.buckets_per_sketch() {
        return None;
    }
    let bins = config.bins;
    let mut est = FlowEstimate {
        key,
        pkt_est: u64::MAX,
        byte_est: u64::MAX,
        lat_bin_est: vec![u64::MAX; bins],
        iat_bin_est: vec![u64::MAX; bins],
        color_est: [u64::MAX; 3],
        diag_est: 0,
    };
    for row in 0..config.depth {
        let col = flow_hash(key, config.seeds[row], config.width);
        let r = &records[row * config.width + col];
        est.pkt_est = est.pkt_est.min(r.pkt as u64);
        est.byte_est = est.byte_est.min(r.bytes);
        for (e, &v) in est.lat_bin_est.iter_mut().zip(&r.lat_bins) {
            *e = (*e).min(v as u64);
        }
        for (e, &v) in est.iat_bin_est.iter_mut().zip(&r.iat_bins) {
            *e = (*e).min(v as u64);
        }
        for c in Color::ALL {
            est.color_est[c.index()] = est.color_est[c.index()].min(r.colors[c.index()] as u64);
        }
    }
    est.diag_est = region.diag_mass(&est.lat_bin_est, &est.iat_bin_est);
    Some(est)
}
