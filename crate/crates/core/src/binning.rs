// SPDX-License-Identifier: Apache-2.0

//! Bin-edge construction and drift monitoring.
//!
//! Edges are nanosecond boundaries; `B` bins need `B - 1` strictly
//! increasing edges. The diagnostic region is the top few latency bins plus
//! the bottom few IAT bins, where anomalies concentrate.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{BinningError, ConfigError, SketchError};
use crate::types::{Nanos, WindowTotals};

/// Windows of occupancy history the drift decision looks at.
pub const DRIFT_HISTORY: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosticRegion {
    pub lat_tail_bins: Vec<usize>,
    pub iat_head_bins: Vec<usize>,
}

impl DiagnosticRegion {
    /// The `lat_tail` highest latency bins and the `iat_head` lowest IAT bins.
    pub fn new(bins: usize, lat_tail: usize, iat_head: usize) -> Result<Self, ConfigError> {
        if lat_tail + iat_head == 0 {
            return Err(ConfigError::invalid(
                "diagnostic region",
                "needs at least one bin",
            ));
        }
        if lat_tail >= bins || iat_head >= bins {
            return Err(ConfigError::invalid(
                "diagnostic region",
                format!("{lat_tail}+{iat_head} bins do not leave room in {bins} bins"),
            ));
        }
        Ok(Self {
            lat_tail_bins: (bins - lat_tail..bins).collect(),
            iat_head_bins: (0..iat_head).collect(),
        })
    }

    /// `K`, the number of diagnostic bins.
    pub fn k_bins(&self) -> usize {
        self.lat_tail_bins.len() + self.iat_head_bins.len()
    }

    pub(crate) fn check_bins(&self, bins: usize) -> Result<(), SketchError> {
        if self.k_bins() == 0
            || self
                .lat_tail_bins
                .iter()
                .chain(&self.iat_head_bins)
                .any(|&b| b >= bins)
        {
            return Err(ConfigError::invalid(
                "diagnostic region",
                format!("bins out of range for {bins} bins"),
            )
            .into());
        }
        Ok(())
    }

    pub fn diag_mass(&self, lat: &[u64], iat: &[u64]) -> u64 {
        self.lat_tail_bins.iter().map(|&b| lat[b]).sum::<u64>()
            + self.iat_head_bins.iter().map(|&b| iat[b]).sum::<u64>()
    }

    pub fn diag_mass_u32(&self, lat: &[u32], iat: &[u32]) -> u64 {
        self.lat_tail_bins
            .iter()
            .map(|&b| lat[b] as u64)
            .sum::<u64>()
            + self
                .iat_head_bins
                .iter()
                .map(|&b| iat[b] as u64)
                .sum::<u64>()
    }

    pub fn in_lat_tail(&self, bin: usize) -> bool {
        self.lat_tail_bins.contains(&bin)
    }

    pub fn in_iat_head(&self, bin: usize) -> bool {
        self.iat_head_bins.contains(&bin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinningStrategy {
    TargetOccupancy,
    P90Log,
    LogUniform,
    Quantile,
}

impl BinningStrategy {
    pub const ALL: [BinningStrategy; 4] = [
        BinningStrategy::TargetOccupancy,
        BinningStrategy::P90Log,
        BinningStrategy::LogUniform,
        BinningStrategy::Quantile,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinningConfig {
    pub strategy: BinningStrategy,
    /// Target diagnostic occupancy.
    pub rho: f64,
    pub bins: usize,
    pub lat_tail_bins: usize,
    pub iat_head_bins: usize,
    /// Cap on the number of samples fed to the exact-sort quantile fit.
    pub fit_samples: usize,
}

impl Default for BinningConfig {
    fn default() -> Self {
        Self {
            strategy: BinningStrategy::TargetOccupancy,
            rho: 0.01,
            bins: 8,
            lat_tail_bins: 2,
            iat_head_bins: 1,
            fit_samples: 100_000,
        }
    }
}

impl BinningConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.rho > 0.0 && self.rho < 0.5) {
            return Err(ConfigError::invalid(
                "rho",
                format!("{} outside (0, 0.5)", self.rho),
            ));
        }
        if self.bins < 2 {
            return Err(ConfigError::invalid("bins", format!("{} < 2", self.bins)));
        }
        self.region()?;
        Ok(())
    }

    pub fn region(&self) -> Result<DiagnosticRegion, ConfigError> {
        DiagnosticRegion::new(self.bins, self.lat_tail_bins, self.iat_head_bins)
    }
}

/// Which end of the distribution is diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Latency: the top bins are diagnostic.
    Tail,
    /// Inter-arrival time: the bottom bins are diagnostic.
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FittedEdges {
    pub edges: Vec<Nanos>,
    /// The diagnostic bins for this side.
    pub diag_bins: Vec<usize>,
}

struct Sorted<'a>(&'a [Nanos]);

impl Sorted<'_> {
    fn len(&self) -> usize {
        self.0.len()
    }

    /// Order statistic at rank `floor(p * n)`.
    fn quantile(&self, p: f64) -> Nanos {
        let n = self.0.len();
        let idx = ((p * n as f64).floor() as usize).min(n - 1);
        self.0[idx]
    }

    fn count_at_least(&self, v: Nanos) -> usize {
        self.0.len() - self.0.partition_point(|&x| x < v)
    }

    fn min_positive(&self) -> Nanos {
        self.0.iter().copied().find(|&x| x > 0).unwrap_or(1)
    }

    fn max(&self) -> Nanos {
        *self.0.last().expect("non-empty")
    }
}

/// `n` points strictly inside `(lo, hi)` in geometric progression.
fn log_interior(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let lo = lo.max(1.0);
    let hi = hi.max(lo);
    (1..=n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n + 1) as f64))
        .collect()
}

/// Rounds to integers and restores strict monotonicity, moving edges away
/// from `anchor` (which stays put when there is room below it).
fn finalize(raw: &[f64], anchor: Option<usize>) -> Vec<Nanos> {
    let mut e: Vec<i128> = raw.iter().map(|v| v.round().max(1.0) as i128).collect();
    let a = anchor.unwrap_or(0);
    for i in (0..a).rev() {
        e[i] = e[i].min(e[i + 1] - 1);
    }
    if e.first().is_some_and(|&v| v < 1) {
        e[0] = 1;
        for i in 1..e.len() {
            e[i] = e[i].max(e[i - 1] + 1);
        }
    }
    for i in a.max(1)..e.len() {
        e[i] = e[i].max(e[i - 1] + 1);
    }
    e.into_iter().map(|v| v as Nanos).collect()
}

/// Fits `cfg.bins - 1` edges to baseline samples for one distribution.
///
/// `region_size` is the number of diagnostic bins on `side`.
pub fn fit_edges(
    samples: &[Nanos],
    cfg: &BinningConfig,
    region_size: usize,
    side: Side,
) -> Result<FittedEdges, BinningError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(BinningError::Empty);
    }
    let bins = cfg.bins;
    let n_edges = bins - 1;
    if region_size < 1 || region_size >= bins {
        return Err(
            ConfigError::invalid("region_size", format!("{region_size} for {bins} bins")).into(),
        );
    }
    let mut sorted = subsample(samples, cfg.fit_samples);
    sorted.sort_unstable();
    let s = Sorted(&sorted);
    let distinct = sorted.windows(2).filter(|w| w[0] != w[1]).count() + 1;
    if distinct < 2 {
        return Err(BinningError::Degenerate {
            duplicated: vec![format!("all {} samples equal {}", s.len(), sorted[0])],
        });
    }
    let lo = s.min_positive() as f64;
    let hi = s.max() as f64;

    let edges = match (cfg.strategy, side) {
        (BinningStrategy::TargetOccupancy, Side::Tail) => {
            let idx = ((1.0 - cfg.rho) * s.len() as f64).floor() as usize;
            let idx = idx.min(s.len() - 1);
            let mut boundary = sorted[idx];
            // ties at the quantile would push occupancy over the cap
            if s.count_at_least(boundary) > s.len() - idx {
                boundary += 1;
            }
            let b = n_edges - region_size;
            let mut raw = log_interior(lo, boundary as f64, b);
            raw.push(boundary as f64);
            let top = if hi > boundary as f64 {
                hi
            } else {
                2.0 * boundary as f64
            };
            raw.extend(log_interior(boundary as f64, top, region_size - 1));
            finalize(&raw, Some(b))
        }
        (BinningStrategy::TargetOccupancy, Side::Head) => {
            let boundary = s.quantile(cfg.rho).max(2);
            let b = region_size - 1;
            let mut raw = log_interior(lo.min(boundary as f64 / 2.0), boundary as f64, b);
            raw.push(boundary as f64);
            let top = if hi > boundary as f64 {
                hi
            } else {
                2.0 * boundary as f64
            };
            raw.extend(log_interior(boundary as f64, top, n_edges - b - 1));
            finalize(&raw, Some(b))
        }
        (BinningStrategy::P90Log, Side::Tail) => {
            let knee = s.quantile(0.90) as f64;
            let far = s.quantile(0.998) as f64;
            let mut raw = log_interior(lo, knee, n_edges.saturating_sub(2));
            raw.push(knee);
            raw.push(far);
            raw.truncate(n_edges);
            finalize(&raw, Some(n_edges.saturating_sub(2)))
        }
        (BinningStrategy::P90Log, Side::Head) => {
            let far = s.quantile(0.002) as f64;
            let knee = s.quantile(0.10) as f64;
            let mut raw = vec![far, knee];
            raw.extend(log_interior(knee, hi, n_edges.saturating_sub(2)));
            raw.truncate(n_edges);
            finalize(&raw, Some(0))
        }
        (BinningStrategy::LogUniform, _) => finalize(&log_interior(lo, hi, n_edges), None),
        (BinningStrategy::Quantile, _) => {
            let q: Vec<(f64, Nanos)> = (1..bins)
                .map(|i| (i as f64 / bins as f64, s.quantile(i as f64 / bins as f64)))
                .collect();
            let duplicated: Vec<String> = q
                .windows(2)
                .filter(|w| w[0].1 >= w[1].1)
                .map(|w| format!("q{:.3}=q{:.3}={}", w[0].0, w[1].0, w[1].1))
                .collect();
            if !duplicated.is_empty() {
                return Err(BinningError::Degenerate { duplicated });
            }
            q.into_iter().map(|(_, v)| v).collect()
        }
    };
    let diag_bins = match side {
        Side::Tail => (bins - region_size..bins).collect(),
        Side::Head => (0..region_size).collect(),
    };
    Ok(FittedEdges { edges, diag_bins })
}

/// Evenly strided subsample, keeping the fit cost bounded and deterministic.
fn subsample(samples: &[Nanos], cap: usize) -> Vec<Nanos> {
    if cap == 0 || samples.len() <= cap {
        return samples.to_vec();
    }
    (0..cap)
        .map(|i| samples[(i as u128 * samples.len() as u128 / cap as u128) as usize])
        .collect()
}

/// `n_diag / n_total`, zero for an empty window.
pub fn diagnostic_occupancy(totals: &WindowTotals) -> f64 {
    if totals.n_total == 0 {
        0.0
    } else {
        totals.n_diag as f64 / totals.n_total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RebinDecision {
    Rebin,
    NoRebin,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Re-bin when the median of the last [`DRIFT_HISTORY`] occupancies exceeds
/// `rho`, and only in anomaly-free periods.
pub fn maybe_rebin(history: &[f64], cfg: &BinningConfig, anomaly_free: bool) -> RebinDecision {
    if history.is_empty() || !anomaly_free {
        return RebinDecision::NoRebin;
    }
    let mut recent = history[history.len().saturating_sub(DRIFT_HISTORY)..].to_vec();
    if median(&mut recent) > cfg.rho {
        RebinDecision::Rebin
    } else {
        RebinDecision::NoRebin
    }
}

/// Rolling occupancy history for one queue.
#[derive(Debug, Clone, Default)]
pub struct DriftMonitor {
    history: VecDeque<f64>,
}

impl DriftMonitor {
    pub fn observe(&mut self, totals: &WindowTotals) {
        self.history.push_back(diagnostic_occupancy(totals));
        while self.history.len() > DRIFT_HISTORY {
            self.history.pop_front();
        }
    }

    pub fn decide(&self, cfg: &BinningConfig, anomaly_free: bool) -> RebinDecision {
        let h: Vec<f64> = self.history.iter().copied().collect();
        maybe_rebin(&h, cfg, anomaly_free)
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }
}
