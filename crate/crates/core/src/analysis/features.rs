// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::baselines::{Mode, Postcard, QfiCounters};
use crate::binning::DiagnosticRegion;
use crate::error::AnalysisError;
use crate::sim::Scope;
use crate::sketch::{bin_of, query_records, WindowExport};
use crate::types::SketchConfig;
use crate::types::{FlowKey, Nanos, PacketEvent};

/// Scalar features. Distributional ones are fractions in `[0, 1]` or bin
/// moments; volume is in packets and bytes per window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    Pkts,
    Bytes,
    LatTail,
    IatHead,
    DiagFrac,
    LatMeanBin,
    IatMeanBin,
    IatVarBin,
    YellowFrac,
    RedFrac,
    MeanDelayUs,
    LossFrac,
    TeidsPerQfi,
}

impl Feature {
    pub const ALL: [Feature; 13] = [
        Feature::Pkts,
        Feature::Bytes,
        Feature::LatTail,
        Feature::IatHead,
        Feature::DiagFrac,
        Feature::LatMeanBin,
        Feature::IatMeanBin,
        Feature::IatVarBin,
        Feature::YellowFrac,
        Feature::RedFrac,
        Feature::MeanDelayUs,
        Feature::LossFrac,
        Feature::TeidsPerQfi,
    ];
    pub const COUNT: usize = Self::ALL.len();

    pub fn name(self) -> &'static str {
        match self {
            Feature::Pkts => "pkts",
            Feature::Bytes => "bytes",
            Feature::LatTail => "lat_tail",
            Feature::IatHead => "iat_head",
            Feature::DiagFrac => "diag_frac",
            Feature::LatMeanBin => "lat_mean_bin",
            Feature::IatMeanBin => "iat_mean_bin",
            Feature::IatVarBin => "iat_var_bin",
            Feature::YellowFrac => "yellow_frac",
            Feature::RedFrac => "red_frac",
            Feature::MeanDelayUs => "mean_delay_us",
            Feature::LossFrac => "loss_frac",
            Feature::TeidsPerQfi => "teids_per_qfi",
        }
    }

    /// Volume features compare by ratio to baseline, the rest by difference.
    pub fn is_volume(self) -> bool {
        matches!(self, Feature::Pkts | Feature::Bytes | Feature::TeidsPerQfi)
    }
}

/// One scope's features in one window. `None` marks a field the mode
/// cannot observe, never a zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub window: u64,
    pub scope: Scope,
    pub mode: Mode,
    pub values: [Option<f64>; Feature::COUNT],
    pub lat_frac: Option<Vec<f64>>,
    pub iat_frac: Option<Vec<f64>>,
    /// The key was not in the control plane's flow table.
    pub unregistered: bool,
}

impl FeatureVector {
    pub fn get(&self, f: Feature) -> Option<f64> {
        self.values[f as usize]
    }

    fn set(&mut self, f: Feature, v: f64) {
        self.values[f as usize] = Some(v);
    }

    fn empty(window: u64, scope: Scope, mode: Mode) -> Self {
        Self {
            window,
            scope,
            mode,
            values: [None; Feature::COUNT],
            lat_frac: None,
            iat_frac: None,
            unregistered: false,
        }
    }

    /// CSV header for `bins` histogram bins.
    pub fn csv_header(bins: usize) -> String {
        let mut cols = vec![
            "window".to_string(),
            "mode".into(),
            "scope".into(),
            "teid".into(),
            "qfi".into(),
            "unregistered".into(),
        ];
        cols.extend(Feature::ALL.iter().map(|f| f.name().to_string()));
        cols.extend((0..bins).map(|i| format!("lat_b{i}")));
        cols.extend((0..bins).map(|i| format!("iat_b{i}")));
        cols.join(",")
    }

    pub fn to_csv(&self, bins: usize) -> String {
        use std::fmt::Write;
        let (kind, teid, qfi) = match self.scope {
            Scope::Flow(k) => ("flow", k.teid().to_string(), k.qfi()),
            Scope::Qfi(q) => ("qfi", "NA".to_string(), q),
        };
        let mut s = format!(
            "{},{},{kind},{teid},{qfi},{}",
            self.window,
            self.mode,
            u8::from(self.unregistered)
        );
        for v in &self.values {
            match v {
                Some(x) => write!(s, ",{}", fmt_num(*x)).unwrap(),
                None => s.push_str(",NA"),
            }
        }
        for h in [&self.lat_frac, &self.iat_frac] {
            match h {
                Some(v) => v
                    .iter()
                    .for_each(|x| write!(s, ",{}", fmt_num(*x)).unwrap()),
                None => (0..bins).for_each(|_| s.push_str(",NA")),
            }
        }
        s
    }
}

/// Fixed six-decimal rendering keeps output files byte-stable.
pub(crate) fn fmt_num(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

/// Additive per-flow masses for one window, estimated or exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowCounts {
    pub pkts: u64,
    pub bytes: u64,
    pub lat: Vec<u64>,
    pub iat: Vec<u64>,
    pub colors: [u64; 3],
    pub delay_sum_ns: Option<u128>,
}

impl FlowCounts {
    pub fn new(bins: usize) -> Self {
        Self {
            pkts: 0,
            bytes: 0,
            lat: vec![0; bins],
            iat: vec![0; bins],
            colors: [0; 3],
            delay_sum_ns: None,
        }
    }

    pub fn diag(&self, region: &DiagnosticRegion) -> u64 {
        region.diag_mass(&self.lat, &self.iat)
    }

    fn features(
        &self,
        window: u64,
        scope: Scope,
        mode: Mode,
        region: &DiagnosticRegion,
    ) -> FeatureVector {
        let mut fv = FeatureVector::empty(window, scope, mode);
        fv.set(Feature::Pkts, self.pkts as f64);
        fv.set(Feature::Bytes, self.bytes as f64);
        if let Some(sum) = self.delay_sum_ns {
            if self.pkts > 0 {
                fv.set(Feature::MeanDelayUs, sum as f64 / self.pkts as f64 / 1e3);
            }
        }
        if self.pkts == 0 {
            return fv;
        }
        let pk = self.pkts as f64;
        let frac = |x: u64, d: f64| {
            if d > 0.0 {
                (x as f64 / d).clamp(0.0, 1.0)
            } else {
                0.0
            }
        };
        let lat_total = self.lat.iter().sum::<u64>() as f64;
        let iat_total = self.iat.iter().sum::<u64>() as f64;
        let lat_frac: Vec<f64> = self.lat.iter().map(|&x| frac(x, lat_total)).collect();
        let iat_frac: Vec<f64> = self.iat.iter().map(|&x| frac(x, iat_total)).collect();
        let lat_tail: u64 = region.lat_tail_bins.iter().map(|&b| self.lat[b]).sum();
        let iat_head: u64 = region.iat_head_bins.iter().map(|&b| self.iat[b]).sum();
        fv.set(Feature::LatTail, frac(lat_tail, pk));
        fv.set(Feature::IatHead, frac(iat_head, iat_total));
        fv.set(Feature::DiagFrac, self.diag(region) as f64 / pk);
        let mean = |f: &[f64]| f.iter().enumerate().map(|(i, p)| i as f64 * p).sum::<f64>();
        let iat_mean = mean(&iat_frac);
        fv.set(Feature::LatMeanBin, mean(&lat_frac));
        fv.set(Feature::IatMeanBin, iat_mean);
        fv.set(
            Feature::IatVarBin,
            iat_frac
                .iter()
                .enumerate()
                .map(|(i, p)| (i as f64 - iat_mean).powi(2) * p)
                .sum(),
        );
        let color_total = self.colors.iter().sum::<u64>() as f64;
        fv.set(Feature::YellowFrac, frac(self.colors[1], color_total));
        fv.set(Feature::RedFrac, frac(self.colors[2], color_total));
        fv.lat_frac = Some(lat_frac);
        fv.iat_frac = Some(iat_frac);
        fv
    }
}

/// Exact per-flow accumulation over a packet list: the oracle for sketch
/// estimates and the postcard-mode feature source. IATs are taken between
/// consecutive packets of the same flow and carry over across windows.
#[derive(Debug, Clone)]
pub struct ExactFlows {
    lat_edges: HashMap<u16, Vec<Nanos>>,
    iat_edges: HashMap<u16, Vec<Nanos>>,
    bins: usize,
    last_seen: HashMap<FlowKey, Nanos>,
    current: BTreeMap<FlowKey, FlowCounts>,
    with_delay: bool,
}

impl ExactFlows {
    pub fn new(
        bins: usize,
        edges: impl IntoIterator<Item = (u16, Vec<Nanos>, Vec<Nanos>)>,
        with_delay: bool,
    ) -> Self {
        let mut lat_edges = HashMap::new();
        let mut iat_edges = HashMap::new();
        for (qid, lat, iat) in edges {
            lat_edges.insert(qid, lat);
            iat_edges.insert(qid, iat);
        }
        Self {
            lat_edges,
            iat_edges,
            bins,
            last_seen: HashMap::new(),
            current: BTreeMap::new(),
            with_delay,
        }
    }

    pub fn observe(
        &mut self,
        key: FlowKey,
        qid: u16,
        bytes: u32,
        arrival_ns: Nanos,
        sojourn_ns: Nanos,
        color: crate::types::Color,
    ) {
        let bins = self.bins;
        let with_delay = self.with_delay;
        let c = self.current.entry(key).or_insert_with(|| {
            let mut c = FlowCounts::new(bins);
            if with_delay {
                c.delay_sum_ns = Some(0);
            }
            c
        });
        c.pkts += 1;
        c.bytes += bytes as u64;
        if let Some(s) = c.delay_sum_ns.as_mut() {
            *s += sojourn_ns as u128;
        }
        c.lat[bin_of(sojourn_ns, &self.lat_edges[&qid])] += 1;
        if let Some(prev) = self.last_seen.insert(key, arrival_ns) {
            c.iat[bin_of(arrival_ns.saturating_sub(prev), &self.iat_edges[&qid])] += 1;
        }
        c.colors[color.index()] += 1;
    }

    pub fn observe_packet(&mut self, e: &PacketEvent) {
        self.observe(e.key, e.qid, e.bytes, e.arrival_ns, e.sojourn_ns, e.color);
    }

    /// Counts for the window just ended; per-flow timestamps are kept.
    pub fn take_window(&mut self) -> BTreeMap<FlowKey, FlowCounts> {
        std::mem::take(&mut self.current)
    }
}

fn teids_per_qfi(vectors: &mut [FeatureVector]) {
    let mut per_qfi: BTreeMap<u8, BTreeSet<u32>> = BTreeMap::new();
    for fv in vectors.iter() {
        if let (Scope::Flow(k), Some(p)) = (fv.scope, fv.get(Feature::Pkts)) {
            if p > 0.0 && !fv.unregistered {
                per_qfi.entry(k.qfi()).or_default().insert(k.teid());
            }
        }
    }
    for fv in vectors.iter_mut() {
        let n = per_qfi.get(&fv.scope.qfi()).map_or(0, |s| s.len());
        fv.set(Feature::TeidsPerQfi, n as f64);
    }
}

/// Sketch mode: one min-query per key against the window's exported
/// records, `exports` indexed by QID. Keys outside `registered` still get an
/// estimate, flagged as unregistered.
pub fn extract_sketch_features(
    window: u64,
    exports: &[WindowExport],
    config: &SketchConfig,
    keys: &[(FlowKey, u16)],
    registered: &BTreeSet<FlowKey>,
    region: &DiagnosticRegion,
) -> Result<Vec<FeatureVector>, AnalysisError> {
    if let Some(x) = exports.iter().find(|x| x.window != window) {
        return Err(AnalysisError::MixedWindows(window, x.window));
    }
    let mut out = Vec::with_capacity(keys.len());
    for &(key, qid) in keys {
        let Some(est) = exports
            .get(qid as usize)
            .and_then(|x| query_records(&x.records, config, key, region))
        else {
            continue;
        };
        let counts = FlowCounts {
            pkts: est.pkt_est,
            bytes: est.byte_est,
            lat: est.lat_bin_est,
            iat: est.iat_bin_est,
            colors: est.color_est,
            delay_sum_ns: None,
        };
        let mut fv = counts.features(window, Scope::Flow(key), Mode::Sketch, region);
        fv.unregistered = !registered.contains(&key);
        out.push(fv);
    }
    teids_per_qfi(&mut out);
    Ok(out)
}

/// Postcard mode: exact statistics over the sampled packets. Registered
/// keys without a postcard in the window get a zero-volume vector.
pub fn extract_postcard_features(
    window: u64,
    postcards: &[Postcard],
    sampler: &mut ExactFlows,
    registered: &BTreeSet<FlowKey>,
    region: &DiagnosticRegion,
) -> Result<Vec<FeatureVector>, AnalysisError> {
    for p in postcards {
        if p.window != window {
            return Err(AnalysisError::MixedWindows(window, p.window));
        }
        sampler.observe(p.key, p.qid, p.bytes, p.arrival_ns, p.sojourn_ns, p.color);
    }
    let mut counts = sampler.take_window();
    let bins = sampler.bins;
    for k in registered {
        counts.entry(*k).or_insert_with(|| FlowCounts::new(bins));
    }
    let mut out: Vec<FeatureVector> = counts
        .into_iter()
        .map(|(k, c)| {
            let mut fv = c.features(window, Scope::Flow(k), Mode::Dsmp, region);
            fv.set(
                Feature::MeanDelayUs,
                fv.get(Feature::MeanDelayUs).unwrap_or(0.0),
            );
            fv.unregistered = !registered.contains(&k);
            fv
        })
        .collect();
    teids_per_qfi(&mut out);
    Ok(out)
}

/// Counter mode: QFI scope only; distributional and per-TEID fields are absent.
pub fn extract_pm_features(rows: &[QfiCounters]) -> Result<Vec<FeatureVector>, AnalysisError> {
    let Some(first) = rows.first() else {
        return Ok(Vec::new());
    };
    rows.iter()
        .map(|r| {
            if r.window != first.window {
                return Err(AnalysisError::MixedWindows(first.window, r.window));
            }
            let mut fv = FeatureVector::empty(r.window, Scope::Qfi(r.qfi), Mode::Pm);
            fv.set(Feature::Pkts, r.pkt_count as f64);
            fv.set(Feature::Bytes, r.byte_count as f64);
            fv.set(Feature::MeanDelayUs, r.mean_delay_ns() as f64 / 1e3);
            let offered = r.pkt_count + r.drop_count;
            fv.set(
                Feature::LossFrac,
                if offered == 0 {
                    0.0
                } else {
                    r.drop_count as f64 / offered as f64
                },
            );
            Ok(fv)
        })
        .collect()
}
