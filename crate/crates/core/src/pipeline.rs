// SPDX-License-Identifier: Apache-2.0

//! End-to-end run over aligned windows: calibrate, simulate, feed every
//! enabled telemetry mode, extract features, detect and evaluate.
//!
//! Every mode sees the same delivered packets and assigns them to windows
//! by arrival time, so window boundaries agree across modes. Bin edges and
//! per-flow baselines come from a separate anomaly-free calibration run
//! derived from the scenario seed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use crate::analysis::{
    average_precision, best_f1, cross_val_scores, default_mask, diag_lift_detector,
    extract_pm_features, extract_postcard_features, extract_sketch_features, f1_at, is_positive,
    summarize_ttfd, time_to_detect, Baselines, DetectionOutcome, DetectorKind, ExactFlows, Feature,
    FeatureVector, FlowCounts, LabelIndex, TtfdSummary, LIFT_THRESHOLD,
};
use crate::baselines::{
    export_cost, DeltaSmp, Mode, Observation, PmCollector, Postcard, WindowStats,
};
use crate::binning::{
    fit_edges, BinningConfig, DiagnosticRegion, DriftMonitor, RebinDecision, Side,
};
use crate::error::PipelineError;
use crate::sim::{
    generate_traffic, inject_all, label_windows, run_queues, AnomalyKind, Effect, GroundTruthLabel,
    QueueOutcome, ScenarioSpec, Scope,
};
use crate::sizing::FlowBaseline;
use crate::sketch::HistogramSketch;
use crate::types::{mix64, FlowKey, Nanos, SketchConfig, WindowTotals};

/// Seed tag separating the calibration run from the scenario run.
pub const CALIBRATION_TAG: u64 = 0xCA11_B8A7;
/// L2 penalty of the linear detectors.
pub const LAMBDA: f64 = 1.0;
const FALLBACK_NS: Nanos = 1_000_000;

/// Edges that put every sample equal to `v` outside the diagnostic side.
pub fn fallback_edges(v: Nanos, bins: usize, side: Side) -> Vec<Nanos> {
    let n = bins as u64 - 1;
    let v = v.max(1);
    match side {
        Side::Tail => (0..n).map(|i| v + 1 + i).collect(),
        Side::Head => {
            let mut e: Vec<Nanos> = (0..n).map(|i| v * (i + 1) / (n + 1)).collect();
            e[0] = e[0].max(1);
            for i in 1..e.len() {
                e[i] = e[i].max(e[i - 1] + 1);
            }
            e
        }
    }
}

fn fit_or_fallback(
    samples: &[Nanos],
    cfg: &BinningConfig,
    region_size: usize,
    side: Side,
) -> Vec<Nanos> {
    match fit_edges(samples, cfg, region_size, side) {
        Ok(f) => f.edges,
        Err(_) => {
            log::warn!(
                "bin fit fell back to fixed edges ({} samples)",
                samples.len()
            );
            fallback_edges(
                samples.first().copied().unwrap_or(FALLBACK_NS),
                cfg.bins,
                side,
            )
        }
    }
}

/// Per-QID latency and inter-arrival edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Edges {
    pub lat: Vec<Vec<Nanos>>,
    pub iat: Vec<Vec<Nanos>>,
}

impl Edges {
    /// Fit on delivered sojourns and per-flow arrival gaps.
    pub fn fit(outcome: &QueueOutcome, spec: &ScenarioSpec) -> Self {
        let q = spec.num_qids();
        let cfg = &spec.telemetry.binning;
        let mut lat: Vec<Vec<Nanos>> = vec![Vec::new(); q];
        let mut iat: Vec<Vec<Nanos>> = vec![Vec::new(); q];
        let mut last: HashMap<FlowKey, Nanos> = HashMap::new();
        for e in &outcome.delivered {
            lat[e.qid as usize].push(e.sojourn_ns);
            if let Some(prev) = last.insert(e.key, e.arrival_ns) {
                iat[e.qid as usize].push(e.arrival_ns - prev);
            }
        }
        Self {
            lat: lat
                .iter()
                .map(|s| fit_or_fallback(s, cfg, cfg.lat_tail_bins, Side::Tail))
                .collect(),
            iat: iat
                .iter()
                .map(|s| fit_or_fallback(s, cfg, cfg.iat_head_bins, Side::Head))
                .collect(),
        }
    }
}

/// Export bytes of one mode in one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowCost {
    pub window: u64,
    pub mode: Mode,
    pub bytes: u64,
}

/// Everything one window produced.
#[derive(Debug, Clone)]
pub struct WindowReport {
    pub window: u64,
    pub features: Vec<FeatureVector>,
    /// Ground-truth per-flow counts under the calibrated edges.
    pub exact: BTreeMap<FlowKey, FlowCounts>,
    /// Per-QID totals as the sketch reports them, or exact if sketches are off.
    pub totals: Vec<WindowTotals>,
    pub costs: Vec<WindowCost>,
}

struct Tap<'a> {
    spec: &'a ScenarioSpec,
    region: DiagnosticRegion,
    config: SketchConfig,
    sketches: Option<Vec<HistogramSketch>>,
    dsmp: Option<(DeltaSmp, ExactFlows, Vec<Postcard>)>,
    pm: Option<PmCollector>,
    exact: ExactFlows,
    keys: Vec<(FlowKey, u16)>,
    registered: BTreeSet<FlowKey>,
    drift: Option<(Vec<DriftMonitor>, Vec<Vec<Nanos>>)>,
    rebins: u64,
}

fn edge_triples(edges: &Edges) -> impl Iterator<Item = (u16, Vec<Nanos>, Vec<Nanos>)> + '_ {
    edges
        .lat
        .iter()
        .zip(&edges.iat)
        .enumerate()
        .map(|(q, (l, i))| (q as u16, l.clone(), i.clone()))
}

impl<'a> Tap<'a> {
    fn new(spec: &'a ScenarioSpec, modes: &[Mode], edges: &Edges) -> Result<Self, PipelineError> {
        let t = &spec.telemetry;
        let region = t
            .binning
            .region()
            .map_err(|e| crate::error::ScenarioError::field("telemetry.binning", e.to_string()))?;
        let config = spec.sketch_config()?;
        let bins = t.binning.bins;
        let sketches = if modes.contains(&Mode::Sketch) {
            Some(
                (0..spec.num_qids())
                    .map(|q| {
                        HistogramSketch::new(
                            config.clone(),
                            q as u16,
                            edges.lat[q].clone(),
                            edges.iat[q].clone(),
                            region.clone(),
                        )
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            )
        } else {
            None
        };
        let dsmp = modes.contains(&Mode::Dsmp).then(|| {
            (
                DeltaSmp::new(t.dsmp_delta_ns.max(1), t.dsmp_metric, spec.window_ns()),
                ExactFlows::new(bins, edge_triples(edges), true),
                Vec::new(),
            )
        });
        let pm = modes
            .contains(&Mode::Pm)
            .then(|| PmCollector::new(spec.window_ns(), spec.qfi_map.iter().map(|m| m.qfi)));
        let keys: Vec<(FlowKey, u16)> = spec
            .flows
            .iter()
            .map(|f| (f.key(), spec.qid_of(f.qfi).expect("validated mapping")))
            .collect();
        let drift = (t.rebin && sketches.is_some()).then(|| {
            (
                vec![DriftMonitor::default(); spec.num_qids()],
                vec![Vec::new(); spec.num_qids()],
            )
        });
        Ok(Self {
            spec,
            region,
            config,
            sketches,
            dsmp,
            pm,
            exact: ExactFlows::new(bins, edge_triples(edges), false),
            registered: keys.iter().map(|k| k.0).collect(),
            keys,
            drift,
            rebins: 0,
        })
    }

    fn packet(&mut self, e: &crate::types::PacketEvent, depth: u32) -> Result<(), PipelineError> {
        self.exact.observe_packet(e);
        if let Some(sk) = self.sketches.as_mut() {
            sk[e.qid as usize].update(e)?;
        }
        if let Some((filter, _, cards)) = self.dsmp.as_mut() {
            if let Some(p) = filter.delta_smp_filter(e, depth) {
                cards.push(p);
            }
        }
        if let Some(pm) = self.pm.as_mut() {
            pm.observe(Observation::Packet(e));
        }
        if let Some((_, samples)) = self.drift.as_mut() {
            samples[e.qid as usize].push(e.sojourn_ns);
        }
        Ok(())
    }

    fn close<W: Write>(
        &mut self,
        window: u64,
        anomaly_free: bool,
        mut records: Option<&mut W>,
    ) -> Result<WindowReport, PipelineError> {
        let t = &self.spec.telemetry;
        let bins = t.binning.bins;
        let mut features = Vec::new();
        let mut costs = Vec::new();
        let exact = self.exact.take_window();
        let mut totals = vec![WindowTotals::default(); self.spec.num_qids()];
        for (k, c) in &exact {
            if let Some(q) = self.spec.qid_of(k.qfi()) {
                totals[q as usize].n_total += c.pkts;
                totals[q as usize].n_diag += c.diag(&self.region);
            }
        }
        let stats = WindowStats {
            width: t.width,
            depth: t.depth,
            num_qids: self.spec.num_qids(),
            bins,
            ..Default::default()
        };

        if let Some(sketches) = self.sketches.as_mut() {
            let exports: Vec<_> = sketches
                .iter_mut()
                .map(|s| s.export_window(window))
                .collect();
            if let Some(w) = records.as_deref_mut() {
                for r in exports
                    .iter()
                    .flat_map(|x| &x.records)
                    .filter(|r| r.pkt > 0 || r.iat_bins.iter().any(|&v| v > 0))
                {
                    writeln!(w, "{}", r.to_line())?;
                }
            }
            totals = exports.iter().map(|x| x.totals).collect();
            features.extend(extract_sketch_features(
                window,
                &exports,
                &self.config,
                &self.keys,
                &self.registered,
                &self.region,
            )?);
            costs.push(WindowCost {
                window,
                mode: Mode::Sketch,
                bytes: export_cost(Mode::Sketch, &stats),
            });
            if let Some((monitors, samples)) = self.drift.as_mut() {
                for (q, sk) in sketches.iter_mut().enumerate() {
                    monitors[q].observe(&totals[q]);
                    let window_samples = std::mem::take(&mut samples[q]);
                    if monitors[q].decide(&t.binning, anomaly_free) == RebinDecision::Rebin {
                        if let Ok(fit) = fit_edges(
                            &window_samples,
                            &t.binning,
                            t.binning.lat_tail_bins,
                            Side::Tail,
                        ) {
                            let iat = sk.iat_edges().to_vec();
                            sk.set_edges(fit.edges, iat, self.region.clone())?;
                            monitors[q].reset();
                            self.rebins += 1;
                        }
                    }
                }
            }
        }
        if let Some((_, sampler, cards)) = self.dsmp.as_mut() {
            let cards = std::mem::take(cards);
            if let Some(w) = records.as_deref_mut() {
                for p in &cards {
                    writeln!(w, "{}", p.to_line())?;
                }
            }
            features.extend(extract_postcard_features(
                window,
                &cards,
                sampler,
                &self.registered,
                &self.region,
            )?);
            costs.push(WindowCost {
                window,
                mode: Mode::Dsmp,
                bytes: export_cost(
                    Mode::Dsmp,
                    &WindowStats {
                        postcards: cards.len(),
                        ..stats
                    },
                ),
            });
        }
        if let Some(pm) = self.pm.as_mut() {
            let rows = pm.close_window(window);
            if let Some(w) = records {
                for r in &rows {
                    writeln!(w, "{}", r.to_line())?;
                }
            }
            features.extend(extract_pm_features(&rows)?);
            costs.push(WindowCost {
                window,
                mode: Mode::Pm,
                bytes: export_cost(
                    Mode::Pm,
                    &WindowStats {
                        active_qfis: rows.len(),
                        ..stats
                    },
                ),
            });
        }
        Ok(WindowReport {
            window,
            features,
            exact,
            totals,
            costs,
        })
    }
}

/// Feed delivered packets and drops in arrival order, closing every window
/// of the horizon, including empty ones.
fn drive<W: Write>(
    tap: &mut Tap<'_>,
    outcome: &QueueOutcome,
    windows: u64,
    anomalous: &BTreeSet<u64>,
    mut records: Option<&mut W>,
    mut on_window: impl FnMut(WindowReport),
) -> Result<(), PipelineError> {
    let win = tap.spec.window_ns();
    let mut next = 0u64;
    let (mut i, mut j) = (0, 0);
    let (pk, dr) = (&outcome.delivered, &outcome.drops);
    loop {
        let take_packet = match (pk.get(i), dr.get(j)) {
            (None, None) => break,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (Some(p), Some(d)) => p.arrival_ns <= d.arrival_ns,
        };
        let arrival = if take_packet {
            pk[i].arrival_ns
        } else {
            dr[j].arrival_ns
        };
        let w = arrival / win;
        if w >= windows {
            break;
        }
        while next < w {
            on_window(tap.close(next, !anomalous.contains(&next), records.as_deref_mut())?);
            next += 1;
        }
        if take_packet {
            tap.packet(&pk[i], outcome.queue_depth[i])?;
            i += 1;
        } else {
            if let Some(pm) = tap.pm.as_mut() {
                pm.observe(Observation::Drop(&dr[j]));
            }
            j += 1;
        }
    }
    while next < windows {
        on_window(tap.close(next, !anomalous.contains(&next), records.as_deref_mut())?);
        next += 1;
    }
    Ok(())
}

/// What the anomaly-free calibration run established.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub edges: Edges,
    pub windows: u64,
    /// Mean per-window diagnostic occupancy per QID.
    pub n_t: Vec<f64>,
    /// Mean per-window packet mass per QID.
    pub n_prime: Vec<f64>,
    /// Exact per-flow masses, averaged over windows.
    pub flows: BTreeMap<FlowKey, FlowBaseline>,
    /// Per-mode feature means, the reference for lifts.
    pub features: Baselines,
    /// Postcard-mode per-flow masses, for the lift rule on postcards.
    pub dsmp_flows: BTreeMap<FlowKey, FlowBaseline>,
}

impl Calibration {
    /// Baseline of `key` under `mode`; unseen flows get an all-zero baseline.
    pub fn baseline(&self, mode: Mode, key: FlowKey, qid: u16) -> FlowBaseline {
        let table = if mode == Mode::Dsmp {
            &self.dsmp_flows
        } else {
            &self.flows
        };
        table.get(&key).copied().unwrap_or_else(|| {
            FlowBaseline::new(0.0, 0.0, self.n_t[qid as usize], self.n_prime[qid as usize])
        })
    }
}

pub fn calibrate(spec: &ScenarioSpec) -> Result<Calibration, PipelineError> {
    let cal = spec.anomaly_free(
        mix64(spec.seed ^ CALIBRATION_TAG),
        spec.telemetry.calibration_s.max(1),
    );
    let arrivals = generate_traffic(&cal)?;
    let outcome = run_queues(&arrivals, &cal)?;
    drop(arrivals);
    let edges = Edges::fit(&outcome, &cal);
    let mut tap = Tap::new(&cal, &Mode::ALL, &edges)?;
    let windows = cal.num_windows();
    let q = cal.num_qids();
    let mut features = Baselines::default();
    let mut n_t = vec![0.0; q];
    let mut n_prime = vec![0.0; q];
    let mut sums: BTreeMap<FlowKey, (f64, f64)> = BTreeMap::new();
    let mut dsmp_sums: BTreeMap<FlowKey, (f64, f64)> = BTreeMap::new();
    let region = tap.region.clone();
    drive(
        &mut tap,
        &outcome,
        windows,
        &BTreeSet::new(),
        None::<&mut std::io::Sink>,
        |rep| {
            for fv in &rep.features {
                features.observe(fv);
                if let (Mode::Dsmp, Scope::Flow(k)) = (fv.mode, fv.scope) {
                    let pk = fv.get(Feature::Pkts).unwrap_or(0.0);
                    let e = dsmp_sums.entry(k).or_default();
                    e.0 += pk;
                    e.1 += pk * fv.get(Feature::DiagFrac).unwrap_or(0.0);
                }
            }
            for (k, c) in &rep.exact {
                let e = sums.entry(*k).or_default();
                e.0 += c.pkts as f64;
                e.1 += c.diag(&region) as f64;
            }
            for (i, t) in rep.totals.iter().enumerate() {
                n_t[i] += t.n_diag as f64;
                n_prime[i] += t.n_total as f64;
            }
        },
    )?;
    let n = windows as f64;
    n_t.iter_mut()
        .chain(n_prime.iter_mut())
        .for_each(|v| *v /= n);
    let to_base = |sums: BTreeMap<FlowKey, (f64, f64)>| -> BTreeMap<FlowKey, FlowBaseline> {
        sums.into_iter()
            .filter_map(|(k, (x, xt))| {
                let qid = cal.qid_of(k.qfi())? as usize;
                Some((k, FlowBaseline::new(x / n, xt / n, n_t[qid], n_prime[qid])))
            })
            .collect()
    };
    Ok(Calibration {
        edges,
        windows,
        flows: to_base(sums),
        dsmp_flows: to_base(dsmp_sums),
        n_t,
        n_prime,
        features,
    })
}

/// One row of the metrics report. `kind: None` is the macro average.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub mode: Mode,
    /// `None` when the scenario gives nothing to train on.
    pub detector: Option<DetectorKind>,
    pub kind: Option<AnomalyKind>,
    pub auprc: Option<f64>,
    pub f1: Option<f64>,
    pub threshold: Option<f64>,
    pub ttfd: TtfdSummary,
    pub positives: usize,
    pub units: usize,
    pub export_bytes_per_window: f64,
    pub export_mbps: f64,
}

/// Exact per-flow truth kept for inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactRow {
    pub window: u64,
    pub key: FlowKey,
    pub pkts: u64,
    pub diag: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub windows: u64,
    pub calibration: Calibration,
    pub labels: Vec<GroundTruthLabel>,
    pub features: Vec<FeatureVector>,
    /// Per-flow lift-rule outcomes for the sketch and postcard modes.
    pub flow_lift: Vec<DetectionOutcome>,
    /// Per-(window, QFI) outcomes of every detector, the evaluation unit.
    pub unit_outcomes: Vec<DetectionOutcome>,
    pub metrics: Vec<MetricsRow>,
    pub costs: Vec<WindowCost>,
    pub exact: Vec<ExactRow>,
    pub offered: usize,
    pub delivered: usize,
    pub dropped: usize,
    pub rebins: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub modes: Vec<Mode>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            modes: Mode::ALL.to_vec(),
        }
    }
}

/// Anomaly kinds the scenario actually schedules.
fn scheduled_kinds(spec: &ScenarioSpec) -> Vec<AnomalyKind> {
    let set: BTreeSet<AnomalyKind> = spec
        .anomalies
        .iter()
        .filter(|a| a.duration_ms > 0)
        .map(|a| a.kind())
        .collect();
    AnomalyKind::ALL
        .into_iter()
        .filter(|k| set.contains(k))
        .collect()
}

pub fn run<W: Write>(
    spec: &ScenarioSpec,
    opts: &RunOptions,
    records: Option<&mut W>,
) -> Result<RunOutput, PipelineError> {
    spec.validate()?;
    let calibration = calibrate(spec)?;
    let arrivals = inject_all(generate_traffic(spec)?, spec)?;
    let offered = arrivals.len();
    let outcome = run_queues(&arrivals, spec)?;
    drop(arrivals);
    let labels = label_windows(spec);
    let anomalous: BTreeSet<u64> = labels.iter().map(|l| l.window).collect();
    let modes: Vec<Mode> = Mode::ALL
        .into_iter()
        .filter(|m| opts.modes.contains(m))
        .collect();
    let mut tap = Tap::new(spec, &modes, &calibration.edges)?;
    let windows = spec.num_windows();
    let mut features = Vec::new();
    let mut costs = Vec::new();
    let mut exact = Vec::new();
    let region = tap.region.clone();
    drive(&mut tap, &outcome, windows, &anomalous, records, |rep| {
        features.extend(rep.features);
        costs.extend(rep.costs);
        exact.extend(rep.exact.iter().map(|(k, c)| ExactRow {
            window: rep.window,
            key: *k,
            pkts: c.pkts,
            diag: c.diag(&region),
        }));
    })?;
    let rebins = tap.rebins;

    let eps_sketch = tap.config.epsilon();
    let flow_lift: Vec<DetectionOutcome> = features
        .iter()
        .filter_map(|fv| {
            let Scope::Flow(k) = fv.scope else {
                return None;
            };
            let eps = match fv.mode {
                Mode::Sketch => eps_sketch,
                Mode::Dsmp => 0.0,
                Mode::Pm => return None,
            };
            let qid = spec.qid_of(k.qfi())?;
            Some(diag_lift_detector(
                fv,
                &calibration.baseline(fv.mode, k, qid),
                eps,
            ))
        })
        .collect();

    let ev = Evaluator::new(spec, &labels);
    let mut unit_outcomes = Vec::new();
    let mut metrics = Vec::new();
    for &mode in &modes {
        let idx: Vec<usize> = (0..features.len())
            .filter(|&i| features[i].mode == mode)
            .collect();
        let cost = ModeCost::of(&costs, mode, windows, spec.duration_s);
        let mut detectors: Vec<(DetectorKind, Vec<f64>)> = Vec::new();
        if mode != Mode::Pm {
            let lift = flow_lift
                .iter()
                .filter(|o| o.mode == mode)
                .map(|o| (o.scope, o.window, o.score));
            detectors.push((DetectorKind::DiagLift, ev.unit_max(lift)));
        }
        for &kind in &ev.kinds {
            let mask = default_mask(kind);
            let x: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| calibration.features.lift_row(&features[i], mask))
                .collect();
            let y: Vec<bool> = idx
                .iter()
                .map(|&i| is_positive(&ev.labels, features[i].window, features[i].scope, kind))
                .collect();
            let w: Vec<u64> = idx.iter().map(|&i| features[i].window).collect();
            let scores = if x.is_empty() {
                Vec::new()
            } else {
                cross_val_scores(&x, &y, &w, spec.telemetry.folds, LAMBDA)
            };
            let per_vec = idx
                .iter()
                .zip(scores)
                .map(|(&i, s)| (features[i].scope, features[i].window, s));
            detectors.push((DetectorKind::Linear(kind), ev.unit_max(per_vec)));
        }

        let mut linear_rows = Vec::new();
        for (detector, scores) in detectors {
            let (rows, threshold) = ev.evaluate(mode, detector, &scores, cost);
            if matches!(detector, DetectorKind::Linear(_)) {
                linear_rows.extend(rows.iter().cloned());
            }
            metrics.extend(rows.into_iter().map(|r| r.0));
            unit_outcomes.extend(ev.units.iter().zip(&scores).map(|(&(w, q), &s)| {
                DetectionOutcome::new(w, Scope::Qfi(q), mode, detector, s, threshold)
            }));
        }
        if linear_rows.len() > 1 {
            let mut m = macro_row(&linear_rows);
            m.detector = Some(DetectorKind::LinearMacro);
            metrics.push(m);
        }
        if ev.kinds.is_empty() && mode == Mode::Pm {
            metrics.push(ev.empty_row(mode, None, None, cost));
        }
    }

    Ok(RunOutput {
        windows,
        calibration,
        labels,
        features,
        flow_lift,
        unit_outcomes,
        metrics,
        costs,
        exact,
        offered,
        delivered: outcome.delivered.len(),
        dropped: outcome.drops.len(),
        rebins,
    })
}

/// QFIs an anomaly touches, including the remap target of policy abuse.
pub fn anomaly_qfis(a: &crate::sim::AnomalyEvent, spec: &ScenarioSpec) -> BTreeSet<u8> {
    let mut qs: BTreeSet<u8> = a
        .qfis
        .iter()
        .copied()
        .chain(a.flows.iter().map(|k| k.qfi()))
        .collect();
    if let Effect::PolicyAbuse { remap_qfi, .. } = a.effect {
        qs.insert(remap_qfi);
    }
    qs.retain(|q| spec.qid_of(*q).is_some());
    qs
}

/// Export cost of one mode over a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeCost {
    pub bytes_per_window: f64,
    pub mbps: f64,
}

impl ModeCost {
    pub fn of(costs: &[WindowCost], mode: Mode, windows: u64, duration_s: u64) -> Self {
        let total: u64 = costs
            .iter()
            .filter(|c| c.mode == mode)
            .map(|c| c.bytes)
            .sum();
        Self {
            bytes_per_window: total as f64 / windows.max(1) as f64,
            mbps: total as f64 * 8.0 / duration_s.max(1) as f64 / 1e6,
        }
    }
}

type KindRow = (MetricsRow, Vec<Option<Nanos>>);

/// Scores detectors on (window, QFI) units against the labels.
struct Evaluator<'a> {
    spec: &'a ScenarioSpec,
    labels: LabelIndex,
    kinds: Vec<AnomalyKind>,
    units: Vec<(u64, u8)>,
}

impl<'a> Evaluator<'a> {
    fn new(spec: &'a ScenarioSpec, labels: &[GroundTruthLabel]) -> Self {
        let qfis: BTreeSet<u8> = spec.qfi_map.iter().map(|m| m.qfi).collect();
        Self {
            spec,
            labels: LabelIndex::new(labels),
            kinds: scheduled_kinds(spec),
            units: (0..spec.num_windows())
                .flat_map(|w| qfis.iter().map(move |&q| (w, q)))
                .collect(),
        }
    }

    /// A unit scores the maximum over the vectors that fall in it.
    fn unit_max(&self, scored: impl Iterator<Item = (Scope, u64, f64)>) -> Vec<f64> {
        let mut best: HashMap<(u64, u8), f64> = HashMap::new();
        for (scope, w, s) in scored {
            let e = best.entry((w, scope.qfi())).or_insert(0.0);
            *e = e.max(s);
        }
        self.units
            .iter()
            .map(|u| best.get(u).copied().unwrap_or(0.0))
            .collect()
    }

    fn empty_row(
        &self,
        mode: Mode,
        detector: Option<DetectorKind>,
        threshold: Option<f64>,
        cost: ModeCost,
    ) -> MetricsRow {
        MetricsRow {
            mode,
            detector,
            kind: None,
            auprc: None,
            f1: None,
            threshold,
            ttfd: summarize_ttfd(&[]),
            positives: 0,
            units: self.units.len(),
            export_bytes_per_window: cost.bytes_per_window,
            export_mbps: cost.mbps,
        }
    }

    /// Rows for every kind the detector answers for, plus a macro row when
    /// there are several. The lift rule keeps its fixed threshold; other
    /// detectors get the F1-maximizing one. Returns the last threshold used.
    fn evaluate(
        &self,
        mode: Mode,
        detector: DetectorKind,
        scores: &[f64],
        cost: ModeCost,
    ) -> (Vec<KindRow>, f64) {
        let kinds = match detector {
            DetectorKind::Linear(k) => vec![k],
            _ => self.kinds.clone(),
        };
        let mut last_threshold = if detector == DetectorKind::DiagLift {
            LIFT_THRESHOLD
        } else {
            f64::INFINITY
        };
        let mut rows = Vec::new();
        for kind in kinds {
            let scored: Vec<(f64, bool)> = self
                .units
                .iter()
                .zip(scores)
                .map(|(&(w, q), &s)| (s, self.labels.unit_positive(w, q, kind)))
                .collect();
            let (f1, threshold) = match detector {
                DetectorKind::DiagLift => (
                    scored
                        .iter()
                        .any(|s| s.1)
                        .then(|| f1_at(&scored, LIFT_THRESHOLD)),
                    LIFT_THRESHOLD,
                ),
                _ => match best_f1(&scored) {
                    Some((f, t)) => (Some(f), t),
                    None => (None, f64::INFINITY),
                },
            };
            last_threshold = threshold;
            let fired: HashMap<(u64, u8), bool> = self
                .units
                .iter()
                .zip(scores)
                .map(|(&u, &s)| (u, s >= threshold))
                .collect();
            let delays: Vec<Option<Nanos>> = self
                .spec
                .anomalies
                .iter()
                .filter(|a| a.kind() == kind && a.duration_ms > 0)
                .map(|a| {
                    let qs = anomaly_qfis(a, self.spec);
                    time_to_detect(a.start_ns(), a.end_ns(), self.spec.window_ns(), |w| {
                        qs.iter()
                            .any(|&q| fired.get(&(w, q)).copied().unwrap_or(false))
                    })
                })
                .collect();
            rows.push((
                MetricsRow {
                    mode,
                    detector: Some(detector),
                    kind: Some(kind),
                    auprc: average_precision(&scored),
                    f1,
                    threshold: Some(threshold),
                    ttfd: summarize_ttfd(&delays),
                    positives: scored.iter().filter(|s| s.1).count(),
                    units: scored.len(),
                    export_bytes_per_window: cost.bytes_per_window,
                    export_mbps: cost.mbps,
                },
                delays,
            ));
        }
        if rows.is_empty() {
            rows.push((
                self.empty_row(mode, Some(detector), Some(last_threshold), cost),
                Vec::new(),
            ));
        } else if rows.len() > 1 {
            rows.push((macro_row(&rows), Vec::new()));
        }
        (rows, last_threshold)
    }
}

/// Evaluate scores from an external scorer, keyed by (window, scope), as if
/// they came from `mode`. Returns metrics rows and unit outcomes.
pub fn evaluate_external(
    spec: &ScenarioSpec,
    out: &RunOutput,
    mode: Mode,
    scores: &BTreeMap<(u64, Scope), f64>,
) -> (Vec<MetricsRow>, Vec<DetectionOutcome>) {
    let ev = Evaluator::new(spec, &out.labels);
    let unit = ev.unit_max(scores.iter().map(|(&(w, scope), &s)| (scope, w, s)));
    let cost = ModeCost::of(&out.costs, mode, out.windows, spec.duration_s);
    let (rows, threshold) = ev.evaluate(mode, DetectorKind::External, &unit, cost);
    let outcomes = ev
        .units
        .iter()
        .zip(&unit)
        .map(|(&(w, q), &s)| {
            DetectionOutcome::new(w, Scope::Qfi(q), mode, DetectorKind::External, s, threshold)
        })
        .collect();
    (rows.into_iter().map(|r| r.0).collect(), outcomes)
}

fn macro_row(rows: &[KindRow]) -> MetricsRow {
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let first = &rows[0].0;
    let pooled: Vec<Option<Nanos>> = rows.iter().flat_map(|r| r.1.iter().copied()).collect();
    MetricsRow {
        kind: None,
        auprc: mean(rows.iter().filter_map(|r| r.0.auprc).collect()),
        f1: mean(rows.iter().filter_map(|r| r.0.f1).collect()),
        threshold: None,
        ttfd: summarize_ttfd(&pooled),
        positives: rows.iter().map(|r| r.0.positives).sum(),
        units: rows.iter().map(|r| r.0.units).sum(),
        ..first.clone()
    }
}
