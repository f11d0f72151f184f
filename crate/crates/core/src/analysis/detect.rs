// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::BufRead;

use super::features::{fmt_num, Feature, FeatureVector};
use super::linear::{blocked_folds, LogisticModel};
use crate::baselines::Mode;
use crate::error::{AnalysisError, RecordError};
use crate::sim::{AnomalyKind, GroundTruthLabel, Scope};
use crate::sizing::FlowBaseline;
use crate::types::FlowKey;

/// Which scorer produced an outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DetectorKind {
    DiagLift,
    Linear(AnomalyKind),
    /// Macro average of the per-kind linear detectors.
    LinearMacro,
    External,
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DetectorKind::DiagLift => f.write_str("diag_lift"),
            DetectorKind::Linear(k) => write!(f, "linear_{}", k.as_str()),
            DetectorKind::LinearMacro => f.write_str("linear"),
            DetectorKind::External => f.write_str("external"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutcome {
    pub window: u64,
    pub scope: Scope,
    pub mode: Mode,
    pub detector: DetectorKind,
    pub score: f64,
    pub threshold: f64,
    pub fired: bool,
}

impl DetectionOutcome {
    pub fn new(
        window: u64,
        scope: Scope,
        mode: Mode,
        detector: DetectorKind,
        score: f64,
        threshold: f64,
    ) -> Self {
        let score = score.clamp(0.0, 1.0);
        Self {
            window,
            scope,
            mode,
            detector,
            score,
            threshold,
            fired: score >= threshold,
        }
    }

    pub const CSV_HEADER: &'static str = "window,mode,detector,scope,score,threshold,fired";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.window,
            self.mode,
            self.detector,
            self.scope,
            fmt_num(self.score),
            fmt_num(self.threshold),
            u8::from(self.fired)
        )
    }
}

/// Smallest score that fires the lift rule: strictly above one half.
pub const LIFT_THRESHOLD: f64 = 0.500_000_000_000_000_1;

/// Compare the window's diagnostic ratio against the largest ratio the
/// baseline can produce under collision noise. Score is `r / (r + m)`, so
/// it crosses one half exactly when `r` exceeds `m`.
pub fn diag_lift_detector(fv: &FeatureVector, base: &FlowBaseline, eps: f64) -> DetectionOutcome {
    let mk = |score| {
        DetectionOutcome::new(
            fv.window,
            fv.scope,
            fv.mode,
            DetectorKind::DiagLift,
            score,
            LIFT_THRESHOLD,
        )
    };
    let pkts = fv.get(Feature::Pkts).unwrap_or(0.0);
    let Some(r) = fv.get(Feature::DiagFrac).filter(|_| pkts > 0.0) else {
        return mk(0.0);
    };
    let m = if base.x_k > 0.0 {
        base.max_baseline_ratio(eps)
    } else {
        0.0
    };
    if r + m <= 0.0 {
        return mk(0.0);
    }
    let raw = r / (r + m);
    let score = if r > m {
        raw.max(LIFT_THRESHOLD)
    } else {
        raw.min(0.5)
    };
    mk(score)
}

/// Per-detector feature subsets.
pub fn default_mask(kind: AnomalyKind) -> &'static [Feature] {
    use Feature::*;
    match kind {
        AnomalyKind::Microburst => &[Pkts, Bytes, IatHead, DiagFrac, LatTail, IatMeanBin],
        AnomalyKind::Congestion => &[LatTail, LatMeanBin, MeanDelayUs, LossFrac, Pkts],
        AnomalyKind::Contention => &[IatHead, IatVarBin, IatMeanBin, LatTail, MeanDelayUs],
        AnomalyKind::PolicyAbuse => &[Pkts, Bytes, YellowFrac, RedFrac, TeidsPerQfi, LossFrac],
    }
}

/// Mean feature values per (mode, scope) over anomaly-free windows.
#[derive(Debug, Clone, Default)]
pub struct Baselines {
    sums: HashMap<(Mode, Scope), ([f64; Feature::COUNT], [u32; Feature::COUNT])>,
}

impl Baselines {
    pub fn observe(&mut self, fv: &FeatureVector) {
        let e = self
            .sums
            .entry((fv.mode, fv.scope))
            .or_insert(([0.0; Feature::COUNT], [0; Feature::COUNT]));
        for (i, v) in fv.values.iter().enumerate() {
            if let Some(v) = v {
                e.0[i] += v;
                e.1[i] += 1;
            }
        }
    }

    pub fn mean(&self, mode: Mode, scope: Scope, f: Feature) -> Option<f64> {
        let (s, n) = self.sums.get(&(mode, scope))?;
        let i = f as usize;
        (n[i] > 0).then(|| s[i] / n[i] as f64)
    }

    /// Lifts over the mask. Volume features use a log ratio, the rest a
    /// difference. ABSENT fields become 0, the standardized "no signal".
    pub fn lift_row(&self, fv: &FeatureVector, mask: &[Feature]) -> Vec<f64> {
        mask.iter()
            .map(|&f| match fv.get(f) {
                None => 0.0,
                Some(v) => {
                    let b = self.mean(fv.mode, fv.scope, f).unwrap_or(0.0);
                    if f.is_volume() {
                        ((v + 1.0) / (b + 1.0)).ln()
                    } else {
                        v - b
                    }
                }
            })
            .collect()
    }
}

/// Ground truth for one feature vector under one kind: the flow scope or
/// its whole QFI carries an active label.
pub fn is_positive(labels: &LabelIndex, window: u64, scope: Scope, kind: AnomalyKind) -> bool {
    labels.has(window, scope, kind)
        || matches!(scope, Scope::Flow(_)) && labels.has(window, Scope::Qfi(scope.qfi()), kind)
}

#[derive(Debug, Clone, Default)]
pub struct LabelIndex {
    set: std::collections::HashSet<(u64, Scope, AnomalyKind)>,
    by_qfi: std::collections::HashSet<(u64, u8, AnomalyKind)>,
}

impl LabelIndex {
    pub fn new(labels: &[GroundTruthLabel]) -> Self {
        let mut ix = Self::default();
        for l in labels.iter().filter(|l| l.active) {
            ix.set.insert((l.window, l.scope, l.kind));
            ix.by_qfi.insert((l.window, l.scope.qfi(), l.kind));
        }
        ix
    }

    pub fn has(&self, window: u64, scope: Scope, kind: AnomalyKind) -> bool {
        self.set.contains(&(window, scope, kind))
    }

    /// Any label of `kind` touching `qfi` in `window`.
    pub fn unit_positive(&self, window: u64, qfi: u8, kind: AnomalyKind) -> bool {
        self.by_qfi.contains(&(window, qfi, kind))
    }
}

/// A fitted linear scorer for one kind in one mode.
#[derive(Debug, Clone)]
pub struct FittedDetector {
    pub kind: AnomalyKind,
    pub mode: Mode,
    pub mask: Vec<Feature>,
    pub model: LogisticModel,
}

impl FittedDetector {
    pub fn score(&self, baselines: &Baselines, fv: &FeatureVector) -> f64 {
        self.model.score(&baselines.lift_row(fv, &self.mask))
    }
}

/// Fit one scorer per kind on every vector of `mode`.
pub fn train_detectors(
    features: &[FeatureVector],
    labels: &LabelIndex,
    baselines: &Baselines,
    mode: Mode,
    kinds: &[AnomalyKind],
    lambda: f64,
) -> Result<Vec<FittedDetector>, AnalysisError> {
    let rows: Vec<&FeatureVector> = features.iter().filter(|f| f.mode == mode).collect();
    if rows.is_empty() {
        return Err(AnalysisError::NoFeatures);
    }
    kinds
        .iter()
        .map(|&kind| {
            let mask = default_mask(kind).to_vec();
            let x: Vec<Vec<f64>> = rows.iter().map(|f| baselines.lift_row(f, &mask)).collect();
            let y: Vec<bool> = rows
                .iter()
                .map(|f| is_positive(labels, f.window, f.scope, kind))
                .collect();
            let model = LogisticModel::fit(&x, &y, lambda).map_err(|e| match e {
                AnalysisError::SingleClass { missing, .. } => AnalysisError::SingleClass {
                    kind: kind.as_str().to_string(),
                    missing,
                },
                other => other,
            })?;
            Ok(FittedDetector {
                kind,
                mode,
                mask,
                model,
            })
        })
        .collect()
}

/// Out-of-fold scores from temporally blocked cross-validation: windows are
/// split into `folds` contiguous blocks and each block is scored by a model
/// fit on the others. A fold whose training part lacks a class scores 0.
pub fn cross_val_scores(
    x: &[Vec<f64>],
    y: &[bool],
    windows: &[u64],
    folds: usize,
    lambda: f64,
) -> Vec<f64> {
    let fold_of = blocked_folds(windows, folds);
    let k = fold_of.iter().copied().max().map_or(0, |m| m + 1);
    let mut scores = vec![0.0; x.len()];
    for fold in 0..k {
        let (mut tx, mut ty) = (Vec::new(), Vec::new());
        for i in 0..x.len() {
            if fold_of[i] != fold {
                tx.push(x[i].clone());
                ty.push(y[i]);
            }
        }
        if let Ok(model) = LogisticModel::fit(&tx, &ty, lambda) {
            for i in (0..x.len()).filter(|&i| fold_of[i] == fold) {
                scores[i] = model.score(&x[i]);
            }
        }
    }
    scores
}

/// Reads `window,teid,qfi,score` rows from an external scorer; an empty
/// `teid` marks a QFI-scope row. Lines starting with `#` or `window` are skipped.
pub fn read_external_scores(r: impl BufRead) -> Result<BTreeMap<(u64, Scope), f64>, RecordError> {
    let mut out = BTreeMap::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with("window") {
            continue;
        }
        let err = |reason: String| RecordError::Parse {
            line: i + 1,
            reason,
        };
        let f: Vec<&str> = t.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(err(format!("expected 4 fields, got {}", f.len())));
        }
        let window: u64 = f[0]
            .parse()
            .map_err(|_| err(format!("bad window {:?}", f[0])))?;
        let qfi: u8 = f[2]
            .parse()
            .map_err(|_| err(format!("bad qfi {:?}", f[2])))?;
        let scope = if f[1].is_empty() || f[1] == "NA" {
            Scope::Qfi(qfi)
        } else {
            let teid: u32 = f[1]
                .parse()
                .map_err(|_| err(format!("bad teid {:?}", f[1])))?;
            Scope::Flow(FlowKey::new(teid, qfi).map_err(|e| err(e.to_string()))?)
        };
        let score: f64 = f[3]
            .parse()
            .map_err(|_| err(format!("bad score {:?}", f[3])))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(err(format!("score {score} outside [0, 1]")));
        }
        out.insert((window, scope), score);
    }
    Ok(out)
}
