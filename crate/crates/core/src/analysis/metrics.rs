// SPDX-License-Identifier: Apache-2.0

use crate::types::Nanos;

/// Groups of tied scores in descending order as (positives, total) counts.
fn tie_groups(scored: &[(f64, bool)]) -> Vec<(f64, usize, usize)> {
    let mut s: Vec<(f64, bool)> = scored.to_vec();
    s.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    for (score, pos) in s {
        match out.last_mut() {
            Some(g) if g.0 == score => {
                g.1 += usize::from(pos);
                g.2 += 1;
            }
            _ => out.push((score, usize::from(pos), 1)),
        }
    }
    out
}

/// Area under the precision-recall curve by step interpolation. Tied scores
/// enter together. `None` when there is no positive.
pub fn average_precision(scored: &[(f64, bool)]) -> Option<f64> {
    let total_pos = scored.iter().filter(|s| s.1).count();
    if total_pos == 0 {
        return None;
    }
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    for (_, pos, n) in tie_groups(scored) {
        tp += pos;
        seen += n;
        ap += pos as f64 * tp as f64 / seen as f64;
    }
    Some((ap / total_pos as f64).min(1.0))
}

pub fn f1_at(scored: &[(f64, bool)], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for &(s, y) in scored {
        match (s >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// The threshold maximizing F1 and that F1. Ties prefer the higher threshold.
/// The lowest score is never a candidate: alarming on every unit carries no
/// information. With a single distinct score the result is F1 0 at +inf.
pub fn best_f1(scored: &[(f64, bool)]) -> Option<(f64, f64)> {
    let total_pos = scored.iter().filter(|s| s.1).count();
    if total_pos == 0 {
        return None;
    }
    let groups = tie_groups(scored);
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut best = (0.0, f64::INFINITY);
    for &(score, pos, n) in &groups[..groups.len() - 1] {
        tp += pos;
        seen += n;
        let f1 = 2.0 * tp as f64 / (seen + total_pos) as f64;
        if f1 > best.0 {
            best = (f1, score);
        }
    }
    Some(best)
}

/// Delay from onset to the end of the first fired window among the windows
/// the anomaly spans. Alarms exist only once a window is exported, so the
/// delay is at most one window when the onset window fires.
pub fn time_to_detect(
    onset_ns: Nanos,
    end_ns: Nanos,
    window_ns: Nanos,
    fired: impl Fn(u64) -> bool,
) -> Option<Nanos> {
    let first = onset_ns / window_ns;
    let last = end_ns.saturating_sub(1).max(onset_ns) / window_ns;
    (first..=last)
        .find(|&w| fired(w))
        .map(|w| ((w + 1) * window_ns).saturating_sub(onset_ns))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TtfdSummary {
    pub median_ns: Option<f64>,
    pub detected: usize,
    /// Instances never detected; excluded from the median.
    pub censored: usize,
}

pub fn summarize_ttfd(delays: &[Option<Nanos>]) -> TtfdSummary {
    let mut d: Vec<Nanos> = delays.iter().flatten().copied().collect();
    d.sort_unstable();
    let median_ns = match d.len() {
        0 => None,
        n if n % 2 == 1 => Some(d[n / 2] as f64),
        n => Some((d[n / 2 - 1] as f64 + d[n / 2] as f64) / 2.0),
    };
    TtfdSummary {
        median_ns,
        detected: d.len(),
        censored: delays.len() - d.len(),
    }
}

/// Frontier flags for (cost, accuracy) points: kept when no other point is
/// at least as cheap and at least as accurate, and strictly better in one.
/// Points without an accuracy are never on the frontier.
pub fn pareto_flags(points: &[(f64, Option<f64>)]) -> Vec<bool> {
    points
        .iter()
        .map(|&(c, a)| {
            let Some(a) = a else { return false };
            !points
                .iter()
                .any(|&(c2, a2)| a2.is_some_and(|a2| c2 <= c && a2 >= a && (c2 < c || a2 > a)))
        })
        .collect()
}
