// SPDX-License-Identifier: Apache-2.0

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::scenario::{PacketSize, ScenarioSpec, TrafficProfile};
use super::{sub_rng, STREAM_TRAFFIC};
use crate::error::ScenarioError;
use crate::types::{Color, Nanos, PacketEvent};

const NS_PER_S: f64 = 1e9;

/// Pre-queue arrivals for every flow, ordered by (time, key) with per-flow order kept.
pub fn generate_traffic(spec: &ScenarioSpec) -> Result<Vec<PacketEvent>, ScenarioError> {
    spec.validate()?;
    let horizon = spec.duration_ns();
    let mut all = Vec::new();
    for (i, f) in spec.flows.iter().enumerate() {
        let mut rng = sub_rng(spec.seed, STREAM_TRAFFIC, i as u64);
        let key = f.key();
        let qid = spec.qid_of(f.qfi).expect("validated mapping");
        let times = arrival_times(&f.profile, f.rate_pps, 0, horizon, &mut rng);
        all.reserve(times.len());
        for t in times {
            all.push(PacketEvent {
                key,
                qid,
                bytes: sample_size(&f.size, &mut rng),
                arrival_ns: t,
                sojourn_ns: 0,
                color: Color::Green,
            });
        }
    }
    sort_stream(&mut all);
    Ok(all)
}

/// Stable sort by (arrival, key): equal keys keep their sequence order.
pub fn sort_stream(events: &mut [PacketEvent]) {
    events.sort_by_key(|e| (e.arrival_ns, e.key));
}

pub(crate) fn sample_size(size: &PacketSize, rng: &mut ChaCha8Rng) -> u32 {
    match *size {
        PacketSize::Fixed { bytes } => bytes,
        PacketSize::Uniform { min, max } => rng.random_range(min..=max),
    }
}

/// Strictly increasing arrival times in `[start, end)` for one flow.
pub fn arrival_times(
    profile: &TrafficProfile,
    rate_pps: f64,
    start: Nanos,
    end: Nanos,
    rng: &mut ChaCha8Rng,
) -> Vec<Nanos> {
    let mut out = Vec::new();
    if end <= start || rate_pps <= 0.0 {
        return out;
    }
    let push = |t: f64, out: &mut Vec<Nanos>| {
        let mut t = t.round() as Nanos;
        if let Some(&prev) = out.last() {
            t = t.max(prev + 1);
        }
        if t < end {
            out.push(t);
        }
    };
    match *profile {
        TrafficProfile::Cbr { jitter } => {
            let period = NS_PER_S / rate_pps;
            let phase = rng.random::<f64>() * period;
            let n = ((end - start) as f64 / period).ceil() as u64 + 1;
            for i in 0..n {
                let j = if jitter > 0.0 {
                    jitter * period * (rng.random::<f64>() - 0.5)
                } else {
                    0.0
                };
                let t = start as f64 + phase + i as f64 * period + j;
                if t >= end as f64 {
                    break;
                }
                push(t.max(start as f64), &mut out);
            }
        }
        TrafficProfile::OnOff {
            on_ms,
            off_ms,
            jitter,
        } => {
            let duty = on_ms / (on_ms + off_ms);
            let period = NS_PER_S / (rate_pps / duty);
            let on = Exp::new(1.0 / (on_ms * 1e6)).expect("positive mean");
            let off =
                (off_ms > 0.0).then(|| Exp::new(1.0 / (off_ms * 1e6)).expect("positive mean"));
            let mut t = start as f64;
            let mut is_on = rng.random::<f64>() < duty;
            while t < end as f64 {
                if is_on {
                    let stop = (t + on.sample(rng)).min(end as f64);
                    let mut p = t + rng.random::<f64>() * period;
                    while p < stop {
                        let j = if jitter > 0.0 {
                            jitter * period * (rng.random::<f64>() - 0.5)
                        } else {
                            0.0
                        };
                        push((p + j).max(start as f64), &mut out);
                        p += period;
                    }
                    t = stop;
                } else if let Some(off) = &off {
                    t += off.sample(rng);
                }
                is_on = !is_on;
            }
        }
        TrafficProfile::Poisson => {
            let gap = Exp::new(rate_pps / NS_PER_S).expect("positive rate");
            let mut t = start as f64 + gap.sample(rng);
            while t < end as f64 {
                push(t, &mut out);
                t += gap.sample(rng);
            }
        }
    }
    out
}
