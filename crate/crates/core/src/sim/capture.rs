// SPDX-License-Identifier: Apache-2.0

//! Line-delimited capture of a queue run, for replay into the telemetry modes.
//!
//! ```text
//! pkt,<teid>,<qfi>,<qid>,<bytes>,<arrival_ns>,<sojourn_ns>,<color>,<queue_depth>
//! drop,<teid>,<qfi>,<qid>,<bytes>,<arrival_ns>,<reason>
//! ```

use std::io::{BufRead, Write};

use super::queues::{DropReason, DropRecord, QueueOutcome};
use crate::error::RecordError;
use crate::types::{Color, FlowKey, PacketEvent};

pub fn write_capture<W: Write>(w: &mut W, outcome: &QueueOutcome) -> std::io::Result<()> {
    for (e, depth) in outcome.delivered.iter().zip(&outcome.queue_depth) {
        writeln!(
            w,
            "pkt,{},{},{},{},{},{},{},{}",
            e.key.teid(),
            e.key.qfi(),
            e.qid,
            e.bytes,
            e.arrival_ns,
            e.sojourn_ns,
            e.color.as_str(),
            depth
        )?;
    }
    for d in &outcome.drops {
        writeln!(
            w,
            "drop,{},{},{},{},{},{}",
            d.key.teid(),
            d.key.qfi(),
            d.qid,
            d.bytes,
            d.arrival_ns,
            d.reason.as_str()
        )?;
    }
    Ok(())
}

pub fn read_capture<R: BufRead>(r: R) -> Result<QueueOutcome, RecordError> {
    let mut out = QueueOutcome::default();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| RecordError::Parse {
            line: line_no,
            reason,
        };
        let f: Vec<&str> = line.split(',').collect();
        let num = |idx: usize| -> Result<u64, RecordError> {
            f.get(idx)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err(format!("bad field {idx}")))
        };
        let key = FlowKey::new(num(1)? as u32, num(2)? as u8).map_err(|e| err(e.to_string()))?;
        let qid = u16::try_from(num(3)?).map_err(|_| err("qid out of range".into()))?;
        let bytes = u32::try_from(num(4)?).map_err(|_| err("bytes out of range".into()))?;
        match (f[0], f.len()) {
            ("pkt", 9) => {
                out.delivered.push(PacketEvent {
                    key,
                    qid,
                    bytes,
                    arrival_ns: num(5)?,
                    sojourn_ns: num(6)?,
                    color: Color::parse(f[7])
                        .ok_or_else(|| err(format!("bad color {:?}", f[7])))?,
                });
                out.queue_depth.push(num(8)? as u32);
            }
            ("drop", 7) => {
                let reason = match f[6] {
                    "meter" => DropReason::Meter,
                    "buffer" => DropReason::Buffer,
                    other => return Err(err(format!("bad drop reason {other:?}"))),
                };
                out.drops.push(DropRecord {
                    key,
                    qid,
                    bytes,
                    arrival_ns: num(5)?,
                    reason,
                });
            }
            (tag, n) => return Err(err(format!("unexpected record {tag:?} with {n} fields"))),
        }
    }
    Ok(out)
}
