// SPDX-License-Identifier: Apache-2.0

//! Exported per-bucket window records.
//!
//! Text form, one record per line, comma separated:
//!
//! ```text
//! sketch,<window>,<qid>,<row>,<col>,<pkt>,<bytes>,<lat_0>..<lat_B-1>,<iat_0>..<iat_B-1>,<green>,<yellow>,<red>
//! ```
//!
//! Binary form, little-endian, same field order:
//! `window:u64 qid:u16 row:u16 col:u32 pkt:u32 bytes:u64 lat:[u32; B] iat:[u32; B] green:u32 yellow:u32 red:u32`.
//!
//! Postcards and per-QFI counter rows use the same line convention with
//! their own leading tag (see `baselines`).

use std::io::{Read, Write};

use crate::error::RecordError;

pub const SKETCH_TAG: &str = "sketch";

/// Header bytes in the binary form: window, qid, row, col.
pub const BINARY_HEADER_BYTES: usize = 8 + 2 + 2 + 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowRecord {
    pub window: u64,
    pub qid: u16,
    pub row: u16,
    pub col: u32,
    pub pkt: u32,
    pub bytes: u64,
    pub lat_bins: Vec<u32>,
    pub iat_bins: Vec<u32>,
    pub colors: [u32; 3],
}

impl WindowRecord {
    /// Bytes of bucket state per record: packet counter, byte counter,
    /// two histograms and three color tallies. Position is implicit in a
    /// register dump, so this is what export cost is charged on.
    pub fn payload_bytes(bins: usize) -> usize {
        4 + 8 + 2 * bins * 4 + 3 * 4
    }

    pub fn binary_len(bins: usize) -> usize {
        BINARY_HEADER_BYTES + Self::payload_bytes(bins)
    }

    pub fn to_line(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::with_capacity(64);
        let _ = write!(
            s,
            "{SKETCH_TAG},{},{},{},{},{},{}",
            self.window, self.qid, self.row, self.col, self.pkt, self.bytes
        );
        for v in self
            .lat_bins
            .iter()
            .chain(&self.iat_bins)
            .chain(&self.colors)
        {
            let _ = write!(s, ",{v}");
        }
        s
    }

    pub fn parse_line(line: &str, bins: usize, line_no: usize) -> Result<Self, RecordError> {
        let err = |reason: String| RecordError::Parse {
            line: line_no,
            reason,
        };
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        let want = 7 + 2 * bins + 3;
        if fields.len() != want {
            return Err(err(format!(
                "expected {want} fields, found {}",
                fields.len()
            )));
        }
        if fields[0] != SKETCH_TAG {
            return Err(err(format!("unexpected tag {:?}", fields[0])));
        }
        fn num<T: std::str::FromStr>(s: &str, name: &str, line: usize) -> Result<T, RecordError> {
            s.parse().map_err(|_| RecordError::Parse {
                line,
                reason: format!("bad {name}: {s:?}"),
            })
        }
        let u32s = |range: std::ops::Range<usize>| -> Result<Vec<u32>, RecordError> {
            fields[range]
                .iter()
                .map(|f| num::<u32>(f, "counter", line_no))
                .collect()
        };
        let colors = u32s(7 + 2 * bins..want)?;
        Ok(Self {
            window: num(fields[1], "window", line_no)?,
            qid: num(fields[2], "qid", line_no)?,
            row: num(fields[3], "row", line_no)?,
            col: num(fields[4], "col", line_no)?,
            pkt: num(fields[5], "pkt", line_no)?,
            bytes: num(fields[6], "bytes", line_no)?,
            lat_bins: u32s(7..7 + bins)?,
            iat_bins: u32s(7 + bins..7 + 2 * bins)?,
            colors: [colors[0], colors[1], colors[2]],
        })
    }

    pub fn write_binary<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&self.window.to_le_bytes())?;
        w.write_all(&self.qid.to_le_bytes())?;
        w.write_all(&self.row.to_le_bytes())?;
        w.write_all(&self.col.to_le_bytes())?;
        w.write_all(&self.pkt.to_le_bytes())?;
        w.write_all(&self.bytes.to_le_bytes())?;
        for v in self
            .lat_bins
            .iter()
            .chain(&self.iat_bins)
            .chain(&self.colors)
        {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads one record; `Ok(None)` on a clean end of stream.
    pub fn read_binary<R: Read>(r: &mut R, bins: usize) -> Result<Option<Self>, RecordError> {
        let mut buf = vec![0u8; Self::binary_len(bins)];
        let mut filled = 0;
        while filled < buf.len() {
            let n = r.read(&mut buf[filled..])?;
            if n == 0 {
                break;
            }
            filled += n;
        }
        if filled == 0 {
            return Ok(None);
        }
        if filled < buf.len() {
            return Err(RecordError::Parse {
                line: 0,
                reason: format!("truncated binary record: {filled} of {} bytes", buf.len()),
            });
        }
        let mut at = 0usize;
        let mut take = |n: usize| {
            let s = &buf[at..at + n];
            at += n;
            s.to_vec()
        };
        let u64_of = |b: Vec<u8>| u64::from_le_bytes(b.try_into().expect("8 bytes"));
        let u32_of = |b: Vec<u8>| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let u16_of = |b: Vec<u8>| u16::from_le_bytes(b.try_into().expect("2 bytes"));
        let window = u64_of(take(8));
        let qid = u16_of(take(2));
        let row = u16_of(take(2));
        let col = u32_of(take(4));
        let pkt = u32_of(take(4));
        let bytes = u64_of(take(8));
        let lat_bins = (0..bins).map(|_| u32_of(take(4))).collect();
        let iat_bins = (0..bins).map(|_| u32_of(take(4))).collect();
        let colors = [u32_of(take(4)), u32_of(take(4)), u32_of(take(4))];
        Ok(Some(Self {
            window,
            qid,
            row,
            col,
            pkt,
            bytes,
            lat_bins,
            iat_bins,
            colors,
        }))
    }
}
