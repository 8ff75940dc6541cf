//! Event and ground-truth file formats.
//!
//! CSV events: one record per line, `t_us,x,y,p`, ASCII decimal, LF line
//! ends, optional header lines starting with `#`. Polarity accepts both
//! the {0,1} and {-1,1} conventions; 0 maps to -1.
//!
//! Binary events: magic `EVG1`, u32 LE width, u32 LE height, u64 LE
//! count, then `count` packed LE records of {u64 t_us, u16 x, u16 y, i8 p}.
//!
//! Ground-truth CSV: `t_us,class_id,cx,cy,w,h`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::events::{Event, EventStream, GroundTruth, LabeledBox, SensorGeometry};

pub const BINARY_MAGIC: &[u8; 4] = b"EVG1";

/// Parses CSV event text. Out-of-order records are sorted stably by `t`.
pub fn parse_events(text: &str, geometry: SensorGeometry) -> Result<EventStream> {
    let mut events = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let e = parse_event_line(line).map_err(|msg| Error::parse(lineno + 1, msg))?;
        if !geometry.contains(e.x, e.y) {
            return Err(Error::Validation(format!(
                "line {}: coordinate ({}, {}) outside {}x{} sensor",
                lineno + 1,
                e.x,
                e.y,
                geometry.width,
                geometry.height
            )));
        }
        events.push(e);
    }
    EventStream::new(events, geometry)
}

fn parse_event_line(line: &str) -> std::result::Result<Event, String> {
    let mut parts = line.split(',');
    let mut next = |name: &str| {
        parts
            .next()
            .map(str::trim)
            .ok_or_else(|| format!("missing field `{name}`"))
    };
    let t: i64 = parse_num(next("t_us")?, "t_us")?;
    let x: u16 = parse_num(next("x")?, "x")?;
    let y: u16 = parse_num(next("y")?, "y")?;
    let p_raw: i8 = parse_num(next("p")?, "p")?;
    if parts.next().is_some() {
        return Err("trailing fields".into());
    }
    if t < 0 {
        return Err(format!("negative timestamp {t}"));
    }
    let p = match p_raw {
        0 | -1 => -1,
        1 => 1,
        other => return Err(format!("polarity {other} not in {{0, 1}} or {{-1, 1}}")),
    };
    Ok(Event { t, x, y, p })
}

fn parse_num<T: std::str::FromStr>(s: &str, name: &str) -> std::result::Result<T, String> {
    s.parse()
        .map_err(|_| format!("invalid `{name}` value `{s}`"))
}

/// Serializes a stream in the CSV format, polarity written as -1/1.
pub fn write_events(stream: &EventStream) -> String {
    let mut out = String::with_capacity(16 + stream.events.len() * 16);
    out.push_str("# t_us,x,y,p\n");
    for e in &stream.events {
        let _ = writeln!(out, "{},{},{},{}", e.t, e.x, e.y, e.p);
    }
    out
}

/// Parses the packed binary format; geometry comes from the file header.
pub fn parse_events_binary(bytes: &[u8]) -> Result<EventStream> {
    let need = |n: usize, what: &str| -> Result<()> {
        if bytes.len() < n {
            Err(Error::Validation(format!(
                "binary stream truncated before {what} ({} bytes)",
                bytes.len()
            )))
        } else {
            Ok(())
        }
    };
    need(20, "header")?;
    if &bytes[0..4] != BINARY_MAGIC {
        return Err(Error::Validation("bad magic; expected EVG1".into()));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let geometry = SensorGeometry::new(width, height)?;
    const REC: usize = 13;
    need(20 + count * REC, "records")?;
    let mut events = Vec::with_capacity(count);
    for i in 0..count {
        let off = 20 + i * REC;
        let r = &bytes[off..off + REC];
        let t_u = u64::from_le_bytes(r[0..8].try_into().unwrap());
        let x = u16::from_le_bytes(r[8..10].try_into().unwrap());
        let y = u16::from_le_bytes(r[10..12].try_into().unwrap());
        let p = r[12] as i8;
        if t_u > i64::MAX as u64 {
            return Err(Error::Validation(format!("record {i}: timestamp overflow")));
        }
        if p != -1 && p != 1 {
            return Err(Error::Validation(format!(
                "record {i}: polarity {p} not in {{-1, 1}}"
            )));
        }
        if !geometry.contains(x, y) {
            return Err(Error::Validation(format!(
                "record {i}: coordinate ({x}, {y}) outside {width}x{height} sensor"
            )));
        }
        events.push(Event { t: t_u as i64, x, y, p });
    }
    EventStream::new(events, geometry)
}

pub fn write_events_binary(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + stream.events.len() * 13);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&stream.geometry.width.to_le_bytes());
    out.extend_from_slice(&stream.geometry.height.to_le_bytes());
    out.extend_from_slice(&(stream.events.len() as u64).to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&(e.t as u64).to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p as u8);
    }
    out
}

/// Parses ground-truth CSV: `t_us,class_id,cx,cy,w,h`.
pub fn parse_ground_truth(text: &str) -> Result<GroundTruth> {
    let mut boxes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(Error::parse(
                lineno + 1,
                format!("expected 6 fields, got {}", fields.len()),
            ));
        }
        let err = |name: &str, v: &str| Error::parse(lineno + 1, format!("invalid `{name}` value `{v}`"));
        let b = LabeledBox {
            t: fields[0].parse().map_err(|_| err("t_us", fields[0]))?,
            class_id: fields[1].parse().map_err(|_| err("class_id", fields[1]))?,
            cx: fields[2].parse().map_err(|_| err("cx", fields[2]))?,
            cy: fields[3].parse().map_err(|_| err("cy", fields[3]))?,
            w: fields[4].parse().map_err(|_| err("w", fields[4]))?,
            h: fields[5].parse().map_err(|_| err("h", fields[5]))?,
        };
        if b.w <= 0.0 || b.h <= 0.0 {
            return Err(Error::parse(lineno + 1, "box dimensions must be positive"));
        }
        boxes.push(b);
    }
    boxes.sort_by_key(|b| b.t);
    Ok(GroundTruth { boxes })
}

pub fn write_ground_truth(gt: &GroundTruth) -> String {
    let mut out = String::from("# t_us,class_id,cx,cy,w,h\n");
    for b in &gt.boxes {
        let _ = writeln!(out, "{},{},{},{},{},{}", b.t, b.class_id, b.cx, b.cy, b.w, b.h);
    }
    out
}
