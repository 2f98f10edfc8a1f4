//! CSV event streams.
//!
//! ```text
//! # version=1
//! # width=640
//! # height=480
//! # rate_hz=30
//! # messages=12
//! msg,t_us,x,y,p
//! 0,10,1,2,1
//! ```
//!
//! `messages` is optional; it lets trailing empty messages survive a round
//! trip. Gaps in `msg` become empty messages. Other `#` lines are comments.

use std::fmt::Write as _;

use super::{validate_messages, StreamHeader, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::event::{Event, EventMessage, Polarity, SensorGeometry};

const COLUMNS: &str = "msg,t_us,x,y,p";

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, field: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| parse_err(line, format!("field `{field}`: `{}` is not a valid value", raw.trim())))
}

pub fn parse_csv_stream(text: &str) -> Result<(StreamHeader, Vec<EventMessage>)> {
    let mut version = FORMAT_VERSION;
    let mut width: u16 = 640;
    let mut height: u16 = 480;
    let mut rate: f32 = 30.0;
    let mut declared_messages: Option<u64> = None;

    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut header_line = 0;

    for (n, line) in lines.by_ref() {
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.trim().split_once('=') {
                match key.trim() {
                    "width" => width = parse_num(n, "width", value)?,
                    "height" => height = parse_num(n, "height", value)?,
                    "rate_hz" => rate = parse_num(n, "rate_hz", value)?,
                    "version" => version = parse_num(n, "version", value)?,
                    "messages" => declared_messages = Some(parse_num(n, "messages", value)?),
                    _ => {}
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.join(",") != COLUMNS {
            return Err(parse_err(n, format!("expected header row `{COLUMNS}`, found `{line}`")));
        }
        header_line = n;
        break;
    }

    let geometry = SensorGeometry::new(width, height).map_err(|e| parse_err(header_line.max(1), e.to_string()))?;
    let header = StreamHeader {
        format_version: version,
        geometry,
        message_rate_hz: rate,
    };
    header
        .validate()
        .map_err(|e| parse_err(header_line.max(1), e.to_string()))?;

    let mut messages: Vec<EventMessage> = Vec::new();
    let mut last_msg: Option<u64> = None;
    for (n, line) in lines {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(parse_err(n, format!("expected 5 fields, found {}", fields.len())));
        }
        let msg: u64 = parse_num(n, "msg", fields[0])?;
        let t: u64 = parse_num(n, "t_us", fields[1])?;
        let x: u16 = parse_num(n, "x", fields[2])?;
        let y: u16 = parse_num(n, "y", fields[3])?;
        let bit: u8 = parse_num(n, "p", fields[4])?;
        let p = Polarity::from_bit(bit)
            .ok_or_else(|| Error::validation(format!("line {n}"), format!("polarity {bit} not in {{0, 1}}")))?;
        if !geometry.contains(x, y) {
            return Err(Error::validation(
                format!("line {n}"),
                format!("pixel ({x}, {y}) outside {width}x{height} sensor"),
            ));
        }
        if let Some(prev) = last_msg {
            if msg < prev {
                return Err(Error::ordering(
                    format!("line {n}"),
                    format!("msg {msg} after msg {prev}"),
                ));
            }
        }
        if let Some(limit) = declared_messages {
            if msg >= limit {
                return Err(Error::validation(
                    format!("line {n}"),
                    format!("msg {msg} beyond declared message count {limit}"),
                ));
            }
        }
        last_msg = Some(msg);
        while messages.len() as u64 <= msg {
            let index = messages.len() as u64;
            messages.push(EventMessage {
                index,
                events: Vec::new(),
            });
        }
        messages[msg as usize].events.push(Event { t, x, y, p });
    }

    if let Some(limit) = declared_messages {
        while (messages.len() as u64) < limit {
            let index = messages.len() as u64;
            messages.push(EventMessage {
                index,
                events: Vec::new(),
            });
        }
    }
    for m in &mut messages {
        m.events.sort_by_key(|e| e.t);
    }
    Ok((header, messages))
}

pub fn write_csv_stream(header: &StreamHeader, messages: &[EventMessage]) -> Result<String> {
    header.validate()?;
    validate_messages(header, messages)?;
    let mut out = String::new();
    // writing to a String cannot fail
    let _ = writeln!(out, "# version={}", header.format_version);
    let _ = writeln!(out, "# width={}", header.geometry.width);
    let _ = writeln!(out, "# height={}", header.geometry.height);
    let _ = writeln!(out, "# rate_hz={}", header.message_rate_hz);
    let _ = writeln!(out, "# messages={}", messages.len());
    out.push_str(COLUMNS);
    out.push('\n');
    for m in messages {
        for e in &m.events {
            let _ = writeln!(out, "{},{},{},{},{}", m.index, e.t, e.x, e.y, e.p.bit());
        }
    }
    Ok(out)
}
