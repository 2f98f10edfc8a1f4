//! `EVR1`: little-endian binary event streams.
//!
//! ```text
//! header  := "EVR1" version:u8 width:u16 height:u16 rate_hz:f32      (13 bytes)
//! block   := event_count:u32 record*event_count
//! record  := t:u64 x:u16 y:u16 p:u8                                   (13 bytes)
//! ```
//!
//! Message indices are implicit in block order.

use super::{validate_messages, StreamHeader, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::event::{Event, EventMessage, Polarity, SensorGeometry};

const MAGIC: &[u8; 4] = b"EVR1";
pub const EVR1_HEADER_LEN: usize = 13;
pub const EVR1_RECORD_LEN: usize = 13;

pub fn write_binary_stream(header: &StreamHeader, messages: &[EventMessage]) -> Result<Vec<u8>> {
    header.validate()?;
    validate_messages(header, messages)?;

    let total: usize = messages.iter().map(|m| 4 + m.events.len() * EVR1_RECORD_LEN).sum();
    let mut out = Vec::with_capacity(EVR1_HEADER_LEN + total);
    out.extend_from_slice(MAGIC);
    out.push(header.format_version);
    out.extend_from_slice(&header.geometry.width.to_le_bytes());
    out.extend_from_slice(&header.geometry.height.to_le_bytes());
    out.extend_from_slice(&header.message_rate_hz.to_le_bytes());

    for msg in messages {
        let count = u32::try_from(msg.events.len())
            .map_err(|_| Error::validation(format!("message {}", msg.index), "more than u32::MAX events"))?;
        out.extend_from_slice(&count.to_le_bytes());
        for ev in &msg.events {
            out.extend_from_slice(&ev.t.to_le_bytes());
            out.extend_from_slice(&ev.x.to_le_bytes());
            out.extend_from_slice(&ev.y.to_le_bytes());
            out.push(ev.p.bit());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.buf[self.pos..self.pos + N]);
        self.pos += N;
        a
    }

    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take())
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
}

pub fn parse_binary_stream(bytes: &[u8]) -> Result<(StreamHeader, Vec<EventMessage>)> {
    let magic_len = bytes.len().min(4);
    if bytes[..magic_len] != MAGIC[..magic_len] {
        return Err(Error::BadMagic {
            offset: 0,
            found: bytes[..magic_len].to_vec(),
        });
    }
    if bytes.len() < EVR1_HEADER_LEN {
        return Err(Error::TruncatedHeader {
            offset: bytes.len(),
            available: bytes.len(),
        });
    }

    let mut r = Reader { buf: bytes, pos: 4 };
    let version = r.take::<1>()[0];
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion { offset: 4, version });
    }
    let width = r.u16();
    let height = r.u16();
    let rate = f32::from_le_bytes(r.take());
    let geometry = SensorGeometry::new(width, height).map_err(|e| Error::validation("byte 5", e.to_string()))?;
    let header = StreamHeader {
        format_version: version,
        geometry,
        message_rate_hz: rate,
    };
    header
        .validate()
        .map_err(|e| Error::validation("byte 9", e.to_string()))?;

    let mut messages = Vec::new();
    while r.remaining() > 0 {
        let block = messages.len();
        let block_offset = r.pos;
        if r.remaining() < 4 {
            return Err(Error::TruncatedBlock {
                offset: block_offset,
                block,
                message: format!("{} of 4 event-count bytes present", r.remaining()),
            });
        }
        let count = r.u32() as usize;
        let mut events = Vec::with_capacity(count.min(r.remaining() / EVR1_RECORD_LEN));
        for record in 0..count {
            let offset = r.pos;
            match r.remaining() {
                0 => {
                    return Err(Error::TruncatedBlock {
                        offset,
                        block,
                        message: format!("expected {count} records, found {record}"),
                    })
                }
                n if n < EVR1_RECORD_LEN => return Err(Error::TruncatedRecord { offset, block, record }),
                _ => {}
            }
            let t = r.u64();
            let x = r.u16();
            let y = r.u16();
            let bit = r.take::<1>()[0];
            let p = Polarity::from_bit(bit).ok_or_else(|| {
                Error::validation(
                    format!("byte {}", offset + 12),
                    format!("polarity {bit} not in {{0, 1}}"),
                )
            })?;
            let ev = Event { t, x, y, p };
            if !geometry.contains(x, y) {
                return Err(Error::validation(
                    format!("byte {offset}"),
                    format!("pixel ({x}, {y}) outside {width}x{height} sensor"),
                ));
            }
            if events.last().is_some_and(|prev: &Event| prev.t > t) {
                return Err(Error::ordering(
                    format!("byte {offset}"),
                    "events not sorted by timestamp within message block",
                ));
            }
            events.push(ev);
        }
        messages.push(EventMessage {
            index: block as u64,
            events,
        });
    }
    Ok((header, messages))
}
