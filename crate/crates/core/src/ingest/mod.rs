//! Event-stream file formats and message chunking.
//!
//! Two on-disk formats carry the same content: a human-readable CSV with a
//! `#`-comment preamble and the compact little-endian `EVR1` binary format.
//! [`chunk_messages`] turns the parsed message sequence into decimated
//! [`EventChunk`]s, the unit of work for the proposal pipeline.

mod binary;
mod csv;

pub use self::binary::{parse_binary_stream, write_binary_stream, EVR1_HEADER_LEN, EVR1_RECORD_LEN};
pub use self::csv::{parse_csv_stream, write_csv_stream};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EventChunk, EventMessage, SensorGeometry};

pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamHeader {
    pub format_version: u8,
    pub geometry: SensorGeometry,
    /// Nominal message cadence. Stored as `f32` because that is what `EVR1` carries.
    pub message_rate_hz: f32,
}

impl Default for StreamHeader {
    fn default() -> Self {
        StreamHeader {
            format_version: FORMAT_VERSION,
            geometry: SensorGeometry::default(),
            message_rate_hz: 30.0,
        }
    }
}

impl StreamHeader {
    pub fn new(geometry: SensorGeometry, message_rate_hz: f32) -> Result<Self> {
        let header = StreamHeader {
            format_version: FORMAT_VERSION,
            geometry,
            message_rate_hz,
        };
        header.validate()?;
        Ok(header)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::validation(
                "header",
                format!("unsupported format version {}", self.format_version),
            ));
        }
        if !(self.message_rate_hz.is_finite() && self.message_rate_hz > 0.0) {
            return Err(Error::validation(
                "header",
                format!("message rate must be positive, got {}", self.message_rate_hz),
            ));
        }
        SensorGeometry::new(self.geometry.width, self.geometry.height).map(|_| ())
    }

    /// Wall-clock start of message `index` in microseconds.
    pub fn message_start_us(&self, index: u64) -> u64 {
        message_start_us(index, self.message_rate_hz)
    }
}

pub(crate) fn message_start_us(index: u64, rate_hz: f32) -> u64 {
    (index as f64 * 1e6 / rate_hz as f64).round() as u64
}

/// Parses either format: `EVR1` when the magic matches, CSV otherwise.
pub fn parse_stream(bytes: &[u8]) -> Result<(StreamHeader, Vec<EventMessage>)> {
    if bytes.starts_with(b"EVR1") {
        return parse_binary_stream(bytes);
    }
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        message: "not an EVR1 stream and not valid UTF-8 text".into(),
    })?;
    parse_csv_stream(text)
}

/// Validates a message sequence against stream geometry and ordering rules.
pub fn validate_messages(header: &StreamHeader, messages: &[EventMessage]) -> Result<()> {
    for (pos, msg) in messages.iter().enumerate() {
        if msg.index != pos as u64 {
            return Err(Error::ordering(
                format!("message {pos}"),
                format!("expected index {pos}, found {}", msg.index),
            ));
        }
        for (i, ev) in msg.events.iter().enumerate() {
            header
                .geometry
                .check(ev)
                .map_err(|e| Error::validation(format!("message {pos} event {i}"), e.to_string()))?;
        }
        if let Some(i) = msg.events.windows(2).position(|w| w[1].t < w[0].t) {
            return Err(Error::ordering(
                format!("message {pos} event {}", i + 1),
                "events not sorted by timestamp",
            ));
        }
    }
    Ok(())
}

/// Window size and decimation stride for chunking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawChunking")]
pub struct ChunkingConfig {
    messages_per_chunk: usize,
    keep_stride: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChunking {
    #[serde(default = "default_messages_per_chunk")]
    messages_per_chunk: usize,
    #[serde(default = "default_keep_stride")]
    keep_stride: usize,
}

fn default_messages_per_chunk() -> usize {
    10
}

fn default_keep_stride() -> usize {
    2
}

impl TryFrom<RawChunking> for ChunkingConfig {
    type Error = Error;

    fn try_from(raw: RawChunking) -> Result<Self> {
        ChunkingConfig::new(raw.messages_per_chunk, raw.keep_stride)
    }
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        ChunkingConfig {
            messages_per_chunk: default_messages_per_chunk(),
            keep_stride: default_keep_stride(),
        }
    }
}

impl ChunkingConfig {
    pub fn new(messages_per_chunk: usize, keep_stride: usize) -> Result<Self> {
        if messages_per_chunk == 0 || keep_stride == 0 || keep_stride > messages_per_chunk {
            return Err(Error::Config(format!(
                "chunking requires messages_per_chunk >= 1 and 1 <= keep_stride <= messages_per_chunk \
                 (got {messages_per_chunk}, {keep_stride})"
            )));
        }
        Ok(ChunkingConfig {
            messages_per_chunk,
            keep_stride,
        })
    }

    pub fn messages_per_chunk(&self) -> usize {
        self.messages_per_chunk
    }

    pub fn keep_stride(&self) -> usize {
        self.keep_stride
    }

    /// Number of complete windows in a stream of `message_count` messages.
    pub fn chunk_count(&self, message_count: usize) -> usize {
        message_count / self.messages_per_chunk
    }
}

/// Groups messages into fixed windows and keeps every `keep_stride`-th message
/// of each window (local indices 0, stride, 2*stride, ...).
///
/// A trailing partial window is dropped. Chunk time bounds cover the whole
/// window at the nominal message cadence, widened if any event (retained or
/// not) falls outside it.
pub fn chunk_messages(messages: &[EventMessage], cfg: &ChunkingConfig, message_rate_hz: f32) -> Vec<EventChunk> {
    messages
        .chunks_exact(cfg.messages_per_chunk)
        .enumerate()
        .map(|(chunk_index, window)| {
            let first = window[0].index;
            let mut t_start = message_start_us(first, message_rate_hz);
            let mut t_end = message_start_us(first + window.len() as u64, message_rate_hz)
                .saturating_sub(1)
                .max(t_start);
            for ev in window.iter().flat_map(|m| m.events.iter()) {
                t_start = t_start.min(ev.t);
                t_end = t_end.max(ev.t);
            }

            let mut events: Vec<_> = window
                .iter()
                .step_by(cfg.keep_stride)
                .flat_map(|m| m.events.iter().copied())
                .collect();
            // stable: ties keep message order
            events.sort_by_key(|e| e.t);

            EventChunk {
                chunk_index: chunk_index as u64,
                t_start,
                t_end,
                events,
            }
        })
        .collect()
}
