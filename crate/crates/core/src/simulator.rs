//! Synthetic event streams with exact ground truth.
//!
//! Each pixel keeps a reference log-intensity. At every simulation substep
//! the scene is re-rendered where shapes may have moved, and a pixel whose
//! log-intensity has drifted by at least the contrast threshold `C` from its
//! reference emits one event per whole multiple of `C`; the reference then
//! steps by those multiples. Shapes are rendered with 4x4 supersampled
//! coverage against a background of intensity 1.0; a plain shape only fires
//! along its moving outline, while a textured one fires across its surface.
//! Optional background noise adds uniformly placed events at a per-pixel
//! Poisson rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{GroundTruthFrame, GroundTruthSet};
use crate::event::{BBox, Event, EventMessage, Polarity, SensorGeometry};
use crate::ingest::{message_start_us, ChunkingConfig, StreamHeader};

const BACKGROUND: f64 = 1.0;
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default)]
    pub geometry: SensorGeometry,
    pub duration_s: f64,
    #[serde(default = "default_rate")]
    pub message_rate_hz: f64,
    #[serde(default)]
    pub shapes: Vec<MovingShape>,
    #[serde(default = "default_threshold")]
    pub contrast_threshold: f64,
    #[serde(default)]
    pub noise_rate_hz_per_pixel: f64,
    #[serde(default = "default_substep")]
    pub substep_s: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_rate() -> f64 {
    30.0
}

fn default_threshold() -> f64 {
    0.2
}

fn default_substep() -> f64 {
    0.001
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Disc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShapeSize {
    Rect { width: f64, height: f64 },
    Radius { radius: f64 },
}

/// Motion of a shape's anchor: the top-left corner of a rectangle or the
/// center of a disc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Trajectory {
    Linear {
        start: [f64; 2],
        /// px/s
        velocity: [f64; 2],
    },
    Circular {
        center: [f64; 2],
        radius: f64,
        /// rad/s
        angular_rate: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl Trajectory {
    pub fn position(&self, t: f64) -> (f64, f64) {
        match *self {
            Trajectory::Linear { start, velocity } => (start[0] + velocity[0] * t, start[1] + velocity[1] * t),
            Trajectory::Circular {
                center,
                radius,
                angular_rate,
                phase,
            } => {
                let a = phase + angular_rate * t;
                (center[0] + radius * a.cos(), center[1] + radius * a.sin())
            }
        }
    }

    /// Speed in px/s (constant for both trajectory kinds).
    pub fn speed(&self) -> f64 {
        match *self {
            Trajectory::Linear { velocity, .. } => velocity[0].hypot(velocity[1]),
            Trajectory::Circular {
                radius, angular_rate, ..
            } => (radius * angular_rate).abs(),
        }
    }
}

/// Random binary surface pattern carried along with a shape. Each square
/// cell is either `intensity * (1 + contrast)` or `intensity * (1 - contrast)`
/// by a fixed hash of its cell coordinates, so the interior of a moving shape
/// emits events as well as its outline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Texture {
    pub cell_px: f64,
    pub contrast: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovingShape {
    pub kind: ShapeKind,
    pub size: ShapeSize,
    pub intensity: f64,
    pub trajectory: Trajectory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture: Option<Texture>,
}

impl MovingShape {
    pub fn rectangle(width: f64, height: f64, intensity: f64, trajectory: Trajectory) -> Self {
        MovingShape {
            kind: ShapeKind::Rectangle,
            size: ShapeSize::Rect { width, height },
            intensity,
            trajectory,
            texture: None,
        }
    }

    pub fn disc(radius: f64, intensity: f64, trajectory: Trajectory) -> Self {
        MovingShape {
            kind: ShapeKind::Disc,
            size: ShapeSize::Radius { radius },
            intensity,
            trajectory,
            texture: None,
        }
    }

    pub fn with_texture(mut self, cell_px: f64, contrast: f64) -> Self {
        self.texture = Some(Texture { cell_px, contrast });
        self
    }

    fn validate(&self, i: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("shape {i}: {m}")));
        if !(self.intensity.is_finite() && self.intensity > 0.0) {
            return bad(format!("intensity must be positive, got {}", self.intensity));
        }
        if self.intensity == BACKGROUND {
            return bad("intensity equals the background (1.0) and would emit no events".into());
        }
        match (self.kind, self.size) {
            (ShapeKind::Rectangle, ShapeSize::Rect { width, height }) => {
                if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
                    return bad(format!("rectangle size must be positive, got {width}x{height}"));
                }
            }
            (ShapeKind::Disc, ShapeSize::Radius { radius }) => {
                if !(radius > 0.0 && radius.is_finite()) {
                    return bad(format!("disc radius must be positive, got {radius}"));
                }
            }
            (kind, _) => return bad(format!("size does not match kind {kind:?}")),
        }
        if let Some(tex) = self.texture {
            if !(tex.cell_px.is_finite() && tex.cell_px >= 1.0) {
                return bad(format!("texture cell_px must be at least 1, got {}", tex.cell_px));
            }
            if !(tex.contrast > 0.0 && tex.contrast < 1.0) {
                return bad(format!("texture contrast must be in (0, 1), got {}", tex.contrast));
            }
        }
        Ok(())
    }

    /// Exact bounding box at time `t` (seconds), unclipped.
    pub fn bbox_at(&self, t: f64) -> BBox {
        let (ax, ay) = self.trajectory.position(t);
        match self.size {
            ShapeSize::Rect { width, height } => BBox {
                x_min: ax,
                y_min: ay,
                x_max: ax + width,
                y_max: ay + height,
            },
            ShapeSize::Radius { radius } => BBox {
                x_min: ax - radius,
                y_min: ay - radius,
                x_max: ax + radius,
                y_max: ay + radius,
            },
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return cfg(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(self.message_rate_hz.is_finite() && self.message_rate_hz > 0.0) {
            return cfg(format!(
                "message_rate_hz must be positive, got {}",
                self.message_rate_hz
            ));
        }
        if !(self.substep_s.is_finite() && self.substep_s > 0.0) {
            return cfg(format!("substep_s must be positive, got {}", self.substep_s));
        }
        if self.substep_s > 1.0 / self.message_rate_hz {
            return cfg(format!(
                "substep_s ({}) must not exceed the message period 1/message_rate_hz ({})",
                self.substep_s,
                1.0 / self.message_rate_hz
            ));
        }
        if !(self.contrast_threshold.is_finite() && self.contrast_threshold > 0.0) {
            return cfg(format!(
                "contrast_threshold must be positive, got {}",
                self.contrast_threshold
            ));
        }
        if !(self.noise_rate_hz_per_pixel.is_finite() && self.noise_rate_hz_per_pixel >= 0.0) {
            return cfg(format!(
                "noise_rate_hz_per_pixel must be non-negative, got {}",
                self.noise_rate_hz_per_pixel
            ));
        }
        let frame = self.geometry.bounds();
        for (i, shape) in self.shapes.iter().enumerate() {
            shape.validate(i)?;
            let b = shape.bbox_at(0.0);
            if !frame.contains_box(&b) {
                return cfg(format!(
                    "shape {i}: box [{}, {}, {}, {}] at t = 0 does not fit inside the {}x{} sensor",
                    b.x_min, b.y_min, b.x_max, b.y_max, self.geometry.width, self.geometry.height
                ));
            }
        }
        Ok(())
    }

    pub fn header(&self) -> StreamHeader {
        StreamHeader {
            format_version: crate::ingest::FORMAT_VERSION,
            geometry: self.geometry,
            message_rate_hz: self.message_rate_hz as f32,
        }
    }

    pub fn message_count(&self) -> usize {
        (self.duration_s * self.message_rate_hz - 1e-9).ceil().max(0.0) as usize
    }
}

/// Axis-aligned box of every shape at `t_s`, clipped to the sensor. Shapes
/// entirely outside the frame are left out.
pub fn ground_truth_boxes(spec: &SceneSpec, t_s: f64) -> Result<Vec<BBox>> {
    if !(t_s >= 0.0 && t_s <= spec.duration_s) {
        return Err(Error::Range(format!(
            "t = {t_s} s outside scene duration [0, {}]",
            spec.duration_s
        )));
    }
    let frame = spec.geometry.bounds();
    Ok(spec
        .shapes
        .iter()
        .filter_map(|s| s.bbox_at(t_s).intersection(&frame))
        .filter(|b| b.area() > 0.0)
        .collect())
}

/// Ground truth for every complete default-size chunk window, keyed to the
/// window's midpoint.
pub fn chunk_ground_truth(spec: &SceneSpec, video_name: &str) -> Result<GroundTruthSet> {
    let per_chunk = ChunkingConfig::default().messages_per_chunk();
    let n_chunks = spec.message_count() / per_chunk;
    let mut frames = Vec::with_capacity(n_chunks);
    for c in 0..n_chunks {
        let mid_s = (c * per_chunk) as f64 / spec.message_rate_hz + per_chunk as f64 / (2.0 * spec.message_rate_hz);
        frames.push(GroundTruthFrame {
            chunk_index: c as u64,
            boxes: ground_truth_boxes(spec, mid_s.min(spec.duration_s))?,
        });
    }
    Ok(GroundTruthSet {
        video_name: video_name.to_string(),
        geometry: spec.geometry,
        frames,
    })
}

/// Supersample offsets along one pixel row or column, relative to a shape's
/// anchor. Samples within the shape's extent on this axis fall into at most
/// two texture cells, tallied in `groups` as `(cell, count)`.
#[derive(Debug, Clone, Copy)]
struct AxisSamples {
    d: [f64; SUPERSAMPLE],
    cell: [i64; SUPERSAMPLE],
    groups: [(i64, u32); 2],
}

fn axis_samples(p: usize, anchor: f64, extent: (f64, f64), cell_px: f64) -> AxisSamples {
    let s = SUPERSAMPLE as f64;
    let d: [f64; SUPERSAMPLE] = std::array::from_fn(|i| p as f64 + (i as f64 + 0.5) / s - anchor);
    let cell = d.map(|v| (v / cell_px).floor() as i64);
    let mut groups = [(cell[0], 0), (cell[SUPERSAMPLE - 1], 0)];
    for i in 0..SUPERSAMPLE {
        if d[i] >= extent.0 && d[i] < extent.1 {
            let g = if cell[i] == groups[0].0 { 0 } else { 1 };
            groups[g].1 += 1;
        }
    }
    AxisSamples { d, cell, groups }
}

fn cell_hash(i: i64, j: i64) -> u64 {
    let mut z = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (j as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A shape frozen at one instant, with per-axis sample tables over the
/// pixels it can touch.
struct Placed<'a> {
    shape: &'a MovingShape,
    anchor: (f64, f64),
    bbox: BBox,
    x0: usize,
    y0: usize,
    cols: Vec<AxisSamples>,
    rows: Vec<AxisSamples>,
}

impl<'a> Placed<'a> {
    fn new(shape: &'a MovingShape, t: f64, geometry: SensorGeometry) -> Self {
        let (ax, ay) = shape.trajectory.position(t);
        let bbox = shape.bbox_at(t);
        let cell = shape.texture.map_or(f64::INFINITY, |tex| tex.cell_px);
        let (extent_x, extent_y) = match shape.size {
            ShapeSize::Rect { width, height } => ((0.0, width), (0.0, height)),
            ShapeSize::Radius { .. } => ((f64::NEG_INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::INFINITY)),
        };
        let span = |lo: f64, hi: f64, limit: u16| {
            let a = lo.floor().clamp(0.0, limit as f64) as usize;
            let b = hi.ceil().clamp(0.0, limit as f64) as usize;
            a..b.max(a)
        };
        let xs = span(bbox.x_min, bbox.x_max, geometry.width);
        let ys = span(bbox.y_min, bbox.y_max, geometry.height);
        Placed {
            shape,
            anchor: (ax, ay),
            bbox,
            x0: xs.start,
            y0: ys.start,
            cols: xs.map(|x| axis_samples(x, ax, extent_x, cell)).collect(),
            rows: ys.map(|y| axis_samples(y, ay, extent_y, cell)).collect(),
        }
    }

    fn foreground(&self, ci: i64, cj: i64) -> f64 {
        let fg = self.shape.intensity;
        match self.shape.texture {
            Some(tex) if cell_hash(ci, cj) & 1 == 0 => fg * (1.0 + tex.contrast),
            Some(tex) => fg * (1.0 - tex.contrast),
            None => fg,
        }
    }

    /// Paints the shape over `value` at pixel `(x, y)`.
    fn paint(&self, x: usize, y: usize, value: f64) -> f64 {
        let (Some(c), Some(r)) = (
            x.checked_sub(self.x0).and_then(|i| self.cols.get(i)),
            y.checked_sub(self.y0).and_then(|j| self.rows.get(j)),
        ) else {
            return value;
        };
        let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
        let grouped = |value: f64| {
            let mut acc = 0.0;
            for &(ci, nx) in &c.groups {
                for &(cj, ny) in &r.groups {
                    if nx * ny > 0 {
                        acc += (nx * ny) as f64 * (self.foreground(ci, cj) - value);
                    }
                }
            }
            value + acc / n
        };
        match self.shape.size {
            ShapeSize::Rect { .. } => grouped(value),
            ShapeSize::Radius { radius } => {
                let r2 = radius * radius;
                let (x0, y0) = (x as f64 - self.anchor.0, y as f64 - self.anchor.1);
                let (nx, ny) = (0.0f64.clamp(x0, x0 + 1.0), 0.0f64.clamp(y0, y0 + 1.0));
                if nx * nx + ny * ny > r2 {
                    return value;
                }
                let (fx, fy) = (x0.abs().max((x0 + 1.0).abs()), y0.abs().max((y0 + 1.0).abs()));
                if fx * fx + fy * fy <= r2 {
                    return grouped(value);
                }
                let mut acc = 0.0;
                for j in 0..SUPERSAMPLE {
                    let dy2 = r.d[j] * r.d[j];
                    for i in 0..SUPERSAMPLE {
                        if c.d[i] * c.d[i] + dy2 <= r2 {
                            acc += self.foreground(c.cell[i], r.cell[j]) - value;
                        }
                    }
                }
                value + acc / n
            }
        }
    }
}

fn place(shapes: &[MovingShape], t: f64, geometry: SensorGeometry) -> Vec<Placed<'_>> {
    shapes.iter().map(|shape| Placed::new(shape, t, geometry)).collect()
}

/// Composited intensity of pixel `(x, y)`, shapes painted in list order.
fn render(placed: &[Placed], x: usize, y: usize) -> f64 {
    placed.iter().fold(BACKGROUND, |value, p| p.paint(x, y, value))
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub header: StreamHeader,
    pub messages: Vec<EventMessage>,
    pub ground_truth: GroundTruthSet,
}

/// Renders the scene and returns the event stream plus per-chunk ground truth.
/// Output depends only on `spec` (including its seed).
pub fn simulate(spec: &SceneSpec) -> Result<Simulation> {
    spec.validate()?;
    let header = spec.header();
    let rate = header.message_rate_hz;
    let geometry = spec.geometry;
    let (w, h) = (geometry.width as usize, geometry.height as usize);

    let n_messages = spec.message_count();
    let starts: Vec<u64> = (0..=n_messages as u64).map(|k| message_start_us(k, rate)).collect();
    let mut messages: Vec<EventMessage> = (0..n_messages as u64)
        .map(|index| EventMessage {
            index,
            events: Vec::new(),
        })
        .collect();
    let bucket = |t: u64| -> usize {
        let k = starts.partition_point(|&s| s <= t);
        k.saturating_sub(1).min(n_messages.saturating_sub(1))
    };

    let mut intensity = vec![BACKGROUND; w * h];
    let mut reference = vec![0.0f64; w * h];
    // intensities strictly between these cannot cross a threshold
    let mut band = vec![(0.0f64, 0.0f64); w * h];
    let mut stamp = vec![u32::MAX; w * h];
    let c = spec.contrast_threshold;
    let c_safe = c * (1.0 - 1e-6);
    let band_of = |r: f64| ((r - c_safe).exp(), (r + c_safe).exp());

    let pixel_span = |b: &BBox| -> Option<(usize, usize, usize, usize)> {
        let x0 = (b.x_min.floor() - 1.0).max(0.0);
        let y0 = (b.y_min.floor() - 1.0).max(0.0);
        let x1 = (b.x_max.ceil() + 1.0).min(w as f64);
        let y1 = (b.y_max.ceil() + 1.0).min(h as f64);
        (x0 < x1 && y0 < y1).then_some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
    };

    let mut placed = place(&spec.shapes, 0.0, geometry);
    for p in &placed {
        if let Some((x0, y0, x1, y1)) = pixel_span(&p.bbox) {
            for y in y0..y1 {
                for x in x0..x1 {
                    intensity[y * w + x] = render(&placed, x, y);
                }
            }
        }
    }
    for ((r, b), &i) in reference.iter_mut().zip(band.iter_mut()).zip(&intensity) {
        *r = i.ln();
        *b = band_of(*r);
    }

    let n_steps = (spec.duration_s / spec.substep_s).round() as u64;
    if !spec.shapes.is_empty() {
        for step in 1..=n_steps {
            let t = (step as f64 * spec.substep_s).min(spec.duration_s);
            let t_us = (t * 1e6).round() as u64;
            let previous = std::mem::replace(&mut placed, place(&spec.shapes, t, geometry));
            let msg = &mut messages[bucket(t_us)].events;

            for (now, before) in placed.iter().zip(&previous) {
                let Some((x0, y0, x1, y1)) = pixel_span(&now.bbox.union(&before.bbox)) else {
                    continue;
                };
                for y in y0..y1 {
                    for x in x0..x1 {
                        let idx = y * w + x;
                        if stamp[idx] == step as u32 {
                            continue;
                        }
                        stamp[idx] = step as u32;
                        let value = render(&placed, x, y);
                        if value == intensity[idx] {
                            continue;
                        }
                        intensity[idx] = value;
                        let (lo, hi) = band[idx];
                        if value > lo && value < hi {
                            continue;
                        }
                        let diff = value.ln() - reference[idx];
                        let crossings = (diff.abs() / c + 1e-9).floor();
                        if crossings < 1.0 {
                            continue;
                        }
                        let p = if diff > 0.0 { Polarity::On } else { Polarity::Off };
                        reference[idx] += diff.signum() * crossings * c;
                        band[idx] = band_of(reference[idx]);
                        for _ in 0..crossings as u64 {
                            msg.push(Event::new(t_us, x as u16, y as u16, p));
                        }
                    }
                }
            }
        }
    }

    if spec.noise_rate_hz_per_pixel > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for (k, msg) in messages.iter_mut().enumerate() {
            let (start, end) = (starts[k], starts[k + 1]);
            if end <= start {
                continue;
            }
            let mean = spec.noise_rate_hz_per_pixel * (w * h) as f64 * (end - start) as f64 / 1e6;
            let count = Poisson::new(mean)
                .map_err(|e| Error::Config(format!("noise rate: {e}")))?
                .sample(&mut rng) as u64;
            msg.events.reserve(count as usize);
            for _ in 0..count {
                let t = rng.gen_range(start..end);
                let x = rng.gen_range(0..w) as u16;
                let y = rng.gen_range(0..h) as u16;
                let p = if rng.gen_bool(0.5) { Polarity::On } else { Polarity::Off };
                msg.events.push(Event::new(t, x, y, p));
            }
        }
    }

    for m in &mut messages {
        m.events.sort_unstable_by_key(|e| (e.t, e.y, e.x, e.p));
    }

    Ok(Simulation {
        header,
        messages,
        ground_truth: chunk_ground_truth(spec, "simulated")?,
    })
}
