//! Core event-stream types and box geometry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sign of a brightness change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Off = 0,
    On = 1,
}

impl Polarity {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Polarity::Off),
            1 => Some(Polarity::On),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }
}

/// A single sensor event: timestamp in microseconds, pixel position and polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Event { t, x, y, p }
    }
}

/// Sensor resolution in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawGeometry")]
pub struct SensorGeometry {
    pub width: u16,
    pub height: u16,
}

#[derive(Deserialize)]
struct RawGeometry {
    width: u16,
    height: u16,
}

impl TryFrom<RawGeometry> for SensorGeometry {
    type Error = Error;

    fn try_from(raw: RawGeometry) -> Result<Self> {
        SensorGeometry::new(raw.width, raw.height)
    }
}

impl Default for SensorGeometry {
    fn default() -> Self {
        SensorGeometry {
            width: 640,
            height: 480,
        }
    }
}

impl SensorGeometry {
    pub fn new(width: u16, height: u16) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation(
                "geometry",
                format!("sensor geometry must be at least 1x1, got {width}x{height}"),
            ));
        }
        Ok(SensorGeometry { width, height })
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        x < self.width && y < self.height
    }

    /// Row-major index of pixel `(x, y)`.
    #[inline]
    pub fn index(&self, x: u16, y: u16) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn check(&self, event: &Event) -> Result<()> {
        if self.contains(event.x, event.y) {
            Ok(())
        } else {
            Err(Error::validation(
                "event",
                format!(
                    "pixel ({}, {}) outside {}x{} sensor",
                    event.x, event.y, self.width, self.height
                ),
            ))
        }
    }

    /// The whole sensor as a box in continuous coordinates.
    pub fn bounds(&self) -> BBox {
        BBox {
            x_min: 0.0,
            y_min: 0.0,
            x_max: self.width as f64,
            y_max: self.height as f64,
        }
    }
}

/// A fixed-cadence bundle of events as delivered by the recorder.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EventMessage {
    pub index: u64,
    pub events: Vec<Event>,
}

/// The pipeline's unit of work: the retained events of one window of messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventChunk {
    pub chunk_index: u64,
    pub t_start: u64,
    pub t_end: u64,
    pub events: Vec<Event>,
}

impl EventChunk {
    pub fn empty(chunk_index: u64) -> Self {
        EventChunk {
            chunk_index,
            t_start: 0,
            t_end: 0,
            events: Vec::new(),
        }
    }
}

/// Axis-aligned box in continuous pixel coordinates, `[x_min, x_max) x [y_min, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min > x_max || y_min > y_max {
            return Err(Error::validation(
                "bbox",
                format!("invalid box [{x_min}, {y_min}, {x_max}, {y_max}]"),
            ));
        }
        Ok(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        BBox::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        bbox_area(self)
    }

    /// Intersection with `other`, or `None` when they do not overlap.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x_min = self.x_min.max(other.x_min);
        let y_min = self.y_min.max(other.y_min);
        let x_max = self.x_max.min(other.x_max);
        let y_max = self.y_max.min(other.y_max);
        (x_min <= x_max && y_min <= y_max).then_some(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Smallest box enclosing both.
    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    pub fn scale(&self, s: f64) -> BBox {
        BBox {
            x_min: self.x_min * s,
            y_min: self.y_min * s,
            x_max: self.x_max * s,
            y_max: self.y_max * s,
        }
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        other.x_min >= self.x_min && other.y_min >= self.y_min && other.x_max <= self.x_max && other.y_max <= self.y_max
    }
}

pub fn bbox_area(b: &BBox) -> f64 {
    (b.x_max - b.x_min) * (b.y_max - b.y_min)
}

/// Intersection over union. Two zero-area boxes give 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b).map_or(0.0, |i| i.area());
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn inside(b: &BBox, cx: f64, cy: f64) -> bool {
        cx >= b.x_min && cx < b.x_max && cy >= b.y_min && cy < b.y_max
    }

    /// Pixel-counting oracle over [0, 20)^2: (cells in a, cells in b, cells in both).
    fn grid_counts(a: &BBox, b: &BBox, step: f64) -> (f64, f64, f64) {
        let (mut na, mut nb, mut both) = (0u64, 0u64, 0u64);
        let n = (20.0 / step).round() as i64;
        for i in 0..n {
            for j in 0..n {
                let cx = (i as f64 + 0.5) * step;
                let cy = (j as f64 + 0.5) * step;
                let (ia, ib) = (inside(a, cx, cy), inside(b, cx, cy));
                na += ia as u64;
                nb += ib as u64;
                both += (ia && ib) as u64;
            }
        }
        let cell = step * step;
        (na as f64 * cell, nb as f64 * cell, both as f64 * cell)
    }

    fn grid_area(b: &BBox, step: f64) -> f64 {
        grid_counts(b, b, step).0
    }

    fn grid_iou(a: &BBox, b: &BBox, step: f64) -> f64 {
        let (na, nb, inter) = grid_counts(a, b, step);
        inter / (na + nb - inter)
    }

    #[test]
    fn area_examples() {
        assert_eq!(bbox_area(&b(0.0, 0.0, 10.0, 10.0)), 100.0);
        assert_eq!(bbox_area(&b(3.0, 3.0, 3.0, 9.0)), 0.0);
        let c = b(2.5, 1.0, 7.5, 4.0);
        assert_eq!(bbox_area(&c), 15.0);
        assert!((grid_area(&c, 0.1) - 15.0).abs() < 1e-9);
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(20.0, 20.0, 30.0, 30.0)), 0.0);
        let shifted = b(5.0, 0.0, 15.0, 10.0);
        let oracle = grid_iou(&a, &shifted, 0.1);
        assert!((oracle - 1.0 / 3.0).abs() < 1e-9);
        assert!((iou(&a, &shifted) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_boxes() {
        let p = b(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&p, &p), 0.0);
        assert!(BBox::new(2.0, 0.0, 1.0, 1.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn geometry_rejects_zero() {
        assert!(SensorGeometry::new(0, 10).is_err());
        let g = SensorGeometry::default();
        assert_eq!((g.width, g.height), (640, 480));
        assert!(g.check(&Event::new(0, 640, 0, Polarity::On)).is_err());
        assert!(g.check(&Event::new(0, 639, 479, Polarity::Off)).is_ok());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.0..40.0f64, 0.0..40.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
    }

    proptest! {
        #[test]
        fn iou_bounded_and_symmetric(a in arb_box(), c in arb_box()) {
            let v = iou(&a, &c);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(&c, &a));
        }

        #[test]
        fn iou_self_is_one(a in arb_box()) {
            prop_assume!(a.area() > 1e-9);
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn iou_translation_and_scale_invariant(
            a in arb_box(), c in arb_box(),
            dx in -100.0..100.0f64, dy in -100.0..100.0f64, s in 0.1..10.0f64,
        ) {
            let v = iou(&a, &c);
            prop_assert!((iou(&a.translate(dx, dy), &c.translate(dx, dy)) - v).abs() < 1e-9);
            prop_assert!((iou(&a.scale(s), &c.scale(s)) - v).abs() < 1e-9);
        }
    }
}
