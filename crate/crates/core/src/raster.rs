//! Pseudo-frame rasterization and binary erosion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EventChunk, Polarity, SensorGeometry};

/// Visualization value of an ON event; OFF events code to 0.
pub const ON_CODE: u8 = 254;

/// Last-event-wins rasterization of a chunk.
///
/// `cells` holds the visualization coding (`p * 254`); `occupied` records
/// whether any event hit the pixel, independent of polarity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoFrame {
    geometry: SensorGeometry,
    cells: Vec<u8>,
    occupied: Vec<bool>,
}

impl PseudoFrame {
    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn coding(&self, x: u16, y: u16) -> u8 {
        self.cells[self.geometry.index(x, y)]
    }

    pub fn is_occupied(&self, x: u16, y: u16) -> bool {
        self.occupied[self.geometry.index(x, y)]
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    /// Binary PGM (P5) of the visualization coding.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.geometry.width, self.geometry.height).into_bytes();
        out.extend_from_slice(&self.cells);
        out
    }
}

pub fn build_frame(chunk: &EventChunk, geometry: SensorGeometry) -> Result<PseudoFrame> {
    let n = geometry.pixel_count();
    let mut cells = vec![0u8; n];
    let mut occupied = vec![false; n];
    let mut latest = vec![0u64; n];
    for (i, ev) in chunk.events.iter().enumerate() {
        if !geometry.contains(ev.x, ev.y) {
            return Err(Error::validation(
                format!("chunk {} event {i}", chunk.chunk_index),
                format!(
                    "pixel ({}, {}) outside {}x{} sensor",
                    ev.x, ev.y, geometry.width, geometry.height
                ),
            ));
        }
        let idx = geometry.index(ev.x, ev.y);
        // later list position wins ties on t
        if !occupied[idx] || ev.t >= latest[idx] {
            latest[idx] = ev.t;
            occupied[idx] = true;
            cells[idx] = match ev.p {
                Polarity::On => ON_CODE,
                Polarity::Off => 0,
            };
        }
    }
    Ok(PseudoFrame {
        geometry,
        cells,
        occupied,
    })
}

/// Occupancy bitmap, one byte per pixel holding 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryFrame {
    geometry: SensorGeometry,
    bits: Vec<u8>,
}

impl BinaryFrame {
    pub fn zeros(geometry: SensorGeometry) -> Self {
        BinaryFrame {
            geometry,
            bits: vec![0; geometry.pixel_count()],
        }
    }

    /// Builds a frame from row-major bits; any nonzero byte counts as set.
    pub fn from_bits(geometry: SensorGeometry, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != geometry.pixel_count() {
            return Err(Error::validation(
                "binary frame",
                format!("{} bits for a {}x{} frame", bits.len(), geometry.width, geometry.height),
            ));
        }
        let bits = bits.into_iter().map(|b| (b != 0) as u8).collect();
        Ok(BinaryFrame { geometry, bits })
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, x: u16, y: u16) -> bool {
        self.bits[self.geometry.index(x, y)] != 0
    }

    pub fn set(&mut self, x: u16, y: u16, on: bool) {
        let idx = self.geometry.index(x, y);
        self.bits[idx] = on as u8;
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    /// Set pixels in row-major order, i.e. sorted by `(y, x)`.
    pub fn set_points(&self) -> Vec<(i32, i32)> {
        let w = self.geometry.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0)
            .map(|(i, _)| ((i % w) as i32, (i / w) as i32))
            .collect()
    }

    /// True when every set bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryFrame) -> bool {
        self.geometry == other.geometry && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a <= b)
    }
}

pub fn binarize(frame: &PseudoFrame) -> BinaryFrame {
    BinaryFrame {
        geometry: frame.geometry,
        bits: frame.occupied.iter().map(|&o| o as u8).collect(),
    }
}

/// Odd-sided binary mask anchored at its center cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuringElement {
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

impl Default for StructuringElement {
    fn default() -> Self {
        StructuringElement::rect(3, 3).expect("3x3 is valid")
    }
}

impl StructuringElement {
    pub fn rect(width: usize, height: usize) -> Result<Self> {
        StructuringElement::from_mask(width, height, vec![true; width * height])
    }

    pub fn from_mask(width: usize, height: usize, mask: Vec<bool>) -> Result<Self> {
        if width.is_multiple_of(2) || height.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "structuring element sides must be odd, got {width}x{height}"
            )));
        }
        if mask.len() != width * height {
            return Err(Error::Config(format!(
                "structuring element mask has {} cells, expected {}",
                mask.len(),
                width * height
            )));
        }
        if !mask[(height / 2) * width + width / 2] {
            return Err(Error::Config("structuring element anchor cell must be set".into()));
        }
        Ok(StructuringElement { width, height, mask })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(dx, dy)` of every set cell relative to the anchor.
    pub fn offsets(&self) -> impl Iterator<Item = (isize, isize)> + '_ {
        let (ax, ay) = ((self.width / 2) as isize, (self.height / 2) as isize);
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(move |(i, _)| ((i % self.width) as isize - ax, (i / self.width) as isize - ay))
    }
}

/// Erosion settings: a rectangular element applied `passes` times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErosionConfig {
    pub se_width: usize,
    pub se_height: usize,
    pub passes: usize,
}

impl Default for ErosionConfig {
    fn default() -> Self {
        ErosionConfig {
            se_width: 3,
            se_height: 3,
            passes: 1,
        }
    }
}

impl ErosionConfig {
    pub fn element(&self) -> Result<StructuringElement> {
        StructuringElement::rect(self.se_width, self.se_height)
    }
}

/// Keeps a pixel only if every set element cell, anchored on it, lands on a
/// set pixel. Neighbors outside the frame count as unset.
pub fn erode(frame: &BinaryFrame, se: &StructuringElement) -> BinaryFrame {
    let w = frame.geometry.width as isize;
    let h = frame.geometry.height as isize;
    let src = &frame.bits;
    let mut out = vec![1u8; src.len()];

    for (dx, dy) in se.offsets() {
        let lo = (-dx).clamp(0, w) as usize;
        let hi = (w - dx).clamp(0, w) as usize;
        for y in 0..h {
            let row = &mut out[(y * w) as usize..((y + 1) * w) as usize];
            let sy = y + dy;
            if sy < 0 || sy >= h {
                row.fill(0);
                continue;
            }
            let src_row = &src[(sy * w) as usize..((sy + 1) * w) as usize];
            row[..lo].fill(0);
            if hi > lo {
                row[hi..].fill(0);
                let shifted = &src_row[(lo as isize + dx) as usize..(hi as isize + dx) as usize];
                for (o, &s) in row[lo..hi].iter_mut().zip(shifted) {
                    *o &= s;
                }
            } else {
                row.fill(0);
            }
        }
    }
    BinaryFrame {
        geometry: frame.geometry,
        bits: out,
    }
}

pub fn erode_passes(frame: &BinaryFrame, se: &StructuringElement, passes: usize) -> BinaryFrame {
    let mut cur = frame.clone();
    for _ in 0..passes {
        cur = erode(&cur, se);
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Event;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn geom(w: u16, h: u16) -> SensorGeometry {
        SensorGeometry::new(w, h).unwrap()
    }

    fn chunk(events: Vec<Event>) -> EventChunk {
        EventChunk {
            chunk_index: 0,
            t_start: 0,
            t_end: 0,
            events,
        }
    }

    /// Direct neighborhood check, one output pixel at a time.
    fn erode_oracle(f: &BinaryFrame, se: &StructuringElement) -> BinaryFrame {
        let g = f.geometry();
        let mut out = BinaryFrame::zeros(g);
        for y in 0..g.height as isize {
            for x in 0..g.width as isize {
                let keep = se.offsets().all(|(dx, dy)| {
                    let (sx, sy) = (x + dx, y + dy);
                    sx >= 0 && sy >= 0 && sx < g.width as isize && sy < g.height as isize && f.get(sx as u16, sy as u16)
                });
                out.set(x as u16, y as u16, keep);
            }
        }
        out
    }

    fn random_frame(g: SensorGeometry, density: f64, seed: u64) -> BinaryFrame {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let bits = (0..g.pixel_count()).map(|_| rng.gen_bool(density) as u8).collect();
        BinaryFrame::from_bits(g, bits).unwrap()
    }

    #[test]
    fn empty_chunk_gives_empty_frame() {
        let f = build_frame(&chunk(vec![]), geom(8, 6)).unwrap();
        assert_eq!(f.occupied_count(), 0);
        assert!(f.cells().iter().all(|&c| c == 0));
        assert_eq!(binarize(&f).popcount(), 0);
    }

    #[test]
    fn latest_event_wins() {
        let f = build_frame(
            &chunk(vec![
                Event::new(1, 3, 4, Polarity::On),
                Event::new(2, 3, 4, Polarity::Off),
            ]),
            geom(8, 8),
        )
        .unwrap();
        assert!(f.is_occupied(3, 4));
        assert_eq!(f.coding(3, 4), 0);
        assert_eq!(f.occupied_count(), 1);

        // equal timestamps: later list position wins
        let f = build_frame(
            &chunk(vec![
                Event::new(5, 1, 1, Polarity::Off),
                Event::new(5, 1, 1, Polarity::On),
            ]),
            geom(8, 8),
        )
        .unwrap();
        assert_eq!(f.coding(1, 1), ON_CODE);
    }

    #[test]
    fn occupancy_counts_distinct_pixels() {
        let g = geom(640, 480);
        let events: Vec<Event> = (0..1000u32)
            .map(|i| {
                let x = ((i * 7919) % 640) as u16;
                let y = ((i * 104_729) % 480) as u16;
                Event::new(i as u64, x, y, if i % 2 == 0 { Polarity::On } else { Polarity::Off })
            })
            .collect();
        let distinct: HashSet<(u16, u16)> = events.iter().map(|e| (e.x, e.y)).collect();
        let f = build_frame(&chunk(events), g).unwrap();
        assert_eq!(f.occupied_count(), distinct.len());
        assert_eq!(binarize(&f).popcount(), distinct.len());
    }

    #[test]
    fn distinct_grid_gives_exactly_thousand() {
        let events: Vec<Event> = (0..1000u16)
            .map(|i| Event::new(0, i % 40, i / 40, Polarity::On))
            .collect();
        let f = build_frame(&chunk(events), geom(640, 480)).unwrap();
        assert_eq!(f.occupied_count(), 1000);
    }

    #[test]
    fn rejects_event_outside_geometry() {
        let err = build_frame(&chunk(vec![Event::new(0, 8, 0, Polarity::On)]), geom(8, 8)).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
    }

    #[test]
    fn binarize_is_polarity_blind() {
        let f = build_frame(
            &chunk(vec![
                Event::new(0, 0, 0, Polarity::On),
                Event::new(0, 2, 2, Polarity::Off),
            ]),
            geom(4, 4),
        )
        .unwrap();
        assert_eq!(binarize(&f).popcount(), 2);
    }

    #[test]
    fn isolated_pixel_removed() {
        let mut f = BinaryFrame::zeros(geom(9, 9));
        f.set(4, 4, true);
        assert_eq!(erode(&f, &StructuringElement::default()).popcount(), 0);
    }

    #[test]
    fn solid_block_shrinks_to_interior() {
        let g = geom(11, 11);
        let mut f = BinaryFrame::zeros(g);
        for y in 3..8 {
            for x in 3..8 {
                f.set(x, y, true);
            }
        }
        let se = StructuringElement::default();
        let e = erode(&f, &se);
        assert_eq!(e, erode_oracle(&f, &se));
        assert_eq!(e.popcount(), 9);
        for y in 4..7 {
            for x in 4..7 {
                assert!(e.get(x, y));
            }
        }
    }

    #[test]
    fn full_frame_loses_border() {
        let g = geom(640, 480);
        let f = BinaryFrame::from_bits(g, vec![1; g.pixel_count()]).unwrap();
        let e = erode(&f, &StructuringElement::default());
        assert_eq!(e.popcount(), 638 * 478);
        assert!(!e.get(0, 0) && !e.get(639, 240) && !e.get(320, 479));
        assert!(e.get(1, 1) && e.get(638, 478));
    }

    #[test]
    fn matches_oracle_for_irregular_elements() {
        let g = geom(23, 17);
        let cross = StructuringElement::from_mask(3, 3, vec![false, true, false, true, true, true, false, true, false])
            .unwrap();
        let wide = StructuringElement::rect(5, 1).unwrap();
        for seed in 0..20 {
            let f = random_frame(g, 0.8, seed);
            assert_eq!(erode(&f, &cross), erode_oracle(&f, &cross));
            assert_eq!(erode(&f, &wide), erode_oracle(&f, &wide));
            assert_eq!(
                erode(&f, &StructuringElement::default()),
                erode_oracle(&f, &StructuringElement::default())
            );
        }
    }

    #[test]
    fn element_validation() {
        assert!(StructuringElement::rect(2, 3).is_err());
        assert!(StructuringElement::from_mask(3, 1, vec![true, false, true]).is_err());
        assert!(StructuringElement::from_mask(3, 3, vec![true; 8]).is_err());
    }

    #[test]
    fn pgm_layout() {
        let f = build_frame(&chunk(vec![Event::new(0, 1, 0, Polarity::On)]), geom(3, 2)).unwrap();
        assert_eq!(f.to_pgm(), b"P5\n3 2\n255\n\x00\xfe\x00\x00\x00\x00".to_vec());
    }

    proptest! {
        #[test]
        fn frame_occupancy_depends_only_on_coordinate_set(
            raw in proptest::collection::vec((0u16..16, 0u16..12, 0u64..5, any::<bool>()), 0..80),
            rot in 0usize..80,
        ) {
            let g = geom(16, 12);
            let events: Vec<Event> = raw.iter()
                .map(|&(x, y, t, on)| Event::new(t, x, y, if on { Polarity::On } else { Polarity::Off }))
                .collect();
            let mut shuffled = events.clone();
            if !shuffled.is_empty() {
                let k = rot % shuffled.len();
                shuffled.rotate_left(k);
            }
            for e in shuffled.iter_mut() {
                e.p = Polarity::Off;
            }
            let a = binarize(&build_frame(&chunk(events), g).unwrap());
            let b = binarize(&build_frame(&chunk(shuffled), g).unwrap());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn erosion_matches_oracle_and_is_translation_equivariant(
            seed in any::<u64>(), dx in 0u16..4, dy in 0u16..4,
        ) {
            let g = geom(24, 20);
            let base = random_frame(g, 0.7, seed);
            let se = StructuringElement::default();
            let eroded = erode(&base, &se);
            prop_assert_eq!(&eroded, &erode_oracle(&base, &se));

            // shift the content, keeping away from the borders
            let mut shifted = BinaryFrame::zeros(g);
            for y in 2..14 {
                for x in 2..16 {
                    shifted.set(x + dx, y + dy, base.get(x, y));
                }
            }
            let mut cropped = BinaryFrame::zeros(g);
            for y in 2..14 {
                for x in 2..16 {
                    cropped.set(x, y, base.get(x, y));
                }
            }
            let a = erode(&shifted, &se);
            let b = erode(&cropped, &se);
            for y in 2..14 {
                for x in 2..16 {
                    prop_assert_eq!(a.get(x + dx, y + dy), b.get(x, y));
                }
            }
        }
    }
}
