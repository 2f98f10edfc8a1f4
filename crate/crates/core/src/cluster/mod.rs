//! Clustering of denoised occupancy pixels into scored box proposals.
//!
//! [`propose`] is the full per-chunk chain: rasterize, binarize, erode,
//! collect surviving pixels, run [`dbscan`], drop clusters below
//! `min_cluster_size`, and emit one box per remaining cluster. The output
//! [`ProposalSet`] is what a two-stage detector's ROI head would consume in
//! place of learned region proposals.

mod dbscan;

pub use self::dbscan::{dbscan, Label};

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{BBox, EventChunk, SensorGeometry};
use crate::raster::{binarize, build_frame, erode_passes, ErosionConfig, StructuringElement};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDbscan")]
pub struct DbscanConfig {
    eps: f64,
    min_pts: usize,
    min_cluster_size: usize,
    score_norm: f64,
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawDbscan {
    eps: f64,
    min_pts: usize,
    min_cluster_size: usize,
    score_norm: f64,
}

impl Default for RawDbscan {
    fn default() -> Self {
        let d = DbscanConfig::default();
        RawDbscan {
            eps: d.eps,
            min_pts: d.min_pts,
            min_cluster_size: d.min_cluster_size,
            score_norm: d.score_norm,
        }
    }
}

impl TryFrom<RawDbscan> for DbscanConfig {
    type Error = Error;

    fn try_from(r: RawDbscan) -> Result<Self> {
        DbscanConfig::new(r.eps, r.min_pts, r.min_cluster_size, r.score_norm)
    }
}

impl Default for DbscanConfig {
    fn default() -> Self {
        DbscanConfig {
            eps: 5.0,
            min_pts: 8,
            min_cluster_size: 15,
            score_norm: 100.0,
        }
    }
}

impl DbscanConfig {
    pub fn new(eps: f64, min_pts: usize, min_cluster_size: usize, score_norm: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {eps}")));
        }
        if min_pts == 0 {
            return Err(Error::Config("min_pts must be at least 1".into()));
        }
        if min_cluster_size < min_pts {
            return Err(Error::Config(format!(
                "min_cluster_size ({min_cluster_size}) must be >= min_pts ({min_pts})"
            )));
        }
        if !(score_norm.is_finite() && score_norm > 0.0) {
            return Err(Error::Config(format!("score_norm must be positive, got {score_norm}")));
        }
        Ok(DbscanConfig {
            eps,
            min_pts,
            min_cluster_size,
            score_norm,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn min_pts(&self) -> usize {
        self.min_pts
    }

    pub fn min_cluster_size(&self) -> usize {
        self.min_cluster_size
    }

    pub fn score_norm(&self) -> f64 {
        self.score_norm
    }
}

/// A group of distinct pixel positions sharing a DBSCAN label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub points: Vec<(i32, i32)>,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.points.len()
    }
}

/// Groups labeled points by cluster id, keeping clusters of at least
/// `min_cluster_size` points. Output is in cluster-id order.
pub fn extract_clusters(labels: &[Label], points: &[(i32, i32)], cfg: &DbscanConfig) -> Vec<Cluster> {
    let mut groups: BTreeMap<usize, Vec<(i32, i32)>> = BTreeMap::new();
    for (label, &p) in labels.iter().zip(points) {
        if let Label::Cluster(id) = label {
            groups.entry(*id).or_default().push(p);
        }
    }
    groups
        .into_values()
        .filter(|pts| pts.len() >= cfg.min_cluster_size)
        .map(|points| Cluster { points })
        .collect()
}

/// Tightest box around a non-empty cluster; a single pixel has area 1.
pub fn cluster_bbox(c: &Cluster) -> BBox {
    let (mut x0, mut y0) = (i32::MAX, i32::MAX);
    let (mut x1, mut y1) = (i32::MIN, i32::MIN);
    for &(x, y) in &c.points {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    BBox {
        x_min: x0 as f64,
        y_min: y0 as f64,
        x_max: x1 as f64 + 1.0,
        y_max: y1 as f64 + 1.0,
    }
}

/// Confidence in (0, 1]: cluster size over `score_norm`, saturating at 1.
pub fn score(c: &Cluster, cfg: &DbscanConfig) -> f64 {
    (c.size() as f64 / cfg.score_norm).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: BBox,
    pub score: f64,
}

/// Descending score, then ascending `(x_min, y_min)`.
pub fn proposal_order(a: &Proposal, b: &Proposal) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
}

/// All proposals for one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub chunk_index: u64,
    pub t_start: u64,
    pub t_end: u64,
    pub proposals: Vec<Proposal>,
}

#[derive(Serialize, Deserialize)]
struct ProposalLine {
    chunk_index: u64,
    t_start_us: u64,
    t_end_us: u64,
    boxes: Vec<[f64; 4]>,
    scores: Vec<f64>,
}

impl ProposalSet {
    pub fn new(chunk_index: u64, t_start: u64, t_end: u64, mut proposals: Vec<Proposal>) -> Self {
        proposals.sort_by(proposal_order);
        ProposalSet {
            chunk_index,
            t_start,
            t_end,
            proposals,
        }
    }

    /// One JSON object, no trailing newline.
    pub fn to_json_line(&self) -> String {
        let line = ProposalLine {
            chunk_index: self.chunk_index,
            t_start_us: self.t_start,
            t_end_us: self.t_end,
            boxes: self.proposals.iter().map(|p| p.bbox.to_array()).collect(),
            scores: self.proposals.iter().map(|p| p.score).collect(),
        };
        serde_json::to_string(&line).expect("proposal line serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let raw: ProposalLine = serde_json::from_str(line)?;
        if raw.boxes.len() != raw.scores.len() {
            return Err(Error::validation(
                format!("chunk {}", raw.chunk_index),
                format!("{} boxes but {} scores", raw.boxes.len(), raw.scores.len()),
            ));
        }
        let proposals = raw
            .boxes
            .iter()
            .zip(&raw.scores)
            .map(|(b, &score)| {
                if !(score > 0.0 && score <= 1.0) {
                    return Err(Error::validation(
                        format!("chunk {}", raw.chunk_index),
                        format!("score {score} outside (0, 1]"),
                    ));
                }
                Ok(Proposal {
                    bbox: BBox::from_array(*b)?,
                    score,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ProposalSet::new(
            raw.chunk_index,
            raw.t_start_us,
            raw.t_end_us,
            proposals,
        ))
    }
}

pub fn write_proposal_lines(sets: &[ProposalSet]) -> String {
    let mut out = String::new();
    for s in sets {
        out.push_str(&s.to_json_line());
        out.push('\n');
    }
    out
}

pub fn parse_proposal_lines(text: &str) -> Result<Vec<ProposalSet>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            ProposalSet::from_json_line(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Boxes and scores for a cluster list, sorted into a [`ProposalSet`].
pub fn proposals_from_clusters(chunk: &EventChunk, clusters: &[Cluster], cfg: &DbscanConfig) -> ProposalSet {
    let proposals = clusters
        .iter()
        .map(|c| Proposal {
            bbox: cluster_bbox(c),
            score: score(c, cfg),
        })
        .collect();
    ProposalSet::new(chunk.chunk_index, chunk.t_start, chunk.t_end, proposals)
}

/// Full per-chunk pipeline with a single erosion pass.
pub fn propose(
    chunk: &EventChunk,
    geometry: SensorGeometry,
    se: &StructuringElement,
    cfg: &DbscanConfig,
) -> Result<ProposalSet> {
    Pipeline::new(geometry, se.clone(), 1, *cfg).run(chunk)
}

/// Pipeline settings bundled for repeated use across chunks.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub geometry: SensorGeometry,
    pub element: StructuringElement,
    pub erosion_passes: usize,
    pub dbscan: DbscanConfig,
}

impl Pipeline {
    pub fn new(
        geometry: SensorGeometry,
        element: StructuringElement,
        erosion_passes: usize,
        dbscan: DbscanConfig,
    ) -> Self {
        Pipeline {
            geometry,
            element,
            erosion_passes,
            dbscan,
        }
    }

    pub fn from_config(geometry: SensorGeometry, erosion: &ErosionConfig, dbscan: DbscanConfig) -> Result<Self> {
        Ok(Pipeline::new(geometry, erosion.element()?, erosion.passes, dbscan))
    }

    pub fn run(&self, chunk: &EventChunk) -> Result<ProposalSet> {
        let frame = build_frame(chunk, self.geometry)?;
        let bits = binarize(&frame);
        let eroded = erode_passes(&bits, &self.element, self.erosion_passes);
        let points = eroded.set_points();
        let labels = dbscan(&points, &self.dbscan);
        let clusters = extract_clusters(&labels, &points, &self.dbscan);
        Ok(proposals_from_clusters(chunk, &clusters, &self.dbscan))
    }
}
