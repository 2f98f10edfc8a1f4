//! Single-class detection scoring of proposals against ground-truth boxes.
//!
//! Matching is greedy in score order at a fixed IoU threshold. Per video we
//! report 101-point interpolated average precision and recall (TP over total
//! ground truth); the summary means are unweighted across videos.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cluster::ProposalSet;
use crate::error::{Error, Result};
use crate::event::{iou, BBox, SensorGeometry};

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame {
    pub chunk_index: u64,
    pub boxes: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSet {
    pub video_name: String,
    pub geometry: SensorGeometry,
    pub frames: Vec<GroundTruthFrame>,
}

#[derive(Serialize, Deserialize)]
struct RawFrame {
    chunk_index: u64,
    boxes: Vec<[f64; 4]>,
}

#[derive(Serialize, Deserialize)]
struct RawGroundTruth {
    video_name: String,
    width: u16,
    height: u16,
    frames: Vec<RawFrame>,
}

impl GroundTruthSet {
    pub fn validate(&self) -> Result<()> {
        let bounds = self.geometry.bounds();
        let mut prev: Option<u64> = None;
        for f in &self.frames {
            if prev.is_some_and(|p| f.chunk_index <= p) {
                return Err(Error::ordering(
                    format!("{}: chunk {}", self.video_name, f.chunk_index),
                    "chunk_index must be strictly increasing",
                ));
            }
            prev = Some(f.chunk_index);
            for b in &f.boxes {
                if !bounds.contains_box(b) {
                    return Err(Error::validation(
                        format!("{}: chunk {}", self.video_name, f.chunk_index),
                        format!(
                            "box [{}, {}, {}, {}] outside {}x{} sensor",
                            b.x_min, b.y_min, b.x_max, b.y_max, self.geometry.width, self.geometry.height
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn total_boxes(&self) -> usize {
        self.frames.iter().map(|f| f.boxes.len()).sum()
    }

    pub fn to_json(&self) -> String {
        let raw = RawGroundTruth {
            video_name: self.video_name.clone(),
            width: self.geometry.width,
            height: self.geometry.height,
            frames: self
                .frames
                .iter()
                .map(|f| RawFrame {
                    chunk_index: f.chunk_index,
                    boxes: f.boxes.iter().map(|b| b.to_array()).collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("ground truth serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawGroundTruth = serde_json::from_str(text)?;
        let set = GroundTruthSet {
            video_name: raw.video_name,
            geometry: SensorGeometry::new(raw.width, raw.height)?,
            frames: raw
                .frames
                .into_iter()
                .map(|f| {
                    Ok(GroundTruthFrame {
                        chunk_index: f.chunk_index,
                        boxes: f.boxes.into_iter().map(BBox::from_array).collect::<Result<_>>()?,
                    })
                })
                .collect::<Result<_>>()?,
        };
        set.validate()?;
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEvalConfig")]
pub struct EvalConfig {
    iou_threshold: f64,
    max_detections_per_chunk: usize,
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawEvalConfig {
    iou_threshold: f64,
    max_detections_per_chunk: usize,
}

impl Default for RawEvalConfig {
    fn default() -> Self {
        let d = EvalConfig::default();
        RawEvalConfig {
            iou_threshold: d.iou_threshold,
            max_detections_per_chunk: d.max_detections_per_chunk,
        }
    }
}

impl TryFrom<RawEvalConfig> for EvalConfig {
    type Error = Error;

    fn try_from(r: RawEvalConfig) -> Result<Self> {
        EvalConfig::new(r.iou_threshold, r.max_detections_per_chunk)
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.75,
            max_detections_per_chunk: 100,
        }
    }
}

impl EvalConfig {
    pub fn new(iou_threshold: f64, max_detections_per_chunk: usize) -> Result<Self> {
        if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "iou_threshold must be in (0, 1], got {iou_threshold}"
            )));
        }
        if max_detections_per_chunk == 0 {
            return Err(Error::Config("max_detections_per_chunk must be at least 1".into()));
        }
        Ok(EvalConfig {
            iou_threshold,
            max_detections_per_chunk,
        })
    }

    pub fn iou_threshold(&self) -> f64 {
        self.iou_threshold
    }

    pub fn max_detections_per_chunk(&self) -> usize {
        self.max_detections_per_chunk
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// TP flag per retained proposal, in proposal order.
    pub flags: Vec<bool>,
    /// GT index matched by each TP proposal.
    pub assignment: Vec<Option<usize>>,
    pub false_negatives: usize,
}

/// Greedy one-to-one matching in proposal order. Each proposal takes the
/// unmatched GT box of highest IoU (lowest index on ties) if that IoU
/// reaches the threshold. Proposals past `max_detections_per_chunk` are
/// dropped.
pub fn match_detections(proposals: &ProposalSet, gt: &[BBox], cfg: &EvalConfig) -> MatchResult {
    let kept = &proposals.proposals[..proposals.proposals.len().min(cfg.max_detections_per_chunk)];
    let mut taken = vec![false; gt.len()];
    let mut assignment = Vec::with_capacity(kept.len());
    for p in kept {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gt.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let v = iou(&p.bbox, g);
            if v >= cfg.iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
        }
        assignment.push(best.map(|(j, _)| j));
    }
    MatchResult {
        flags: assignment.iter().map(Option::is_some).collect(),
        false_negatives: taken.iter().filter(|t| !**t).count(),
        assignment,
    }
}

/// A scored, flagged detection pooled across a video.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub score: f64,
    pub chunk_index: u64,
    /// Position within its chunk's proposal list.
    pub rank: usize,
    pub true_positive: bool,
}

fn sorted_flags(detections: &[Detection]) -> Vec<bool> {
    let mut d = detections.to_vec();
    d.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.chunk_index.cmp(&b.chunk_index))
            .then(a.rank.cmp(&b.rank))
    });
    d.into_iter().map(|d| d.true_positive).collect()
}

/// 101-point interpolated AP over detections sorted by descending score.
pub fn average_precision(detections: &[Detection], total_gt: usize) -> f64 {
    if total_gt == 0 {
        return if detections.is_empty() { 1.0 } else { 0.0 };
    }
    let flags = sorted_flags(detections);
    let mut tp_cum = Vec::with_capacity(flags.len());
    let mut precision = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (i, &f) in flags.iter().enumerate() {
        tp += f as usize;
        tp_cum.push(tp);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for k in 0..=100usize {
        // first rank whose recall reaches k/100, compared exactly in integers
        let first = tp_cum.partition_point(|&t| t * 100 < k * total_gt);
        if first < precision.len() {
            sum += precision[first];
        }
    }
    sum / 101.0
}

/// True positives over total ground truth.
pub fn average_recall(detections: &[Detection], total_gt: usize) -> f64 {
    if total_gt == 0 {
        return 1.0;
    }
    let tp = detections.iter().filter(|d| d.true_positive).count();
    tp as f64 / total_gt as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoReport {
    pub name: String,
    pub iou_threshold: f64,
    /// Largest number of GT boxes in any one chunk.
    pub objects: usize,
    pub total_gt: usize,
    pub ap: f64,
    pub ar: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub per_video: Vec<VideoReport>,
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "mAR")]
    pub mar: f64,
    /// Videos without any GT frames; left out of the means.
    pub excluded: Vec<String>,
    pub warnings: Vec<String>,
}

/// Scores one video. Proposal chunks with no GT frame are skipped and listed
/// in `warnings`; GT frames with no proposals count all their boxes as misses.
pub fn evaluate_video(
    gt: &GroundTruthSet,
    proposals: &[ProposalSet],
    cfg: &EvalConfig,
    warnings: &mut Vec<String>,
) -> VideoReport {
    let frames: BTreeMap<u64, &[BBox]> = gt.frames.iter().map(|f| (f.chunk_index, f.boxes.as_slice())).collect();
    let mut seen = vec![false; gt.frames.len()];
    let index_of: BTreeMap<u64, usize> = gt.frames.iter().enumerate().map(|(i, f)| (f.chunk_index, i)).collect();

    let mut detections = Vec::new();
    let mut fn_ = 0;
    let mut skipped = Vec::new();
    for set in proposals {
        let Some(boxes) = frames.get(&set.chunk_index) else {
            skipped.push(set.chunk_index);
            continue;
        };
        seen[index_of[&set.chunk_index]] = true;
        let m = match_detections(set, boxes, cfg);
        fn_ += m.false_negatives;
        detections.extend(m.flags.iter().enumerate().map(|(rank, &tp)| Detection {
            score: set.proposals[rank].score,
            chunk_index: set.chunk_index,
            rank,
            true_positive: tp,
        }));
    }
    for (f, s) in gt.frames.iter().zip(&seen) {
        if !s {
            fn_ += f.boxes.len();
        }
    }
    if !skipped.is_empty() {
        let list: Vec<String> = skipped.iter().map(u64::to_string).collect();
        warnings.push(format!(
            "{}: skipped {} proposal chunk(s) with no ground truth: {}",
            gt.video_name,
            skipped.len(),
            list.join(", ")
        ));
    }

    let total_gt = gt.total_boxes();
    let tp = detections.iter().filter(|d| d.true_positive).count();
    VideoReport {
        name: gt.video_name.clone(),
        iou_threshold: cfg.iou_threshold,
        objects: gt.frames.iter().map(|f| f.boxes.len()).max().unwrap_or(0),
        total_gt,
        ap: average_precision(&detections, total_gt),
        ar: average_recall(&detections, total_gt),
        tp,
        fp: detections.len() - tp,
        fn_,
    }
}

/// Per-video scores plus unweighted means.
pub fn evaluate(videos: &[(GroundTruthSet, Vec<ProposalSet>)], cfg: &EvalConfig) -> EvalReport {
    let mut warnings = Vec::new();
    let mut excluded = Vec::new();
    let mut per_video = Vec::new();
    for (gt, proposals) in videos {
        if gt.frames.is_empty() {
            excluded.push(gt.video_name.clone());
            warnings.push(format!(
                "{}: no ground-truth frames; excluded from means",
                gt.video_name
            ));
            continue;
        }
        per_video.push(evaluate_video(gt, proposals, cfg, &mut warnings));
    }
    let mean = |f: fn(&VideoReport) -> f64| {
        if per_video.is_empty() {
            0.0
        } else {
            per_video.iter().map(f).sum::<f64>() / per_video.len() as f64
        }
    };
    EvalReport {
        iou_threshold: cfg.iou_threshold,
        map: mean(|v| v.ap),
        mar: mean(|v| v.ar),
        per_video,
        excluded,
        warnings,
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table; AR and AP in percent.
    pub fn to_table(&self) -> String {
        let name_w = self
            .per_video
            .iter()
            .map(|v| v.name.len())
            .chain(["video".len(), "mAP".len()])
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>5}  {:>8}  {:>7}  {:>7}",
            "video", "IoU", "#objects", "AR", "AP"
        );
        for v in &self.per_video {
            let _ = writeln!(
                out,
                "{:<name_w$}  {:>5.2}  {:>8}  {:>7.2}  {:>7.2}",
                v.name,
                v.iou_threshold,
                v.objects,
                v.ar * 100.0,
                v.ap * 100.0
            );
        }
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>5.2}  {:>8}  {:>7.2}  {:>7.2}",
            "mAP",
            self.iou_threshold,
            "",
            self.mar * 100.0,
            self.map * 100.0
        );
        out
    }
}
