//! Per-stage latency of the proposal pipeline against a per-chunk budget.

use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cluster::{dbscan, extract_clusters, proposals_from_clusters, Pipeline, ProposalSet};
use crate::error::{Error, Result};
use crate::event::{Event, EventChunk, Polarity, SensorGeometry};
use crate::raster::{binarize, build_frame, erode_passes};

/// One frame period at 15 fps.
pub const DEFAULT_BUDGET_US: u64 = 66_667;

pub const STAGES: [&str; 5] = ["build_frame", "binarize", "erode", "dbscan", "extract_bbox"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyStats {
    pub name: String,
    pub samples: usize,
    pub median_us: f64,
    pub mean_us: f64,
    pub p95_us: f64,
    pub max_us: f64,
}

impl LatencyStats {
    /// Nearest-rank p95; median averages the middle pair for even counts.
    pub fn from_samples(name: &str, samples: &[f64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let (median, mean, p95, max) = if n == 0 {
            (0.0, 0.0, 0.0, 0.0)
        } else {
            let median = if n % 2 == 1 {
                s[n / 2]
            } else {
                (s[n / 2 - 1] + s[n / 2]) / 2.0
            };
            let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
            (median, s.iter().sum::<f64>() / n as f64, s[rank - 1], s[n - 1])
        };
        LatencyStats {
            name: name.to_string(),
            samples: n,
            median_us: median,
            mean_us: mean,
            p95_us: p95,
            max_us: max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub chunks: usize,
    pub repetitions: usize,
    pub per_stage: Vec<LatencyStats>,
    pub per_chunk_total: LatencyStats,
    pub events_per_second: f64,
    pub budget_us: u64,
    /// Median per-chunk total within budget.
    pub pass: bool,
    pub checksum: u64,
    /// Instrumented runs reproduced the plain pipeline's output exactly.
    pub checksum_match: bool,
}

/// Order-sensitive digest of a proposal stream.
pub fn checksum(sets: &[ProposalSet]) -> u64 {
    let mut h = DefaultHasher::new();
    for s in sets {
        s.to_json_line().hash(&mut h);
    }
    h.finish()
}

fn micros(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e6
}

/// Runs the pipeline stage by stage, recording each stage's wall time.
fn run_instrumented(pipeline: &Pipeline, chunk: &EventChunk, times: &mut [f64; 5]) -> Result<ProposalSet> {
    let t = Instant::now();
    let frame = build_frame(chunk, pipeline.geometry)?;
    times[0] = micros(t);

    let t = Instant::now();
    let bits = binarize(&frame);
    times[1] = micros(t);

    let t = Instant::now();
    let eroded = erode_passes(&bits, &pipeline.element, pipeline.erosion_passes);
    times[2] = micros(t);

    let t = Instant::now();
    let points = eroded.set_points();
    let labels = dbscan(&points, &pipeline.dbscan);
    times[3] = micros(t);

    let t = Instant::now();
    let clusters = extract_clusters(&labels, &points, &pipeline.dbscan);
    let set = proposals_from_clusters(chunk, &clusters, &pipeline.dbscan);
    times[4] = micros(t);
    Ok(set)
}

/// Times every chunk `repetitions` times; the first pass is warm-up and is
/// not counted.
pub fn run_bench(
    chunks: &[EventChunk],
    pipeline: &Pipeline,
    budget_us: u64,
    repetitions: usize,
) -> Result<BenchReport> {
    if chunks.is_empty() {
        return Err(Error::Config("bench needs at least one chunk".into()));
    }
    if repetitions < 4 {
        return Err(Error::Config(format!(
            "repetitions must be at least 4 (one warm-up plus three measured), got {repetitions}"
        )));
    }

    let reference: Vec<ProposalSet> = chunks.iter().map(|c| pipeline.run(c)).collect::<Result<_>>()?;
    let expected = checksum(&reference);

    let mut stage_samples: Vec<Vec<f64>> = vec![Vec::new(); STAGES.len()];
    let mut totals = Vec::new();
    let mut all_match = true;
    let mut measured_us = 0.0;
    let events: usize = chunks.iter().map(|c| c.events.len()).sum();

    for rep in 0..repetitions {
        let mut outputs = Vec::with_capacity(chunks.len());
        for chunk in chunks {
            let mut times = [0.0; 5];
            let t = Instant::now();
            outputs.push(run_instrumented(pipeline, chunk, &mut times)?);
            let total = micros(t);
            if rep > 0 {
                for (samples, v) in stage_samples.iter_mut().zip(times) {
                    samples.push(v);
                }
                totals.push(total);
                measured_us += total;
            }
        }
        all_match &= checksum(&outputs) == expected;
    }

    let per_chunk_total = LatencyStats::from_samples("total", &totals);
    let measured_events = events * (repetitions - 1);
    Ok(BenchReport {
        chunks: chunks.len(),
        repetitions,
        per_stage: STAGES
            .iter()
            .zip(&stage_samples)
            .map(|(name, s)| LatencyStats::from_samples(name, s))
            .collect(),
        pass: per_chunk_total.median_us <= budget_us as f64,
        per_chunk_total,
        events_per_second: if measured_us > 0.0 {
            measured_events as f64 / (measured_us / 1e6)
        } else {
            0.0
        },
        budget_us,
        checksum: expected,
        checksum_match: all_match,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputReport {
    pub workers: usize,
    pub chunks: usize,
    pub wall_us: f64,
    pub chunks_per_second: f64,
    pub events_per_second: f64,
}

/// Aggregate throughput with chunks spread over `workers` threads.
pub fn parallel_throughput(chunks: &[EventChunk], pipeline: &Pipeline, workers: usize) -> Result<ThroughputReport> {
    if chunks.is_empty() {
        return Err(Error::Config("bench needs at least one chunk".into()));
    }
    let workers = workers.clamp(1, chunks.len());
    let per = chunks.len().div_ceil(workers);
    let start = Instant::now();
    std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .chunks(per)
            .map(|part| scope.spawn(move || part.iter().try_for_each(|c| pipeline.run(c).map(drop))))
            .collect();
        handles
            .into_iter()
            .try_for_each(|h| h.join().expect("bench worker panicked"))
    })?;
    let wall = start.elapsed().as_secs_f64();
    let events: usize = chunks.iter().map(|c| c.events.len()).sum();
    Ok(ThroughputReport {
        workers,
        chunks: chunks.len(),
        wall_us: wall * 1e6,
        chunks_per_second: chunks.len() as f64 / wall,
        events_per_second: events as f64 / wall,
    })
}

/// Chunks of `events_per_chunk` events: a few dense rectangular blobs over a
/// uniform noise floor, in time order.
pub fn synthetic_chunks(
    geometry: SensorGeometry,
    n_chunks: usize,
    events_per_chunk: usize,
    seed: u64,
) -> Vec<EventChunk> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (geometry.width as u32, geometry.height as u32);
    let span_us = 333_333u64;
    (0..n_chunks)
        .map(|k| {
            let blobs: Vec<(u32, u32, u32, u32)> = (0..rng.gen_range(1..=4))
                .map(|_| {
                    let bw = rng.gen_range(20..=(w / 4).max(21)).min(w);
                    let bh = rng.gen_range(20..=(h / 4).max(21)).min(h);
                    (rng.gen_range(0..=w - bw), rng.gen_range(0..=h - bh), bw, bh)
                })
                .collect();
            let t0 = k as u64 * span_us;
            let mut events: Vec<Event> = (0..events_per_chunk)
                .map(|_| {
                    let (x, y) = if rng.gen_bool(0.8) {
                        let (bx, by, bw, bh) = blobs[rng.gen_range(0..blobs.len())];
                        (bx + rng.gen_range(0..bw), by + rng.gen_range(0..bh))
                    } else {
                        (rng.gen_range(0..w), rng.gen_range(0..h))
                    };
                    let p = if rng.gen_bool(0.5) { Polarity::On } else { Polarity::Off };
                    Event::new(t0 + rng.gen_range(0..span_us), x as u16, y as u16, p)
                })
                .collect();
            events.sort_by_key(|e| e.t);
            EventChunk {
                chunk_index: k as u64,
                t_start: t0,
                t_end: t0 + span_us - 1,
                events,
            }
        })
        .collect()
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bench report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<13} {:>7} {:>12} {:>12} {:>12} {:>12}",
            "stage", "samples", "median_us", "mean_us", "p95_us", "max_us"
        );
        for s in self.per_stage.iter().chain(std::iter::once(&self.per_chunk_total)) {
            let _ = writeln!(
                out,
                "{:<13} {:>7} {:>12.1} {:>12.1} {:>12.1} {:>12.1}",
                s.name, s.samples, s.median_us, s.mean_us, s.p95_us, s.max_us
            );
        }
        let _ = writeln!(out, "events/s: {:.0}", self.events_per_second);
        let _ = writeln!(
            out,
            "budget: {} us, median total {:.1} us -> {}",
            self.budget_us,
            self.per_chunk_total.median_us,
            if self.pass { "PASS" } else { "FAIL" }
        );
        let _ = writeln!(
            out,
            "checksum: {:016x} ({})",
            self.checksum,
            if self.checksum_match {
                "instrumented output identical"
            } else {
                "MISMATCH"
            }
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::DbscanConfig;
    use crate::raster::StructuringElement;

    fn pipeline() -> Pipeline {
        Pipeline::new(
            SensorGeometry::default(),
            StructuringElement::default(),
            1,
            DbscanConfig::default(),
        )
    }

    #[test]
    fn stats_by_hand() {
        let s = LatencyStats::from_samples("x", &[5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!((s.median_us, s.mean_us, s.p95_us, s.max_us), (3.0, 3.0, 5.0, 5.0));
        let s = LatencyStats::from_samples("x", &[4.0, 1.0, 2.0, 3.0]);
        assert_eq!(s.median_us, 2.5);
        let twenty: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(LatencyStats::from_samples("x", &twenty).p95_us, 19.0);
    }

    #[test]
    fn rejects_empty_stream_and_too_few_reps() {
        assert!(run_bench(&[], &pipeline(), DEFAULT_BUDGET_US, 5).is_err());
        let chunks = vec![EventChunk::empty(0)];
        assert!(run_bench(&chunks, &pipeline(), DEFAULT_BUDGET_US, 3).is_err());
    }

    #[test]
    fn report_is_consistent() {
        let chunks = synthetic_chunks(SensorGeometry::default(), 3, 5_000, 1);
        let r = run_bench(&chunks, &pipeline(), DEFAULT_BUDGET_US, 4).unwrap();
        assert!(r.checksum_match);
        assert_eq!(r.per_chunk_total.samples, 9);
        assert_eq!(r.per_stage.len(), 5);
        for s in r.per_stage.iter().chain([&r.per_chunk_total]) {
            assert!(s.p95_us >= s.median_us && s.median_us >= 0.0 && s.max_us >= s.p95_us);
        }
        assert_eq!(r.pass, r.per_chunk_total.median_us <= r.budget_us as f64);
        let strict = run_bench(&chunks, &pipeline(), 0, 4).unwrap();
        assert!(!strict.pass);
        assert!(r.to_table().contains("extract_bbox"));
    }

    #[test]
    fn empty_chunks_are_still_timed() {
        let chunks: Vec<EventChunk> = (0..2).map(EventChunk::empty).collect();
        let r = run_bench(&chunks, &pipeline(), DEFAULT_BUDGET_US, 4).unwrap();
        assert_eq!(r.per_chunk_total.samples, 6);
        assert_eq!(r.events_per_second, 0.0);
    }

    #[test]
    fn synthetic_chunks_are_valid() {
        let g = SensorGeometry::default();
        let chunks = synthetic_chunks(g, 2, 1000, 9);
        assert_eq!(chunks, synthetic_chunks(g, 2, 1000, 9));
        for c in &chunks {
            assert_eq!(c.events.len(), 1000);
            assert!(c.events.windows(2).all(|w| w[0].t <= w[1].t));
            assert!(c
                .events
                .iter()
                .all(|e| g.check(e).is_ok() && e.t >= c.t_start && e.t <= c.t_end));
        }
    }

    #[test]
    fn parallel_throughput_covers_all_chunks() {
        let chunks = synthetic_chunks(SensorGeometry::default(), 5, 2000, 3);
        let r = parallel_throughput(&chunks, &pipeline(), 3).unwrap();
        assert_eq!((r.workers, r.chunks), (3, 5));
        assert!(r.events_per_second > 0.0);
    }
}
