//! `evprop`: simulate event streams, propose regions, evaluate, benchmark.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evprop_core::bench::{parallel_throughput, run_bench};
use evprop_core::cluster::{parse_proposal_lines, write_proposal_lines, Pipeline, ProposalSet};
use evprop_core::eval::{evaluate, EvalConfig, GroundTruthSet};
use evprop_core::ingest::{chunk_messages, parse_stream, write_binary_stream};
use evprop_core::raster::build_frame;
use evprop_core::simulator::{simulate, SceneSpec};
use evprop_core::EventChunk;
use rayon::prelude::*;

use crate::config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(String),
    BudgetMiss(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::BudgetMiss(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::BudgetMiss(m) => m,
        }
    }
}

impl From<evprop_core::Error> for CliError {
    fn from(e: evprop_core::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "evprop",
    version,
    about = "Region proposals for moving objects from event-camera streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene spec into an EVR1 event file plus ground-truth JSON.
    Simulate {
        scene: PathBuf,
        /// Ground-truth path; defaults to `<out stem>.gt.json` next to the event file.
        #[arg(long)]
        gt_out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the proposal pipeline over every chunk of an event file.
    Propose {
        input: Option<PathBuf>,
        #[arg(long)]
        dump_frames: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Score proposal files against ground truth, paired by position.
    Eval {
        proposals: Vec<PathBuf>,
        #[arg(long)]
        gt: Vec<PathBuf>,
        #[arg(long)]
        iou: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Time each pipeline stage against the per-chunk budget.
    Bench {
        input: Option<PathBuf>,
        #[arg(long)]
        budget_us: Option<u64>,
        #[arg(long)]
        reps: Option<usize>,
        /// Exit with code 3 when the budget is missed.
        #[arg(long)]
        strict: bool,
        /// Also report aggregate throughput over this many threads.
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn with_path(path: &Path) -> impl Fn(evprop_core::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

/// Applies the shared flags on top of the file configuration.
fn base_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if common.out.is_some() {
        cfg.io.out = common.out.clone();
    }
    Ok(cfg)
}

fn required(path: Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    path.ok_or_else(|| {
        CliError::Usage(format!(
            "missing {what} (pass it as an argument or in the config `io` section)"
        ))
    })
}

fn load_chunks(path: &Path, cfg: &RunConfig) -> CliResult<(Pipeline, Vec<EventChunk>)> {
    let (header, messages) = parse_stream(&read(path)?).map_err(with_path(path))?;
    let chunks = chunk_messages(&messages, &cfg.chunking, header.message_rate_hz);
    let pipeline = Pipeline::from_config(header.geometry, &cfg.erosion, cfg.dbscan)?;
    Ok((pipeline, chunks))
}

fn cmd_simulate(scene: PathBuf, gt_out: Option<PathBuf>, common: Common) -> CliResult<()> {
    let cfg = base_config(&common)?;
    let out = required(cfg.io.out.clone(), "--out")?;
    let mut spec: SceneSpec =
        serde_json::from_str(&read_text(&scene)?).map_err(|e| CliError::Input(format!("{}: {e}", scene.display())))?;
    if let Some(seed) = cfg.seed {
        spec.seed = seed;
    }
    eprintln!(
        "evprop simulate: effective scene {}",
        serde_json::to_string(&spec).expect("scene serializes")
    );

    let sim = simulate(&spec).map_err(with_path(&scene))?;
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("video");
    let gt_path = gt_out.unwrap_or_else(|| out.with_file_name(format!("{stem}.gt.json")));
    let mut gt = sim.ground_truth;
    gt.video_name = stem.to_string();

    write(&out, write_binary_stream(&sim.header, &sim.messages)?)?;
    write(&gt_path, gt.to_json())?;
    eprintln!(
        "evprop simulate: {} messages, {} events -> {}; {} gt frames -> {}",
        sim.messages.len(),
        sim.messages.iter().map(|m| m.events.len()).sum::<usize>(),
        out.display(),
        gt.frames.len(),
        gt_path.display()
    );
    Ok(())
}

fn run_chunks(pipeline: &Pipeline, chunks: &[EventChunk], workers: usize) -> CliResult<Vec<ProposalSet>> {
    if workers <= 1 {
        return Ok(chunks.iter().map(|c| pipeline.run(c)).collect::<Result<_, _>>()?);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(|| {
        chunks
            .par_iter()
            .map(|c| pipeline.run(c))
            .collect::<Result<Vec<_>, _>>()
    })?)
}

fn cmd_propose(
    input: Option<PathBuf>,
    dump_frames: Option<PathBuf>,
    workers: Option<usize>,
    common: Common,
) -> CliResult<()> {
    let mut cfg = base_config(&common)?;
    if input.is_some() {
        cfg.io.input = input;
    }
    if dump_frames.is_some() {
        cfg.io.dump_frames = dump_frames;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    cfg.echo("propose");
    if cfg.workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }

    let input = required(cfg.io.input.clone(), "input event file")?;
    let (pipeline, chunks) = load_chunks(&input, &cfg)?;
    let sets = run_chunks(&pipeline, &chunks, cfg.workers)?;

    if let Some(dir) = &cfg.io.dump_frames {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
        for chunk in &chunks {
            let frame = build_frame(chunk, pipeline.geometry)?;
            write(&dir.join(format!("chunk_{:06}.pgm", chunk.chunk_index)), frame.to_pgm())?;
        }
    }

    let lines = write_proposal_lines(&sets);
    match &cfg.io.out {
        Some(path) => write(path, lines)?,
        None => print!("{lines}"),
    }
    Ok(())
}

fn cmd_eval(proposals: Vec<PathBuf>, gt: Vec<PathBuf>, iou: Option<f64>, common: Common) -> CliResult<()> {
    let mut cfg = base_config(&common)?;
    if !proposals.is_empty() {
        cfg.io.proposals = proposals;
    }
    if !gt.is_empty() {
        cfg.io.gt = gt;
    }
    if let Some(t) = iou {
        cfg.eval =
            EvalConfig::new(t, cfg.eval.max_detections_per_chunk()).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    cfg.echo("eval");
    if cfg.io.proposals.is_empty() || cfg.io.proposals.len() != cfg.io.gt.len() {
        return Err(CliError::Usage(format!(
            "need one --gt file per proposal file, got {} proposal and {} gt files",
            cfg.io.proposals.len(),
            cfg.io.gt.len()
        )));
    }

    let videos = cfg
        .io
        .proposals
        .iter()
        .zip(&cfg.io.gt)
        .map(|(p, g)| {
            let gt = GroundTruthSet::from_json(&read_text(g)?).map_err(with_path(g))?;
            let sets = parse_proposal_lines(&read_text(p)?).map_err(with_path(p))?;
            Ok((gt, sets))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let report = evaluate(&videos, &cfg.eval);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", report.to_table());
    if let Some(path) = &cfg.io.out {
        write(path, report.to_json())?;
    }
    Ok(())
}

fn cmd_bench(
    input: Option<PathBuf>,
    budget_us: Option<u64>,
    reps: Option<usize>,
    strict: bool,
    workers: Option<usize>,
    common: Common,
) -> CliResult<()> {
    let mut cfg = base_config(&common)?;
    if input.is_some() {
        cfg.io.input = input;
    }
    if let Some(b) = budget_us {
        cfg.budget_us = b;
    }
    if let Some(r) = reps {
        cfg.repetitions = r;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    cfg.echo("bench");

    let input = required(cfg.io.input.clone(), "input event file")?;
    let (pipeline, chunks) = load_chunks(&input, &cfg)?;
    let report = run_bench(&chunks, &pipeline, cfg.budget_us, cfg.repetitions)?;
    print!("{}", report.to_table());
    if cfg.workers > 1 {
        let t = parallel_throughput(&chunks, &pipeline, cfg.workers)?;
        println!(
            "parallel: {} workers, {:.1} chunks/s, {:.0} events/s",
            t.workers, t.chunks_per_second, t.events_per_second
        );
    }
    if let Some(path) = &cfg.io.out {
        write(path, report.to_json())?;
    }
    if strict && !(report.pass && report.checksum_match) {
        return Err(CliError::BudgetMiss(format!(
            "median chunk latency {:.1} us against a budget of {} us{}",
            report.per_chunk_total.median_us,
            report.budget_us,
            if report.checksum_match {
                ""
            } else {
                "; instrumented output differs"
            }
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { scene, gt_out, common } => cmd_simulate(scene, gt_out, common),
        Command::Propose {
            input,
            dump_frames,
            workers,
            common,
        } => cmd_propose(input, dump_frames, workers, common),
        Command::Eval {
            proposals,
            gt,
            iou,
            common,
        } => cmd_eval(proposals, gt, iou, common),
        Command::Bench {
            input,
            budget_us,
            reps,
            strict,
            workers,
            common,
        } => cmd_bench(input, budget_us, reps, strict, workers, common),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
