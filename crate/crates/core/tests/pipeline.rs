use evprop_core::cluster::{parse_proposal_lines, write_proposal_lines, DbscanConfig, Pipeline, ProposalSet};
use evprop_core::eval::{evaluate, EvalConfig};
use evprop_core::ingest::{chunk_messages, parse_stream, write_binary_stream, write_csv_stream, ChunkingConfig};
use evprop_core::raster::StructuringElement;
use evprop_core::simulator::{simulate, MovingShape, SceneSpec, Simulation, Trajectory};
use evprop_core::{iou, SensorGeometry};

fn scene(shapes: Vec<MovingShape>, noise: f64) -> SceneSpec {
    SceneSpec {
        geometry: SensorGeometry::default(),
        duration_s: 2.0,
        message_rate_hz: 30.0,
        shapes,
        contrast_threshold: 0.2,
        noise_rate_hz_per_pixel: noise,
        substep_s: 0.001,
        seed: 8,
    }
}

fn one_rectangle() -> SceneSpec {
    let traj = Trajectory::Linear {
        start: [100.0, 150.0],
        velocity: [50.0, 0.0],
    };
    scene(
        vec![MovingShape::rectangle(80.0, 60.0, 0.5, traj).with_texture(1.0, 0.2)],
        0.5,
    )
}

fn propose_all(sim: &Simulation, bytes: &[u8]) -> Vec<ProposalSet> {
    let (header, messages) = parse_stream(bytes).unwrap();
    assert_eq!(header, sim.header);
    let pipeline = Pipeline::new(
        header.geometry,
        StructuringElement::default(),
        1,
        DbscanConfig::default(),
    );
    chunk_messages(&messages, &ChunkingConfig::default(), header.message_rate_hz)
        .iter()
        .map(|c| pipeline.run(c).unwrap())
        .collect()
}

#[test]
fn moving_rectangle_gives_one_box_per_chunk() {
    let sim = simulate(&one_rectangle()).unwrap();
    let sets = propose_all(&sim, &write_binary_stream(&sim.header, &sim.messages).unwrap());
    assert_eq!(sets.len(), 6);
    for (set, frame) in sets.iter().zip(&sim.ground_truth.frames) {
        assert_eq!(set.proposals.len(), 1, "chunk {}", set.chunk_index);
        assert!(iou(&set.proposals[0].bbox, &frame.boxes[0]) >= 0.75);
        assert_eq!(set.proposals[0].score, 1.0);
    }
    let report = evaluate(&[(sim.ground_truth.clone(), sets)], &EvalConfig::default());
    assert_eq!((report.map, report.mar), (1.0, 1.0));
}

#[test]
fn csv_and_binary_paths_agree() {
    let sim = simulate(&one_rectangle()).unwrap();
    let from_bin = propose_all(&sim, &write_binary_stream(&sim.header, &sim.messages).unwrap());
    let from_csv = propose_all(&sim, write_csv_stream(&sim.header, &sim.messages).unwrap().as_bytes());
    assert_eq!(from_bin, from_csv);
    let text = write_proposal_lines(&from_bin);
    assert_eq!(parse_proposal_lines(&text).unwrap(), from_bin);
}

#[test]
fn sparse_noise_alone_proposes_nothing() {
    let sim = simulate(&scene(Vec::new(), 1.0)).unwrap();
    assert!(sim.messages.iter().any(|m| !m.events.is_empty()));
    let sets = propose_all(&sim, &write_binary_stream(&sim.header, &sim.messages).unwrap());
    assert!(sets.iter().all(|s| s.proposals.is_empty()));
}

fn rect_40(x: f64, y: f64, vx: f64, vy: f64, intensity: f64) -> MovingShape {
    let traj = Trajectory::Linear {
        start: [x, y],
        velocity: [vx, vy],
    };
    MovingShape::rectangle(40.0, 40.0, intensity, traj)
}

fn counts_and_ious(spec: &SceneSpec) -> (Vec<usize>, Vec<f64>) {
    let sim = simulate(spec).unwrap();
    let sets = propose_all(&sim, &write_binary_stream(&sim.header, &sim.messages).unwrap());
    let ious = sets
        .iter()
        .zip(&sim.ground_truth.frames)
        .flat_map(|(s, f)| s.proposals.first().map(|p| iou(&p.bbox, &f.boxes[0])))
        .collect();
    (sets.iter().map(|s| s.proposals.len()).collect(), ious)
}

#[test]
fn small_rectangle_one_proposal_per_chunk() {
    for shape in [
        rect_40(100.0, 200.0, 40.0, 0.0, 0.5).with_texture(1.0, 0.2),
        rect_40(100.0, 200.0, 15.0, 10.0, 0.5),
    ] {
        let (counts, ious) = counts_and_ious(&scene(vec![shape], 0.0));
        assert_eq!(counts, [1; 6], "{shape:?}");
        assert!(ious.iter().all(|&v| v >= 0.5), "{ious:?}");
    }
}

#[test]
fn two_separated_rectangles_two_proposals_per_chunk() {
    let shapes = vec![
        rect_40(60.0, 80.0, 40.0, 0.0, 0.5).with_texture(1.0, 0.2),
        rect_40(500.0, 350.0, -40.0, 0.0, 2.0).with_texture(1.0, 0.2),
    ];
    assert_eq!(counts_and_ious(&scene(shapes, 0.0)).0, [2; 6]);
}
