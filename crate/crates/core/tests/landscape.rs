use std::collections::BTreeMap;

use nalgebra::DVector;

use ihisd_core::energy::{dense_hessian, Energy, EnergyModel, ModelSpec, MorseCluster};
use ihisd_core::landscape::{
    build_landscape, dot_levels, export_graph, random_start, GraphFormat, IndexStrategy, LandscapeConfig,
    LandscapeGraph,
};
use ihisd_core::saddle::SaddleConfig;
use ihisd_core::Direction;

fn morse(a: f64) -> EnergyModel {
    EnergyModel::Morse(MorseCluster::new(4, a).unwrap())
}

fn run(model: &EnergyModel, start: &DVector<f64>, tweak: impl FnOnce(&mut LandscapeConfig)) -> LandscapeGraph {
    let mut config = LandscapeConfig {
        saddle: SaddleConfig::for_model(model),
        seed: 1,
        ..LandscapeConfig::default()
    };
    tweak(&mut config);
    build_landscape(model, start, &config).unwrap()
}

fn fingerprints(g: &LandscapeGraph) -> Vec<Vec<i64>> {
    let mut out: Vec<Vec<i64>> = g.vertices.iter().map(|v| v.point.fingerprint.0.clone()).collect();
    out.sort();
    out
}

fn same_vertex_set(a: &LandscapeGraph, b: &LandscapeGraph) -> bool {
    a.vertices.len() == b.vertices.len()
        && a.vertices
            .iter()
            .all(|v| b.vertices.iter().any(|w| w.point.fingerprint.matches(&v.point.fingerprint)))
}

#[test]
fn single_well_has_one_vertex() {
    let q = ModelSpec::parse("quadratic", &["spectrum=1,2,3"]).unwrap().build().unwrap();
    let g = run(&q, &DVector::from_column_slice(&[0.4, -0.2, 0.1]), |_| {});
    assert_eq!(g.vertices.len(), 1);
    assert!(g.edges.is_empty());
    assert_eq!(g.indices(), vec![0]);
    assert!(!g.truncated);
}

#[test]
fn morse_low_rigidity_census() {
    let model = morse(1.5);
    let g = run(&model, &random_start(&model, 1), |_| {});
    let mut idx = g.indices();
    idx.sort_unstable();
    assert_eq!(idx, vec![0, 1, 2, 2]);
    assert!(g.is_connected());
    assert!(!g.truncated);

    let mut levels = dot_levels(&export_graph(&g, GraphFormat::Dot));
    levels.sort_unstable();
    assert_eq!(levels, vec![(0, 1), (1, 1), (2, 2)]);

    for v in &g.vertices {
        assert!(model.gradient(&v.point.x).unwrap().norm() < 1e-6);
        let fresh = dense_hessian(&model, &v.point.x).unwrap().symmetric_eigen();
        let count = fresh.eigenvalues.iter().filter(|&&l| l < -v.point.zero_threshold).count();
        assert_eq!(count, v.point.index);
        assert_eq!(v.point.zero_count, 3);
    }
    for e in &g.edges {
        let (from, to) = (g.vertices[e.from].point.index, g.vertices[e.to].point.index);
        match e.direction {
            Direction::Up => assert!(to > from, "{e:?}"),
            Direction::Down => assert!(to < from, "{e:?}"),
        }
    }
}

#[test]
fn serial_runs_are_deterministic() {
    let model = morse(1.5);
    let start = random_start(&model, 3);
    let a = run(&model, &start, |_| {});
    let b = run(&model, &start, |_| {});
    assert_eq!(fingerprints(&a), fingerprints(&b));
    assert_eq!(export_graph(&a, GraphFormat::Json), export_graph(&b, GraphFormat::Json));
    assert_eq!(export_graph(&a, GraphFormat::Dot), export_graph(&b, GraphFormat::Dot));
}

#[test]
fn parallel_and_serial_agree() {
    let model = morse(1.5);
    let start = random_start(&model, 1);
    let serial = run(&model, &start, |_| {});
    let parallel = run(&model, &start, |c| c.jobs = 4);
    assert!(same_vertex_set(&serial, &parallel));
}

#[test]
fn adjacent_strategy_finds_the_all_pairs_vertex_set() {
    let model = morse(1.5);
    let start = random_start(&model, 1);
    let adjacent = run(&model, &start, |_| {});
    let all = run(&model, &start, |c| c.strategy = IndexStrategy::AllPairs);
    assert!(same_vertex_set(&adjacent, &all));
}

#[test]
fn attempt_cap_truncates() {
    let model = morse(1.5);
    let g = run(&model, &random_start(&model, 1), |c| c.attempt_cap = 3);
    assert!(g.truncated);
    assert!(g.attempts <= 3);
}

#[test]
fn json_export_schema() {
    let model = morse(1.5);
    let g = run(&model, &random_start(&model, 1), |_| {});
    let doc: serde_json::Value = serde_json::from_str(&export_graph(&g, GraphFormat::Json)).unwrap();
    assert_eq!(doc["model"]["id"], "morse");
    assert_eq!(doc["seed"], 1);
    assert_eq!(doc["truncated"], false);
    let vertices = doc["vertices"].as_array().unwrap();
    assert_eq!(vertices.len(), 4);
    for v in vertices {
        for key in ["id", "x", "energy", "index", "zero_count", "eigenvalues"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
    let ids: BTreeMap<&str, u64> = vertices
        .iter()
        .map(|v| (v["id"].as_str().unwrap(), v["index"].as_u64().unwrap()))
        .collect();
    for e in doc["edges"].as_array().unwrap() {
        let (from, to) = (ids[e["from"].as_str().unwrap()], ids[e["to"].as_str().unwrap()]);
        let s = e["s"].as_i64().unwrap();
        assert!(s == 1 || s == -1);
        assert_eq!(e["k"].as_u64().unwrap(), to);
        assert!((s == 1 && to > from) || (s == -1 && to < from));
    }
    // Floats survive the round trip exactly.
    let x0 = vertices[0]["x"][0].as_f64().unwrap();
    assert_eq!(x0, g.vertices[0].point.x[0]);
}
