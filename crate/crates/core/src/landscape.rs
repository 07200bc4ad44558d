//! Solution-landscape construction: breadth-first perturbed searches from
//! every known stationary point towards other Morse indices, deduplicated
//! by a symmetry-aware fingerprint.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::Direction;
use crate::energy::{Energy, EnergyModel, ModelSpec, Symmetry};
use crate::error::{Error, Result};
use crate::saddle::{
    classify, run_saddle_search, AlphaSchedule, SaddleConfig, SearchStatus, StationaryPoint,
};

/// Integer grid key of a stationary point.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fingerprint(pub Vec<i64>);

impl Fingerprint {
    /// Keys agree to within one grid cell in every component, which absorbs
    /// values sitting on a rounding boundary.
    pub fn matches(&self, other: &Fingerprint) -> bool {
        self.0.len() == other.0.len()
            && self.0.iter().zip(&other.0).all(|(a, b)| (a - b).abs() <= 1)
    }
}

fn grid(v: f64, tol: f64) -> i64 {
    (v / tol).round() as i64
}

/// Canonical key of `x`: rounded coordinates, or for planar clusters the
/// sorted pair distances followed by the energy.
pub fn fingerprint(model: &dyn Energy, x: &DVector<f64>, energy: f64, tol: f64) -> Fingerprint {
    match model.symmetry() {
        Symmetry::None => Fingerprint(x.iter().map(|&v| grid(v, tol)).collect()),
        Symmetry::PlanarCluster => {
            let p = x.len() / 2;
            let mut d = Vec::with_capacity(p * (p.saturating_sub(1)) / 2);
            for i in 0..p {
                for j in (i + 1)..p {
                    d.push((x[2 * i] - x[2 * j]).hypot(x[2 * i + 1] - x[2 * j + 1]));
                }
            }
            d.sort_by(f64::total_cmp);
            let mut key: Vec<i64> = d.into_iter().map(|v| grid(v, tol)).collect();
            key.push(grid(energy, tol));
            Fingerprint(key)
        }
    }
}

/// Indices of the eigenvectors that are not zero modes.
pub fn nonzero_modes(point: &StationaryPoint) -> Vec<usize> {
    (0..point.eigenvalues.len())
        .filter(|&i| point.eigenvalues[i].abs() > point.zero_threshold)
        .collect()
}

/// `x + sign delta w` for the `direction_index`-th non-zero eigenvector `w`.
pub fn perturb(point: &StationaryPoint, direction_index: usize, sign: Direction, delta: f64) -> Result<DVector<f64>> {
    let modes = nonzero_modes(point);
    let &col = modes.get(direction_index).ok_or_else(|| {
        Error::invalid(format!(
            "direction index {direction_index} out of range ({} non-zero modes)",
            modes.len()
        ))
    })?;
    if !(delta >= 0.0) {
        return Err(Error::invalid("perturbation size must be non-negative"));
    }
    let w = point.eigenvectors.column(col);
    Ok(&point.x + w * (sign.sign() * delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexStrategy {
    Adjacent,
    AllPairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbDirections {
    /// First `count` non-zero Hessian eigenvectors (all when `None`), each
    /// with both signs.
    Eigenvectors { count: Option<usize> },
    /// `count` seeded random unit directions orthogonal to the zero modes,
    /// each with both signs.
    Random { count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandscapeConfig {
    pub strategy: IndexStrategy,
    pub delta: f64,
    pub directions: PerturbDirections,
    pub attempt_cap: usize,
    pub dedup_tol: f64,
    /// Template for every search; `k`, `direction` and `fingerprint_tol`
    /// are overwritten per search.
    pub saddle: SaddleConfig,
    pub seed: u64,
    /// Worker threads; 1 runs serially.
    pub jobs: usize,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        LandscapeConfig {
            strategy: IndexStrategy::Adjacent,
            delta: 1e-2,
            directions: PerturbDirections::Eigenvectors { count: None },
            attempt_cap: 1000,
            dedup_tol: 1e-4,
            saddle: SaddleConfig::default(),
            seed: 0,
            jobs: 1,
        }
    }
}

impl LandscapeConfig {
    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::invalid("perturbation size must be positive"));
        }
        if self.attempt_cap == 0 {
            return Err(Error::invalid("attempt cap must be at least 1"));
        }
        if !(self.dedup_tol > 0.0) {
            return Err(Error::invalid("dedup tolerance must be positive"));
        }
        if self.jobs == 0 {
            return Err(Error::invalid("jobs must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub id: String,
    pub point: StationaryPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeProvenance {
    pub requested_k: usize,
    pub direction_index: usize,
    pub sign: i32,
    pub iterations: usize,
    pub status: SearchStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub direction: Direction,
    /// Index actually reached.
    pub k: usize,
    pub provenance: EdgeProvenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGraph {
    pub model: ModelSpec,
    pub seed: u64,
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    pub truncated: bool,
    pub attempts: usize,
}

impl LandscapeGraph {
    pub fn empty(model: ModelSpec, seed: u64) -> Self {
        LandscapeGraph {
            model,
            seed,
            vertices: Vec::new(),
            edges: Vec::new(),
            truncated: false,
            attempts: 0,
        }
    }

    pub fn find(&self, key: &Fingerprint) -> Option<usize> {
        self.vertices.iter().position(|v| v.point.fingerprint.matches(key))
    }

    /// Morse index of every vertex, in vertex order.
    pub fn indices(&self) -> Vec<usize> {
        self.vertices.iter().map(|v| v.point.index).collect()
    }

    /// Connectivity of the underlying undirected graph.
    pub fn is_connected(&self) -> bool {
        let n = self.vertices.len();
        if n <= 1 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for e in &self.edges {
                let next = if e.from == u {
                    e.to
                } else if e.to == u {
                    e.from
                } else {
                    continue;
                };
                if !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// A random starting configuration. Cluster particles are dropped one at a
/// time at distance 0.8 to 1.2 from a random earlier particle and at least
/// 0.7 from all of them; other models draw uniformly from `[-1.5, 1.5]^n`.
pub fn random_start(model: &dyn Energy, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.dim();
    match model.symmetry() {
        Symmetry::None => DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5)),
        Symmetry::PlanarCluster => {
            let p = n / 2;
            let mut pts: Vec<(f64, f64)> = vec![(0.0, 0.0)];
            while pts.len() < p {
                let anchor = pts[rng.random_range(0..pts.len())];
                let r = rng.random_range(0.8..1.2);
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let c = (anchor.0 + r * theta.cos(), anchor.1 + r * theta.sin());
                if pts.iter().all(|q| (q.0 - c.0).hypot(q.1 - c.1) > 0.7) {
                    pts.push(c);
                }
            }
            DVector::from_iterator(n, pts.into_iter().flat_map(|(a, b)| [a, b]))
        }
    }
}

/// Classifies `x` if it is already stationary, otherwise runs a descent to
/// the nearest stationary point.
pub fn polish_seed(model: &dyn Energy, x: &DVector<f64>, config: &LandscapeConfig) -> Result<StationaryPoint> {
    let tol = config.saddle.grad_tol;
    if model.gradient(x)?.norm() < tol {
        return classify(model, x, config.saddle.zero_threshold, config.dedup_tol);
    }
    let descent = SaddleConfig {
        k: 0,
        direction: Direction::Down,
        alpha: AlphaSchedule::pinned(1.0),
        fingerprint_tol: config.dedup_tol,
        ..config.saddle
    };
    let r = run_saddle_search(model, x, &descent)?;
    r.point.ok_or_else(|| {
        Error::invalid(format!(
            "seed point did not reach a stationary point ({:?} after {} iterations)",
            r.status, r.iterations
        ))
    })
}

struct WorkItem {
    vertex: usize,
    k: usize,
    direction: Direction,
    direction_index: usize,
    sign: Direction,
    x0: DVector<f64>,
}

fn targets(index: usize, max_index: usize, strategy: IndexStrategy) -> Vec<usize> {
    match strategy {
        IndexStrategy::Adjacent => {
            let mut t = Vec::new();
            if index >= 1 {
                t.push(index - 1);
            }
            if index < max_index {
                t.push(index + 1);
            }
            t
        }
        IndexStrategy::AllPairs => (0..=max_index).filter(|&k| k != index).collect(),
    }
}

fn direction_seed(seed: u64, vertex: usize, k: usize) -> u64 {
    seed ^ ((vertex as u64) << 32).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (k as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

fn enqueue(
    queue: &mut VecDeque<WorkItem>,
    model: &dyn Energy,
    vertex: usize,
    point: &StationaryPoint,
    config: &LandscapeConfig,
) -> Result<()> {
    let max_index = model.dim().saturating_sub(model.symmetry().zero_modes());
    let modes = nonzero_modes(point);
    for k in targets(point.index, max_index, config.strategy) {
        let direction = if k > point.index { Direction::Up } else { Direction::Down };
        let dirs: Vec<DVector<f64>> = match config.directions {
            PerturbDirections::Eigenvectors { count } => {
                let m = count.map_or(modes.len(), |c| c.min(modes.len()));
                (0..m).map(|j| point.eigenvectors.column(modes[j]).into_owned()).collect()
            }
            PerturbDirections::Random { count } => {
                let mut rng = ChaCha8Rng::seed_from_u64(direction_seed(config.seed, vertex, k));
                let null = model.symmetry().zero_mode_basis(&point.x);
                (0..count)
                    .map(|_| {
                        let mut w = DVector::from_fn(point.x.len(), |_, _| rng.random_range(-1.0..1.0));
                        w -= &null * (null.transpose() * &w);
                        w.normalize()
                    })
                    .collect()
            }
        };
        for (j, w) in dirs.into_iter().enumerate() {
            for sign in [Direction::Up, Direction::Down] {
                queue.push_back(WorkItem {
                    vertex,
                    k,
                    direction,
                    direction_index: j,
                    sign,
                    x0: &point.x + &w * (sign.sign() * config.delta),
                });
            }
        }
    }
    Ok(())
}

/// Breadth-first landscape construction from `seed_point`.
///
/// Points whose zero-eigenvalue count exceeds the symmetry's zero modes are
/// degenerate (dissociated clusters, flat directions) and are not recorded.
/// An edge is recorded only when the reached index lies on the searched
/// side of the source index.
pub fn build_landscape(model: &EnergyModel, seed_point: &DVector<f64>, config: &LandscapeConfig) -> Result<LandscapeGraph> {
    config.validate()?;
    model.check_dim(seed_point)?;
    let mut graph = LandscapeGraph::empty(model.spec(), config.seed);
    let seed = polish_seed(model, seed_point, config)?;
    let zero_modes = model.symmetry().zero_modes();

    let mut queue = VecDeque::new();
    enqueue(&mut queue, model, 0, &seed, config)?;
    graph.vertices.push(Vertex {
        id: "v0".into(),
        point: seed,
    });

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;

    while !queue.is_empty() {
        let budget = config.attempt_cap - graph.attempts;
        if budget == 0 {
            graph.truncated = true;
            break;
        }
        let batch: Vec<WorkItem> = queue.drain(..budget.min(queue.len())).collect();
        let run = |item: &WorkItem| {
            let cfg = SaddleConfig {
                k: item.k,
                direction: item.direction,
                fingerprint_tol: config.dedup_tol,
                ..config.saddle
            };
            run_saddle_search(model, &item.x0, &cfg)
        };
        let results: Vec<_> = if config.jobs > 1 {
            pool.install(|| batch.par_iter().map(run).collect())
        } else {
            batch.iter().map(run).collect()
        };

        for (item, result) in batch.iter().zip(results) {
            graph.attempts += 1;
            let result = match result {
                Ok(r) => r,
                Err(Error::NumericOverflow(_) | Error::NumericDomain(_) | Error::ConvergenceFailure { .. }) => continue,
                Err(e) => return Err(e),
            };
            let Some(point) = result.point else { continue };
            if point.zero_count != zero_modes {
                continue;
            }
            let to = match graph.find(&point.fingerprint) {
                Some(i) => i,
                None => {
                    let i = graph.vertices.len();
                    enqueue(&mut queue, model, i, &point, config)?;
                    graph.vertices.push(Vertex {
                        id: format!("v{i}"),
                        point,
                    });
                    i
                }
            };
            let from = item.vertex;
            let (li, lj) = (graph.vertices[from].point.index, graph.vertices[to].point.index);
            let consistent = match item.direction {
                Direction::Up => lj > li,
                Direction::Down => lj < li,
            };
            let duplicate = graph
                .edges
                .iter()
                .any(|e| e.from == from && e.to == to && e.direction == item.direction);
            if consistent && !duplicate {
                graph.edges.push(Edge {
                    from,
                    to,
                    direction: item.direction,
                    k: lj,
                    provenance: EdgeProvenance {
                        requested_k: item.k,
                        direction_index: item.direction_index,
                        sign: item.sign.as_int(),
                        iterations: result.iterations,
                        status: result.status,
                    },
                });
            }
        }
    }
    Ok(graph)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphFormat {
    Json,
    Dot,
}

#[derive(Serialize)]
struct JsonVertex<'a> {
    id: &'a str,
    x: Vec<f64>,
    energy: f64,
    index: usize,
    zero_count: usize,
    eigenvalues: &'a [f64],
}

#[derive(Serialize)]
struct JsonEdge<'a> {
    from: &'a str,
    to: &'a str,
    s: i32,
    k: usize,
    provenance: &'a EdgeProvenance,
}

#[derive(Serialize)]
struct JsonGraph<'a> {
    model: &'a ModelSpec,
    seed: u64,
    vertices: Vec<JsonVertex<'a>>,
    edges: Vec<JsonEdge<'a>>,
    truncated: bool,
}

pub fn export_graph(graph: &LandscapeGraph, format: GraphFormat) -> String {
    match format {
        GraphFormat::Json => {
            let doc = JsonGraph {
                model: &graph.model,
                seed: graph.seed,
                vertices: graph
                    .vertices
                    .iter()
                    .map(|v| JsonVertex {
                        id: &v.id,
                        x: v.point.x.iter().copied().collect(),
                        energy: v.point.energy,
                        index: v.point.index,
                        zero_count: v.point.zero_count,
                        eigenvalues: &v.point.eigenvalues,
                    })
                    .collect(),
                edges: graph
                    .edges
                    .iter()
                    .map(|e| JsonEdge {
                        from: &graph.vertices[e.from].id,
                        to: &graph.vertices[e.to].id,
                        s: e.direction.as_int(),
                        k: e.k,
                        provenance: &e.provenance,
                    })
                    .collect(),
                truncated: graph.truncated,
            };
            let mut s = serde_json::to_string_pretty(&doc).expect("graph serializes");
            s.push('\n');
            s
        }
        GraphFormat::Dot => export_dot(graph),
    }
}

fn export_dot(graph: &LandscapeGraph) -> String {
    let mut out = String::from("digraph landscape {\n  rankdir=TB;\n  node [shape=box];\n");
    let mut levels: Vec<usize> = graph.indices();
    levels.sort_unstable();
    levels.dedup();
    levels.reverse();
    for &level in &levels {
        let _ = write!(out, "  {{ rank=same;");
        for v in graph.vertices.iter().filter(|v| v.point.index == level) {
            let _ = write!(out, " {} [label=\"idx={} E={:.6}\"];", v.id, v.point.index, v.point.energy);
        }
        out.push_str(" }\n");
    }
    // Invisible chain pins the levels top to bottom by decreasing index.
    for pair in levels.windows(2) {
        let top = graph.vertices.iter().find(|v| v.point.index == pair[0]).unwrap();
        let below = graph.vertices.iter().find(|v| v.point.index == pair[1]).unwrap();
        let _ = writeln!(out, "  {} -> {} [style=invis];", top.id, below.id);
    }
    for e in &graph.edges {
        let _ = writeln!(
            out,
            "  {} -> {} [constraint=false];",
            graph.vertices[e.from].id, graph.vertices[e.to].id
        );
    }
    out.push_str("}\n");
    out
}

/// Rank levels of a DOT document: index to number of node statements.
pub fn dot_levels(dot: &str) -> Vec<(usize, usize)> {
    let mut levels = Vec::new();
    for line in dot.lines().filter(|l| l.trim_start().starts_with("{ rank=same;")) {
        let count = line.matches("[label=").count();
        if let Some(pos) = line.find("idx=") {
            let digits: String = line[pos + 4..].chars().take_while(|c| c.is_ascii_digit()).collect();
            if let Ok(index) = digits.parse() {
                levels.push((index, count));
            }
        }
    }
    levels
}
