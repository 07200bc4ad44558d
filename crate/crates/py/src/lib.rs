//! Python bindings: energy models, saddle search, landscape construction,
//! flows and the verification suites.

use std::collections::BTreeMap;

use nalgebra::DVector;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ihisd_core::dynamics::{gradient_flow, integrate_ihisd, Direction, FlowConfig, SearchState};
use ihisd_core::energy::{Energy, EnergyModel, ModelSpec};
use ihisd_core::landscape::{self, GraphFormat, IndexStrategy, LandscapeConfig, LandscapeGraph};
use ihisd_core::saddle::{self, AlphaSchedule, SaddleConfig, SearchStatus, StepPolicy};
use ihisd_core::verify;

fn err(e: ihisd_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn direction(s: &str) -> PyResult<Direction> {
    match s {
        "up" => Ok(Direction::Up),
        "down" => Ok(Direction::Down),
        _ => Err(PyValueError::new_err(format!("direction must be 'up' or 'down', got '{s}'"))),
    }
}

fn status_name(s: SearchStatus) -> &'static str {
    match s {
        SearchStatus::Converged => "converged",
        SearchStatus::MaxIter => "max_iter",
        SearchStatus::Diverged => "diverged",
        SearchStatus::WrongIndex => "wrong_index",
        SearchStatus::Stalled => "stalled",
    }
}

/// A benchmark energy: "butterfly" (c), "morse" (a, n) or "quadratic"
/// (spectrum).
#[pyclass(module = "ihisd", frozen)]
struct Model {
    inner: EnergyModel,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (energy, params=None, spectrum=None))]
    fn new(energy: &str, params: Option<BTreeMap<String, f64>>, spectrum: Option<Vec<f64>>) -> PyResult<Self> {
        let spec = ModelSpec {
            id: energy.to_string(),
            params: params.unwrap_or_default(),
            spectrum,
        };
        Ok(Model {
            inner: spec.build().map_err(err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    fn energy(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.energy(&DVector::from_vec(x)).map_err(err)
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.gradient(&DVector::from_vec(x)).map_err(err)?.as_slice().to_vec())
    }

    /// Dense Hessian as a list of rows.
    fn hessian(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let h = ihisd_core::energy::dense_hessian(&self.inner, &DVector::from_vec(x)).map_err(err)?;
        Ok(h.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    fn __repr__(&self) -> String {
        format!("Model({})", self.inner)
    }
}

#[pyclass(module = "ihisd", frozen, get_all)]
struct SearchResult {
    status: &'static str,
    iterations: usize,
    x: Vec<f64>,
    energy: Option<f64>,
    grad_norm: Option<f64>,
    index: Option<usize>,
    zero_count: Option<usize>,
    eigenvalues: Option<Vec<f64>>,
    final_alpha: f64,
}

#[pymethods]
impl SearchResult {
    #[getter]
    fn converged(&self) -> bool {
        self.status == "converged"
    }

    fn __repr__(&self) -> String {
        format!("SearchResult(status={}, iterations={}, x={:?})", self.status, self.iterations, self.x)
    }
}

/// Discrete crossover search for a saddle of Morse index `index`.
#[pyfunction]
#[pyo3(signature = (model, x0, index, direction="up", alpha0=1e-9, rate_c=2.0, eta=None, max_step=None, grad_tol=1e-6, max_iter=None))]
#[allow(clippy::too_many_arguments)]
fn search(
    py: Python<'_>,
    model: &Model,
    x0: Vec<f64>,
    index: usize,
    direction: &str,
    alpha0: f64,
    rate_c: f64,
    eta: Option<f64>,
    max_step: Option<f64>,
    grad_tol: f64,
    max_iter: Option<usize>,
) -> PyResult<SearchResult> {
    let base = SaddleConfig::for_model(&model.inner);
    let config = SaddleConfig {
        k: index,
        direction: self::direction(direction)?,
        alpha: AlphaSchedule {
            alpha0,
            c: rate_c,
            ..AlphaSchedule::default()
        },
        step: match eta {
            Some(eta) => StepPolicy::Fixed { eta, max_step },
            None => base.step,
        },
        grad_tol,
        max_iter: max_iter.unwrap_or(base.max_iter),
        ..base
    };
    let x0 = DVector::from_vec(x0);
    let r = py
        .detach(|| saddle::run_saddle_search(&model.inner, &x0, &config))
        .map_err(err)?;
    let x = r.point.as_ref().map_or(&r.final_x, |p| &p.x);
    Ok(SearchResult {
        status: status_name(r.status),
        iterations: r.iterations,
        x: x.as_slice().to_vec(),
        energy: model.inner.energy(x).ok(),
        grad_norm: model.inner.gradient(x).ok().map(|g| g.norm()),
        index: r.point.as_ref().map(|p| p.index),
        zero_count: r.point.as_ref().map(|p| p.zero_count),
        eigenvalues: r.point.as_ref().map(|p| p.eigenvalues.clone()),
        final_alpha: r.final_alpha,
    })
}

#[pyclass(module = "ihisd", frozen)]
struct Landscape {
    graph: LandscapeGraph,
}

#[pymethods]
impl Landscape {
    #[getter]
    fn truncated(&self) -> bool {
        self.graph.truncated
    }

    #[getter]
    fn searches(&self) -> usize {
        self.graph.attempts
    }

    /// Morse index of every vertex.
    #[getter]
    fn indices(&self) -> Vec<usize> {
        self.graph.indices()
    }

    #[getter]
    fn vertices<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.graph
            .vertices
            .iter()
            .map(|v| {
                let d = PyDict::new(py);
                d.set_item("id", &v.id)?;
                d.set_item("x", v.point.x.as_slice().to_vec())?;
                d.set_item("energy", v.point.energy)?;
                d.set_item("index", v.point.index)?;
                d.set_item("zero_count", v.point.zero_count)?;
                d.set_item("eigenvalues", v.point.eigenvalues.clone())?;
                Ok(d)
            })
            .collect()
    }

    /// Edges as `(from, to, s, k)` tuples.
    #[getter]
    fn edges(&self) -> Vec<(String, String, i32, usize)> {
        self.graph
            .edges
            .iter()
            .map(|e| {
                (
                    self.graph.vertices[e.from].id.clone(),
                    self.graph.vertices[e.to].id.clone(),
                    e.direction.as_int(),
                    e.k,
                )
            })
            .collect()
    }

    fn is_connected(&self) -> bool {
        self.graph.is_connected()
    }

    fn to_json(&self) -> String {
        landscape::export_graph(&self.graph, GraphFormat::Json)
    }

    fn to_dot(&self) -> String {
        landscape::export_graph(&self.graph, GraphFormat::Dot)
    }

    fn __repr__(&self) -> String {
        format!(
            "Landscape(vertices={}, edges={}, truncated={})",
            self.graph.vertices.len(),
            self.graph.edges.len(),
            self.graph.truncated
        )
    }
}

/// Solution landscape from `seed_point`, or from a seeded random start when
/// no point is given.
#[pyfunction]
#[pyo3(signature = (model, seed_point=None, seed=0, strategy="adjacent", delta=1e-2, alpha0=1e-9, cap=1000, jobs=1))]
#[allow(clippy::too_many_arguments)]
fn build_landscape(
    py: Python<'_>,
    model: &Model,
    seed_point: Option<Vec<f64>>,
    seed: u64,
    strategy: &str,
    delta: f64,
    alpha0: f64,
    cap: usize,
    jobs: usize,
) -> PyResult<Landscape> {
    let strategy = match strategy {
        "adjacent" => IndexStrategy::Adjacent,
        "all" => IndexStrategy::AllPairs,
        s => return Err(PyValueError::new_err(format!("strategy must be 'adjacent' or 'all', got '{s}'"))),
    };
    let base = SaddleConfig::for_model(&model.inner);
    let config = LandscapeConfig {
        strategy,
        delta,
        attempt_cap: cap,
        saddle: SaddleConfig {
            alpha: AlphaSchedule {
                alpha0,
                ..AlphaSchedule::default()
            },
            ..base
        },
        seed,
        jobs,
        ..LandscapeConfig::default()
    };
    let start = match seed_point {
        Some(p) => DVector::from_vec(p),
        None => landscape::random_start(&model.inner, seed),
    };
    let graph = py
        .detach(|| landscape::build_landscape(&model.inner, &start, &config))
        .map_err(err)?;
    Ok(Landscape { graph })
}

/// Integrates "descent", "ascent", "gad" or "ihisd" and returns
/// `(status, csv)`.
#[pyfunction]
#[pyo3(signature = (model, x0, mode="ihisd", index=1, alpha0=1e-9, t_max=200.0, h=1e-2))]
#[allow(clippy::too_many_arguments)]
fn flow(
    py: Python<'_>,
    model: &Model,
    x0: Vec<f64>,
    mode: &str,
    index: usize,
    alpha0: f64,
    t_max: f64,
    h: f64,
) -> PyResult<(String, String)> {
    let config = FlowConfig {
        t_max,
        h,
        ..FlowConfig::default()
    };
    let x0 = DVector::from_vec(x0);
    let m = &model.inner;
    let traj = py
        .detach(|| match mode {
            "descent" => gradient_flow(m, &x0, &config, Direction::Down),
            "ascent" => gradient_flow(m, &x0, &config, Direction::Up),
            "gad" | "ihisd" => {
                let alpha = if mode == "gad" { 1.0 } else { alpha0 };
                SearchState::from_hessian(m, x0.clone(), index, alpha).and_then(|s| integrate_ihisd(m, &s, &config))
            }
            other => Err(ihisd_core::Error::InvalidInput(format!("unknown flow mode '{other}'"))),
        })
        .map_err(err)?;
    let status = match traj.status {
        ihisd_core::TerminalStatus::Converged => "converged",
        ihisd_core::TerminalStatus::TMaxReached => "t_max_reached",
        ihisd_core::TerminalStatus::Diverged => "diverged",
    };
    Ok((status.to_string(), traj.to_csv()))
}

/// Runs one verification suite (or all) and returns
/// `(suite, name, passed, detail)` tuples.
#[pyfunction]
#[pyo3(signature = (suite=None, trials=None, seed=0))]
fn run_verify(py: Python<'_>, suite: Option<&str>, trials: Option<usize>, seed: u64) -> PyResult<Vec<(String, String, bool, String)>> {
    let suite = suite.map(str::to_string);
    let checks = py
        .detach(|| match &suite {
            Some(s) => verify::run_suite(s, trials, seed),
            None => verify::run_all(trials, seed),
        })
        .map_err(err)?;
    Ok(checks.into_iter().map(|c| (c.suite, c.name, c.passed, c.detail)).collect())
}

#[pymodule]
fn ihisd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<SearchResult>()?;
    m.add_class::<Landscape>()?;
    m.add_function(wrap_pyfunction!(search, m)?)?;
    m.add_function(wrap_pyfunction!(build_landscape, m)?)?;
    m.add_function(wrap_pyfunction!(flow, m)?)?;
    m.add_function(wrap_pyfunction!(run_verify, m)?)?;
    m.add("SUITES", verify::SUITES.to_vec())?;
    Ok(())
}
