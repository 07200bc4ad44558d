//! Energy models: the trait every search algorithm consumes, the benchmark
//! energies (butterfly surface, planar Morse cluster, quadratic forms), and
//! finite-difference machinery used for matrix-free Hessian products and for
//! checking analytic derivatives.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::eigen;
use crate::error::{Error, Result};

/// Largest dimension for which `dense_hessian` will build a full matrix.
pub const DEFAULT_DENSE_CAP: usize = 512;

/// Pair distances below this are treated as coincident particles.
pub const MIN_PAIR_DISTANCE: f64 = 1e-12;

/// Continuous symmetry of an energy, used to discount zero modes and to
/// canonicalize stationary points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Symmetry {
    None,
    /// Invariant under common translations and rotations of all particles in
    /// the plane.
    PlanarCluster,
}

impl Symmetry {
    /// Number of Hessian eigenvalues forced to zero by the symmetry.
    pub fn zero_modes(self) -> usize {
        match self {
            Symmetry::None => 0,
            Symmetry::PlanarCluster => 3,
        }
    }

    /// Orthonormal columns spanning the symmetry orbit tangent at `x`.
    pub fn zero_mode_basis(self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        match self {
            Symmetry::None => DMatrix::zeros(n, 0),
            Symmetry::PlanarCluster => {
                let p = n / 2;
                let (mut cx, mut cy) = (0.0, 0.0);
                for i in 0..p {
                    cx += x[2 * i];
                    cy += x[2 * i + 1];
                }
                cx /= p as f64;
                cy /= p as f64;
                let mut tx = DVector::zeros(n);
                let mut ty = DVector::zeros(n);
                let mut rot = DVector::zeros(n);
                for i in 0..p {
                    tx[2 * i] = 1.0;
                    ty[2 * i + 1] = 1.0;
                    rot[2 * i] = -(x[2 * i + 1] - cy);
                    rot[2 * i + 1] = x[2 * i] - cx;
                }
                let mut cols = vec![tx.normalize(), ty.normalize()];
                if rot.norm() > 1e-12 {
                    cols.push(rot.normalize());
                }
                DMatrix::from_columns(&cols)
            }
        }
    }
}

/// A smooth energy `E: R^n -> R` with analytic first derivatives.
pub trait Energy: Send + Sync {
    fn dim(&self) -> usize;

    fn energy(&self, x: &DVector<f64>) -> Result<f64>;

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// Analytic Hessian, when the model provides one.
    fn hessian(&self, _x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        None
    }

    fn symmetry(&self) -> Symmetry {
        Symmetry::None
    }

    /// True when `x` has separated into non-interacting parts, the
    /// relative-coordinate analogue of escaping to infinity.
    fn fragmented(&self, _x: &DVector<f64>) -> bool {
        false
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NumericOverflow(format!("{what} is not finite")))
    }
}

fn finite_vec(v: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(v)
    } else {
        Err(Error::NumericOverflow(format!("{what} has non-finite entries")))
    }
}

/// Two-dimensional test surface
/// `E(x, y) = x^4 - 2x^2 + y^4 + y^2 - 1.5 x^2 y^2 + x^2 y - c y^3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Butterfly {
    pub c: f64,
}

impl Butterfly {
    pub fn new(c: f64) -> Self {
        Butterfly { c }
    }
}

impl Energy for Butterfly {
    fn dim(&self) -> usize {
        2
    }

    fn energy(&self, p: &DVector<f64>) -> Result<f64> {
        self.check_dim(p)?;
        let (x, y) = (p[0], p[1]);
        let (x2, y2) = (x * x, y * y);
        let e = x2 * x2 - 2.0 * x2 + y2 * y2 + y2 - 1.5 * x2 * y2 + x2 * y - self.c * y2 * y;
        finite(e, "butterfly energy")
    }

    fn gradient(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(p)?;
        let (x, y) = (p[0], p[1]);
        let gx = 4.0 * x * x * x - 4.0 * x - 3.0 * x * y * y + 2.0 * x * y;
        let gy = 4.0 * y * y * y + 2.0 * y - 3.0 * x * x * y + x * x - 3.0 * self.c * y * y;
        finite_vec(DVector::from_vec(vec![gx, gy]), "butterfly gradient")
    }

    fn hessian(&self, p: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        Some(self.check_dim(p).and_then(|_| {
            let (x, y) = (p[0], p[1]);
            let hxx = 12.0 * x * x - 4.0 - 3.0 * y * y + 2.0 * y;
            let hxy = -6.0 * x * y + 2.0 * x;
            let hyy = 12.0 * y * y + 2.0 - 3.0 * x * x - 6.0 * self.c * y;
            let h = DMatrix::from_row_slice(2, 2, &[hxx, hxy, hxy, hyy]);
            if h.iter().all(|v| v.is_finite()) {
                Ok(h)
            } else {
                Err(Error::NumericOverflow("butterfly Hessian is not finite".into()))
            }
        }))
    }
}

/// Planar cluster of `n` identical particles interacting through the
/// dimensionless Morse pair potential `V(r) = e^{-2a(r-1)} - 2e^{-a(r-1)}`.
///
/// Coordinates are laid out as `[x_1, y_1, x_2, y_2, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MorseCluster {
    pub particles: usize,
    pub rigidity: f64,
}

impl MorseCluster {
    pub fn new(particles: usize, rigidity: f64) -> Result<Self> {
        if particles < 2 {
            return Err(Error::invalid("a Morse cluster needs at least 2 particles"));
        }
        if !(rigidity > 0.0) {
            return Err(Error::invalid("Morse rigidity a must be positive"));
        }
        Ok(MorseCluster { particles, rigidity })
    }

    /// Pair potential and its first two radial derivatives.
    pub fn pair(&self, r: f64) -> (f64, f64, f64) {
        let a = self.rigidity;
        let e1 = (-a * (r - 1.0)).exp();
        let e2 = e1 * e1;
        (e2 - 2.0 * e1, -2.0 * a * e2 + 2.0 * a * e1, 4.0 * a * a * e2 - 2.0 * a * a * e1)
    }

    fn separation(&self, x: &DVector<f64>, i: usize, j: usize) -> Result<(f64, f64, f64)> {
        let dx = x[2 * i] - x[2 * j];
        let dy = x[2 * i + 1] - x[2 * j + 1];
        let r = dx.hypot(dy);
        if r < MIN_PAIR_DISTANCE {
            return Err(Error::NumericDomain(format!(
                "particles {i} and {j} coincide (distance {r:e})"
            )));
        }
        Ok((dx, dy, r))
    }

    /// Distance beyond which the pair attraction is below `2 e^{-5}`.
    pub fn cutoff(&self) -> f64 {
        1.0 + 5.0 / self.rigidity
    }

    /// Sorted list of all pairwise distances.
    pub fn pair_distances(&self, x: &DVector<f64>) -> Vec<f64> {
        let n = self.particles;
        let mut d = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                d.push((x[2 * i] - x[2 * j]).hypot(x[2 * i + 1] - x[2 * j + 1]));
            }
        }
        d.sort_by(f64::total_cmp);
        d
    }

    /// Energy of the square pattern with side `side`, per unit of the
    /// symmetric one-parameter family (4 edges and 2 diagonals).
    pub fn square_family_energy(&self, side: f64) -> f64 {
        4.0 * self.pair(side).0 + 2.0 * self.pair(std::f64::consts::SQRT_2 * side).0
    }

    /// Side length at which the four-particle square is stationary, found by
    /// bisection on the symmetric-family derivative.
    pub fn square_side(&self) -> Result<f64> {
        let s2 = std::f64::consts::SQRT_2;
        let deriv = |d: f64| 4.0 * self.pair(d).1 + 2.0 * s2 * self.pair(s2 * d).1;
        // Strongly repulsive at 0.5, attractive at 1.2 for every a > 0.
        let (mut lo, mut hi) = (0.5, 1.2);
        if deriv(lo) >= 0.0 || deriv(hi) <= 0.0 {
            return Err(Error::NumericDomain("square side is not bracketed".into()));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if deriv(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Coordinates of the stationary square (four particles only).
    pub fn square_pattern(&self) -> Result<DVector<f64>> {
        if self.particles != 4 {
            return Err(Error::invalid("the square pattern needs exactly 4 particles"));
        }
        let d = self.square_side()?;
        Ok(DVector::from_vec(vec![0.0, 0.0, d, 0.0, d, d, 0.0, d]))
    }
}

impl Energy for MorseCluster {
    fn dim(&self) -> usize {
        2 * self.particles
    }

    fn energy(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        let mut e = 0.0;
        for i in 0..self.particles {
            for j in (i + 1)..self.particles {
                let (_, _, r) = self.separation(x, i, j)?;
                e += self.pair(r).0;
            }
        }
        finite(e, "Morse cluster energy")
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        let mut g = DVector::zeros(self.dim());
        for i in 0..self.particles {
            for j in (i + 1)..self.particles {
                let (dx, dy, r) = self.separation(x, i, j)?;
                let f = self.pair(r).1 / r;
                g[2 * i] += f * dx;
                g[2 * i + 1] += f * dy;
                g[2 * j] -= f * dx;
                g[2 * j + 1] -= f * dy;
            }
        }
        finite_vec(g, "Morse cluster gradient")
    }

    fn hessian(&self, x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        Some(self.check_dim(x).and_then(|_| {
            let n = self.dim();
            let mut h = DMatrix::<f64>::zeros(n, n);
            for i in 0..self.particles {
                for j in (i + 1)..self.particles {
                    let (dx, dy, r) = self.separation(x, i, j)?;
                    let (_, d1, d2) = self.pair(r);
                    let u = [dx / r, dy / r];
                    // K = V'' u u^T + (V'/r)(I - u u^T)
                    let mut k = [[0.0; 2]; 2];
                    for (p, row) in k.iter_mut().enumerate() {
                        for (q, entry) in row.iter_mut().enumerate() {
                            let delta = if p == q { 1.0 } else { 0.0 };
                            *entry = d2 * u[p] * u[q] + d1 / r * (delta - u[p] * u[q]);
                        }
                    }
                    for p in 0..2 {
                        for q in 0..2 {
                            h[(2 * i + p, 2 * i + q)] += k[p][q];
                            h[(2 * j + p, 2 * j + q)] += k[p][q];
                            h[(2 * i + p, 2 * j + q)] -= k[p][q];
                            h[(2 * j + p, 2 * i + q)] -= k[p][q];
                        }
                    }
                }
            }
            if h.iter().all(|v| v.is_finite()) {
                Ok(h)
            } else {
                Err(Error::NumericOverflow("Morse cluster Hessian is not finite".into()))
            }
        }))
    }

    fn symmetry(&self) -> Symmetry {
        Symmetry::PlanarCluster
    }

    /// Particles closer than `cutoff()` are linked; the cluster is
    /// fragmented when the linked graph is disconnected.
    fn fragmented(&self, x: &DVector<f64>) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        let n = self.particles;
        let cut = self.cutoff();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if !seen[j] && (x[2 * i] - x[2 * j]).hypot(x[2 * i + 1] - x[2 * j + 1]) < cut {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        !seen.into_iter().all(|s| s)
    }
}

/// Quadratic form `E(x) = x^T A x / 2` for a symmetric matrix `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    matrix: DMatrix<f64>,
}

impl Quadratic {
    pub fn diagonal(spectrum: &[f64]) -> Result<Self> {
        if spectrum.is_empty() {
            return Err(Error::invalid("quadratic spectrum must not be empty"));
        }
        if spectrum.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("quadratic spectrum must be finite"));
        }
        Ok(Quadratic {
            matrix: DMatrix::from_diagonal(&DVector::from_column_slice(spectrum)),
        })
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::invalid("quadratic matrix must be square and non-empty"));
        }
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-12 * matrix.amax().max(1.0) {
            return Err(Error::invalid("quadratic matrix must be symmetric"));
        }
        Ok(Quadratic { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Eigenvalues of `A`, ascending.
    pub fn spectrum(&self) -> Vec<f64> {
        eigen::symmetric_eigen(&self.matrix).values
    }
}

impl Energy for Quadratic {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn energy(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        finite(0.5 * x.dot(&(&self.matrix * x)), "quadratic energy")
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        finite_vec(&self.matrix * x, "quadratic gradient")
    }

    fn hessian(&self, x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        Some(self.check_dim(x).map(|_| self.matrix.clone()))
    }
}

/// Serializable description of a named benchmark model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<Vec<f64>>,
}

impl ModelSpec {
    /// Parses `key=value` parameter strings. `spectrum` takes a
    /// comma-separated list; everything else must be a single number.
    pub fn parse<S: AsRef<str>>(id: &str, params: &[S]) -> Result<Self> {
        let mut spec = ModelSpec {
            id: id.to_string(),
            params: BTreeMap::new(),
            spectrum: None,
        };
        for item in params {
            let item = item.as_ref();
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("parameter `{item}` is not key=value")))?;
            let key = key.trim();
            if key == "spectrum" {
                let values = parse_list(value)?;
                spec.spectrum = Some(values);
            } else {
                let v: f64 = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("parameter `{key}` is not a number")))?;
                spec.params.insert(key.to_string(), v);
            }
        }
        Ok(spec)
    }

    pub fn build(&self) -> Result<EnergyModel> {
        EnergyModel::from_spec(self)
    }
}

/// Parses a comma-separated list of reals.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("`{t}` is not a number")))
        })
        .collect()
}

/// One of the named benchmark energies.
#[derive(Debug, Clone, PartialEq)]
pub enum EnergyModel {
    Butterfly(Butterfly),
    Morse(MorseCluster),
    Quadratic(Quadratic),
}

impl EnergyModel {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let allow = |keys: &[&str]| -> Result<()> {
            for k in spec.params.keys() {
                if !keys.contains(&k.as_str()) {
                    return Err(Error::invalid(format!("unknown parameter `{k}` for {}", spec.id)));
                }
            }
            Ok(())
        };
        match spec.id.as_str() {
            "butterfly" => {
                allow(&["c"])?;
                Ok(EnergyModel::Butterfly(Butterfly::new(
                    spec.params.get("c").copied().unwrap_or(1.0),
                )))
            }
            "morse" => {
                allow(&["a", "n"])?;
                let n = spec.params.get("n").copied().unwrap_or(4.0);
                if n.fract() != 0.0 || n < 2.0 {
                    return Err(Error::invalid("Morse particle count n must be an integer >= 2"));
                }
                Ok(EnergyModel::Morse(MorseCluster::new(
                    n as usize,
                    spec.params.get("a").copied().unwrap_or(6.0),
                )?))
            }
            "quadratic" => {
                allow(&[])?;
                let spectrum = spec
                    .spectrum
                    .as_ref()
                    .ok_or_else(|| Error::invalid("quadratic model requires spectrum=..."))?;
                Ok(EnergyModel::Quadratic(Quadratic::diagonal(spectrum)?))
            }
            other => Err(Error::invalid(format!("unknown energy model `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnergyModel::Butterfly(_) => "butterfly",
            EnergyModel::Morse(_) => "morse",
            EnergyModel::Quadratic(_) => "quadratic",
        }
    }

    pub fn spec(&self) -> ModelSpec {
        let mut params = BTreeMap::new();
        let mut spectrum = None;
        match self {
            EnergyModel::Butterfly(b) => {
                params.insert("c".to_string(), b.c);
            }
            EnergyModel::Morse(m) => {
                params.insert("a".to_string(), m.rigidity);
                params.insert("n".to_string(), m.particles as f64);
            }
            EnergyModel::Quadratic(q) => {
                spectrum = Some(q.matrix.diagonal().iter().copied().collect());
            }
        }
        ModelSpec {
            id: self.name().to_string(),
            params,
            spectrum,
        }
    }

    fn inner(&self) -> &dyn Energy {
        match self {
            EnergyModel::Butterfly(m) => m,
            EnergyModel::Morse(m) => m,
            EnergyModel::Quadratic(m) => m,
        }
    }
}

impl fmt::Display for EnergyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())?;
        for (k, v) in self.spec().params {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

impl Energy for EnergyModel {
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn energy(&self, x: &DVector<f64>) -> Result<f64> {
        self.inner().energy(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner().gradient(x)
    }
    fn hessian(&self, x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        self.inner().hessian(x)
    }
    fn symmetry(&self) -> Symmetry {
        self.inner().symmetry()
    }
    fn fragmented(&self, x: &DVector<f64>) -> bool {
        self.inner().fragmented(x)
    }
}

/// Half-length of the central difference used for matrix-free Hessian
/// products.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimerSettings {
    /// `None` selects `1e-4 * max(1, |x|)`.
    pub half_length: Option<f64>,
}

impl Default for DimerSettings {
    fn default() -> Self {
        DimerSettings { half_length: None }
    }
}

impl DimerSettings {
    pub fn with_half_length(l: f64) -> Self {
        DimerSettings {
            half_length: Some(l),
        }
    }

    pub fn resolve(&self, x: &DVector<f64>) -> Result<f64> {
        match self.half_length {
            Some(l) if l > 0.0 && l.is_finite() => Ok(l),
            Some(l) => Err(Error::invalid(format!("dimer half-length must be positive, got {l}"))),
            None => Ok(1e-4 * x.norm().max(1.0)),
        }
    }
}

/// `G(x) v` from the analytic Hessian when the model has one, otherwise by a
/// central difference of gradients.
pub fn hessian_vector(
    model: &dyn Energy,
    x: &DVector<f64>,
    v: &DVector<f64>,
    settings: &DimerSettings,
) -> Result<DVector<f64>> {
    model.check_dim(v)?;
    match model.hessian(x) {
        Some(h) => Ok(h? * v),
        None => dimer_hessian_vector(model, x, v, settings),
    }
}

/// Central-difference Hessian product
/// `(grad E(x + l v) - grad E(x - l v)) / (2l)`, whether or not an analytic
/// Hessian exists.
pub fn dimer_hessian_vector(
    model: &dyn Energy,
    x: &DVector<f64>,
    v: &DVector<f64>,
    settings: &DimerSettings,
) -> Result<DVector<f64>> {
    model.check_dim(x)?;
    model.check_dim(v)?;
    let l = settings.resolve(x)?;
    let norm = v.norm();
    if !(norm > 0.0) {
        return Err(Error::invalid("Hessian-vector direction must be non-zero"));
    }
    let u = v / norm;
    let plus = model.gradient(&(x + &u * l))?;
    let minus = model.gradient(&(x - &u * l))?;
    Ok((plus - minus) * (norm / (2.0 * l)))
}

/// Full symmetric Hessian, symmetrized as `(H + H^T) / 2`. Falls back to
/// differencing gradients column by column when the model has no analytic
/// Hessian.
pub fn dense_hessian(model: &dyn Energy, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    dense_hessian_capped(model, x, DEFAULT_DENSE_CAP)
}

pub fn dense_hessian_capped(
    model: &dyn Energy,
    x: &DVector<f64>,
    cap: usize,
) -> Result<DMatrix<f64>> {
    model.check_dim(x)?;
    let n = model.dim();
    if n > cap {
        return Err(Error::Unsupported(format!(
            "dense Hessian of dimension {n} exceeds cap {cap}; use hessian_vector"
        )));
    }
    let h = match model.hessian(x) {
        Some(h) => h?,
        None => fd_hessian(model, x)?,
    };
    Ok((&h + h.transpose()) * 0.5)
}

fn fd_step(x: &DVector<f64>) -> f64 {
    1e-5 * x.norm().max(1.0)
}

/// Central-difference gradient of the energy.
pub fn fd_gradient(model: &dyn Energy, x: &DVector<f64>) -> Result<DVector<f64>> {
    model.check_dim(x)?;
    let h = fd_step(x);
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let ep = model.energy(&probe)?;
        probe[i] = x[i] - h;
        let em = model.energy(&probe)?;
        probe[i] = x[i];
        g[i] = (ep - em) / (2.0 * h);
    }
    Ok(g)
}

/// Central-difference Hessian built from analytic gradients (unsymmetrized).
pub fn fd_hessian(model: &dyn Energy, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    model.check_dim(x)?;
    let n = x.len();
    let h = fd_step(x);
    let mut out = DMatrix::zeros(n, n);
    let mut probe = x.clone();
    for j in 0..n {
        probe[j] = x[j] + h;
        let gp = model.gradient(&probe)?;
        probe[j] = x[j] - h;
        let gm = model.gradient(&probe)?;
        probe[j] = x[j];
        out.set_column(j, &((gp - gm) / (2.0 * h)));
    }
    Ok(out)
}

/// Maximum relative errors of the analytic derivatives against finite
/// differences at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdReport {
    pub gradient_error: f64,
    /// `None` when the model has no analytic Hessian to check.
    pub hessian_error: Option<f64>,
}

impl FdReport {
    pub fn max_error(&self) -> f64 {
        self.gradient_error.max(self.hessian_error.unwrap_or(0.0))
    }
}

/// Relative error `|a - b|_inf / max(1, |a|_inf)`.
pub fn relative_error(analytic: &[f64], approx: &[f64]) -> f64 {
    let scale = analytic.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let diff = analytic
        .iter()
        .zip(approx)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    diff / scale
}

pub fn fd_check(model: &dyn Energy, x: &DVector<f64>) -> Result<FdReport> {
    let g = model.gradient(x)?;
    let g_fd = fd_gradient(model, x)?;
    let gradient_error = relative_error(g.as_slice(), g_fd.as_slice());
    let hessian_error = match model.hessian(x) {
        Some(h) => {
            let h = h?;
            let h_fd = fd_hessian(model, x)?;
            Some(relative_error(h.as_slice(), h_fd.as_slice()))
        }
        None => None,
    };
    Ok(FdReport {
        gradient_error,
        hessian_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn butterfly_origin_values() {
        for c in [0.5, 1.0, 1.5, 2.0] {
            let m = Butterfly::new(c);
            let o = v(&[0.0, 0.0]);
            assert_eq!(m.energy(&o).unwrap(), 0.0);
            assert_eq!(m.gradient(&o).unwrap(), v(&[0.0, 0.0]));
            let h = dense_hessian(&m, &o).unwrap();
            assert_eq!(h, DMatrix::from_row_slice(2, 2, &[-4.0, 0.0, 0.0, 2.0]));
        }
    }

    #[test]
    fn butterfly_hvp_at_origin() {
        let m = Butterfly::new(1.0);
        let hv = hessian_vector(&m, &v(&[0.0, 0.0]), &v(&[1.0, 0.0]), &DimerSettings::default())
            .unwrap();
        assert_eq!(hv, v(&[-4.0, 0.0]));
    }

    #[test]
    fn morse_pair_at_unit_distance() {
        let m = MorseCluster::new(2, 6.0).unwrap();
        let x = v(&[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(m.energy(&x).unwrap(), -1.0);
        assert_eq!(m.gradient(&x).unwrap(), DVector::zeros(4));
    }

    #[test]
    fn morse_coincident_particles_rejected() {
        let m = MorseCluster::new(2, 6.0).unwrap();
        let x = v(&[0.3, 0.3, 0.3, 0.3]);
        assert!(matches!(m.energy(&x), Err(Error::NumericDomain(_))));
        assert!(matches!(m.gradient(&x), Err(Error::NumericDomain(_))));
    }

    #[test]
    fn morse_needs_two_particles() {
        assert!(MorseCluster::new(1, 6.0).is_err());
        assert!(MorseCluster::new(3, 0.0).is_err());
    }

    #[test]
    fn quadratic_values() {
        let q = Quadratic::diagonal(&[-1.0, 2.0]).unwrap();
        assert_eq!(q.energy(&v(&[0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(q.gradient(&v(&[1.0, 1.0])).unwrap(), v(&[-1.0, 2.0]));
        let hv = hessian_vector(&q, &v(&[3.0, -7.0]), &v(&[1.0, 0.0]), &DimerSettings::default())
            .unwrap();
        assert_eq!(hv, v(&[-1.0, 0.0]));
        assert_eq!(
            dense_hessian(&q, &v(&[5.0, 5.0])).unwrap(),
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 2.0])
        );
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let q = Quadratic::diagonal(&[1.0, 2.0]).unwrap();
        assert_eq!(
            q.energy(&v(&[1.0])),
            Err(Error::DimensionMismatch {
                expected: 2,
                actual: 1
            })
        );
    }

    #[test]
    fn overflow_is_reported() {
        let m = Butterfly::new(1.0);
        assert!(matches!(
            m.energy(&v(&[1e300, 0.0])),
            Err(Error::NumericOverflow(_))
        ));
    }

    #[test]
    fn dimer_on_quadratic_is_exact_to_rounding() {
        let q = Quadratic::diagonal(&[-1.0, 2.0, 0.5]).unwrap();
        let x = v(&[0.2, -1.3, 0.7]);
        let dir = v(&[0.3, 0.4, -1.2]);
        let exact = q.matrix() * &dir;
        let fd = dimer_hessian_vector(&q, &x, &dir, &DimerSettings::with_half_length(1e-4))
            .unwrap();
        assert!((fd - exact).amax() <= 1e-10);
    }

    #[test]
    fn dimer_rejects_bad_half_length() {
        let q = Quadratic::diagonal(&[1.0]).unwrap();
        let r = dimer_hessian_vector(&q, &v(&[0.0]), &v(&[1.0]), &DimerSettings::with_half_length(0.0));
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn dense_cap_is_enforced() {
        let q = Quadratic::diagonal(&[1.0; 4]).unwrap();
        let r = dense_hessian_capped(&q, &DVector::zeros(4), 3);
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    #[test]
    fn quadratic_fd_check_at_rounding_level() {
        let q = Quadratic::diagonal(&[-1.0, 2.0, 3.5]).unwrap();
        let r = fd_check(&q, &v(&[0.4, -0.1, 1.2])).unwrap();
        assert!(r.gradient_error <= 1e-10, "{r:?}");
        assert!(r.hessian_error.unwrap() <= 1e-10, "{r:?}");
    }

    #[test]
    fn square_is_stationary() {
        for a in [1.5, 3.0, 6.0] {
            let m = MorseCluster::new(4, a).unwrap();
            let x = m.square_pattern().unwrap();
            assert!(m.gradient(&x).unwrap().norm() < 1e-12);
            let d = m.square_side().unwrap();
            let eps = 1e-6;
            let slope =
                (m.square_family_energy(d + eps) - m.square_family_energy(d - eps)) / (2.0 * eps);
            assert_abs_diff_eq!(slope, 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn model_spec_parsing() {
        let s = ModelSpec::parse("quadratic", &["spectrum=-1,2"]).unwrap();
        assert_eq!(s.spectrum, Some(vec![-1.0, 2.0]));
        let m = s.build().unwrap();
        assert_eq!(m.dim(), 2);
        let s = ModelSpec::parse("morse", &["a=1.5", "n=4"]).unwrap();
        let m = s.build().unwrap();
        assert_eq!(m.dim(), 8);
        assert_eq!(m.symmetry(), Symmetry::PlanarCluster);
        assert_eq!(m.spec(), s);
        assert!(ModelSpec::parse("butterfly", &["c"]).is_err());
        assert!(ModelSpec::parse("butterfly", &["q=1"]).unwrap().build().is_err());
        assert!(ModelSpec::parse("nope", &["c=1"]).unwrap().build().is_err());
        assert!(ModelSpec::parse("quadratic", &["c=1"]).unwrap().build().is_err());
        assert!(ModelSpec::parse("morse", &["n=2.5"]).unwrap().build().is_err());
    }
}
