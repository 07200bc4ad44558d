//! Numerical checks of the theory behind the solver, each reported as a
//! named pass/fail line.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{alpha_closed_form, ihisd_field, FlowConfig, SearchState};
use crate::eigen::{self, EigenMode, EigenOptions};
use crate::energy::{fd_check, Butterfly, Energy, MorseCluster, Quadratic, Symmetry};
use crate::error::{Error, Result};
use crate::landscape::random_start;
use crate::saddle::{measure_contraction, AlphaSchedule, SaddleConfig, StepPolicy};
use crate::EnergyModel;

pub const SUITES: &[&str] = &["fd", "eigen", "reflection", "equilibrium", "rate", "alpha", "pitchfork"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(suite: &str, name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            suite: suite.into(),
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<4} {:<12} {:<44} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.detail
        )
    }
}

/// Runs one suite. `trials` overrides the suite's default sample count.
pub fn run_suite(name: &str, trials: Option<usize>, seed: u64) -> Result<Vec<Check>> {
    match name {
        "fd" => fd_suite(trials.unwrap_or(100), seed),
        "eigen" => eigen_suite(trials.unwrap_or(1000), seed),
        "reflection" => reflection_suite(trials.unwrap_or(50), 50, seed),
        "equilibrium" => equilibrium_suite(trials.unwrap_or(20), seed),
        "rate" => rate_suite(),
        "alpha" => alpha_suite(),
        "pitchfork" => pitchfork_suite(),
        _ => Err(Error::invalid(format!(
            "unknown suite '{name}' (known: {})",
            SUITES.join(", ")
        ))),
    }
}

pub fn run_all(trials: Option<usize>, seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for s in SUITES {
        out.extend(run_suite(s, trials, seed)?);
    }
    Ok(out)
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&a + a.transpose()) * 0.5
}

/// Largest principal angle between the column spans of two orthonormal
/// frames, as its sine.
pub fn subspace_sine(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let resid = b - a * (a.transpose() * b);
    resid.singular_values().iter().fold(0.0_f64, |m, &s| m.max(s))
}

fn fd_suite(points: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let models: Vec<(String, EnergyModel)> = vec![
        ("butterfly c=1".into(), EnergyModel::Butterfly(Butterfly::new(1.0))),
        ("butterfly c=2".into(), EnergyModel::Butterfly(Butterfly::new(2.0))),
        ("morse n=4 a=1.5".into(), EnergyModel::Morse(MorseCluster::new(4, 1.5)?)),
        ("morse n=4 a=6".into(), EnergyModel::Morse(MorseCluster::new(4, 6.0)?)),
        ("morse n=7 a=3".into(), EnergyModel::Morse(MorseCluster::new(7, 3.0)?)),
        ("quadratic n=5".into(), {
            let a = random_symmetric(&mut rng, 5);
            EnergyModel::Quadratic(Quadratic::from_matrix(a)?)
        }),
    ];
    let mut out = Vec::new();
    for (label, model) in &models {
        let mut worst = 0.0_f64;
        for _ in 0..points {
            let x = match model.symmetry() {
                Symmetry::None => DVector::from_fn(model.dim(), |_, _| rng.random_range(-2.0..2.0)),
                Symmetry::PlanarCluster => random_start(model, rng.random()),
            };
            worst = worst.max(fd_check(model, &x)?.max_error());
        }
        out.push(Check::new(
            "fd",
            format!("{label} ({points} points)"),
            worst <= 1e-5,
            format!("max relative error {worst:.2e} <= 1e-5"),
        ));
    }
    Ok(out)
}

fn eigen_suite(matrices: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for mode in [EigenMode::Dense, EigenMode::MatrixFree] {
        let opts = EigenOptions {
            mode,
            tol: 1e-10,
            max_iter: Some(500),
        };
        let (mut value_err, mut angle_err, mut compared) = (0.0_f64, 0.0_f64, 0);
        for _ in 0..matrices {
            let n = rng.random_range(1..=8);
            let k = rng.random_range(1..=n);
            let a = random_symmetric(&mut rng, n);
            let oracle = a.clone().symmetric_eigen();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| oracle.eigenvalues[i].total_cmp(&oracle.eigenvalues[j]));
            let basis = eigen::eigensolve_k(&a, k, &opts, None)?;
            for (i, &o) in order.iter().take(k).enumerate() {
                value_err = value_err.max((basis.values[i] - oracle.eigenvalues[o]).abs());
            }
            let gap = if k < n {
                oracle.eigenvalues[order[k]] - oracle.eigenvalues[order[k - 1]]
            } else {
                f64::INFINITY
            };
            if gap > 1e-4 {
                let reference = DMatrix::from_columns(
                    &order[..k].iter().map(|&o| oracle.eigenvectors.column(o).into_owned()).collect::<Vec<_>>(),
                );
                angle_err = angle_err.max(subspace_sine(&reference, &basis.vectors));
                compared += 1;
            }
        }
        let label = match mode {
            EigenMode::Dense => "dense",
            EigenMode::MatrixFree => "matrix-free",
        };
        out.push(Check::new(
            "eigen",
            format!("{label} eigenvalues ({matrices} matrices)"),
            value_err <= 1e-8,
            format!("max error {value_err:.2e} <= 1e-8"),
        ));
        out.push(Check::new(
            "eigen",
            format!("{label} subspaces ({compared} with gap > 1e-4)"),
            angle_err <= 1e-6,
            format!("max principal angle {angle_err:.2e} <= 1e-6"),
        ));
    }
    Ok(out)
}

fn random_with_gap(rng: &mut ChaCha8Rng, n: usize, gap: f64) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    loop {
        let g = random_symmetric(rng, n);
        let eig = eigen::symmetric_eigen(&g);
        if eig.values.windows(2).all(|w| w[1] - w[0] > gap) {
            return (g, eig.values, eig.vectors);
        }
    }
}

fn reflection_suite(matrices: usize, perturbations: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 5;
    let (mut worst_min, mut worst_max) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..matrices {
        let (g, _, vecs) = random_with_gap(&mut rng, n, 1e-3);
        let k = rng.random_range(1..n);
        let low = vecs.columns(0, k).into_owned();
        let high = vecs.columns(n - k, k).into_owned();
        let d_low = eigen::reflection_distance(&low, &g)?;
        let d_high = eigen::reflection_distance(&high, &g)?;
        for _ in 0..perturbations {
            for (v, base, is_min) in [(&low, d_low, true), (&high, d_high, false)] {
                let r = eigen::reflection(v);
                let t = eigen::tangent_projection(&r, &random_symmetric(&mut rng, n));
                let t = &t / t.norm().max(f64::MIN_POSITIVE);
                let moved = eigen::move_on_manifold(v, &t, 1e-3)?;
                let d = eigen::reflection_distance(&moved, &g)?;
                if is_min {
                    worst_min = worst_min.min(d - base);
                } else {
                    worst_max = worst_max.min(base - d);
                }
            }
        }
    }
    Ok(vec![
        Check::new(
            "reflection",
            format!("k lowest is a local minimum ({matrices}x{perturbations})"),
            worst_min >= -1e-12,
            format!("min increase {worst_min:.2e} >= -1e-12"),
        ),
        Check::new(
            "reflection",
            format!("k highest is a local maximum ({matrices}x{perturbations})"),
            worst_max >= -1e-12,
            format!("min decrease {worst_max:.2e} >= -1e-12"),
        ),
    ])
}

/// Packs `(x, V, alpha)` column-major into one vector.
fn pack(state: &SearchState) -> DVector<f64> {
    let mut out: Vec<f64> = state.x.iter().copied().collect();
    out.extend(state.basis.iter());
    out.push(state.alpha);
    DVector::from_vec(out)
}

fn unpack(z: &DVector<f64>, n: usize, k: usize) -> SearchState {
    SearchState {
        x: DVector::from_column_slice(&z.as_slice()[..n]),
        basis: DMatrix::from_column_slice(n, k, &z.as_slice()[n..n + n * k]),
        alpha: z[n + n * k],
        t: 0.0,
    }
}

fn packed_field(model: &dyn Energy, z: &DVector<f64>, n: usize, k: usize, cfg: &FlowConfig) -> Result<DVector<f64>> {
    let f = ihisd_field(model, &unpack(z, n, k), cfg)?;
    let mut out: Vec<f64> = f.dx.iter().copied().collect();
    out.extend(f.dv.iter());
    out.push(f.dalpha);
    Ok(DVector::from_vec(out))
}

/// Central-difference Jacobian of the packed crossover field.
pub fn field_jacobian(model: &dyn Energy, state: &SearchState, cfg: &FlowConfig, h: f64) -> Result<DMatrix<f64>> {
    let (n, k) = (state.x.len(), state.basis.ncols());
    let z = pack(state);
    let m = z.len();
    let mut jac = DMatrix::zeros(m, m);
    for j in 0..m {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[j] += h;
        zm[j] -= h;
        let col = (packed_field(model, &zp, n, k, cfg)? - packed_field(model, &zm, n, k, cfg)?) / (2.0 * h);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

fn equilibrium_suite(cases: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = FlowConfig::default();
    let (mut worst_field, mut worst_real) = (0.0_f64, f64::NEG_INFINITY);
    for _ in 0..cases {
        let n = rng.random_range(2..=5);
        let k = rng.random_range(1..n);
        // k negative values, the rest positive, neighbours at least 0.6 apart.
        let spectrum: Vec<f64> = (0..n)
            .map(|i| {
                let jitter = rng.random_range(0.0..0.4);
                if i < k {
                    -((k - i) as f64) - jitter
                } else {
                    (i - k + 1) as f64 + jitter
                }
            })
            .collect();
        let q = Quadratic::from_matrix({
            let d = DMatrix::from_diagonal(&DVector::from_vec(spectrum));
            let rot = eigen::symmetric_eigen(&random_symmetric(&mut rng, n)).vectors;
            &rot * d * rot.transpose()
        })?;
        let state = SearchState::from_hessian(&q, DVector::zeros(n), k, 1.0)?;
        let f = ihisd_field(&q, &state, &cfg)?;
        let norm = (f.dx.norm_squared() + f.dv.norm_squared() + f.dalpha * f.dalpha).sqrt();
        worst_field = worst_field.max(norm);
        let jac = field_jacobian(&q, &state, &cfg, 1e-6)?;
        let top = jac.complex_eigenvalues().iter().fold(f64::NEG_INFINITY, |m, z| m.max(z.re));
        worst_real = worst_real.max(top);
    }
    Ok(vec![
        Check::new(
            "equilibrium",
            format!("field vanishes at (x*, V*, 1) ({cases} quadratics)"),
            worst_field <= 1e-10,
            format!("max |F| {worst_field:.2e} <= 1e-10"),
        ),
        Check::new(
            "equilibrium",
            format!("Jacobian is stable ({cases} quadratics)"),
            worst_real <= -1e-8,
            format!("max Re(lambda) {worst_real:.3e} <= -1e-8"),
        ),
    ])
}

/// Contraction on `diag(-1, lambda2)` with the theoretical step, for ratios
/// starting at `(1 + eps) / 2` and for `alpha` pinned at 1.
pub fn rate_checks(lambda2: f64, eps: f64) -> Result<Vec<Check>> {
    let q = EnergyModel::Quadratic(Quadratic::diagonal(&[-1.0, lambda2])?);
    let x0 = DVector::from_column_slice(&[0.3, 0.3]);
    let step = StepPolicy::Theoretical {
        lipschitz: lambda2.max(1.0),
        mu: lambda2.min(1.0),
    };
    let rising = SaddleConfig {
        alpha: AlphaSchedule {
            alpha0: (1.0 + eps) / 2.0,
            ..AlphaSchedule::default()
        },
        step,
        ..SaddleConfig::default()
    };
    let r = measure_contraction(&q, &rising, &x0, 200)?;
    let pinned = SaddleConfig {
        alpha: AlphaSchedule::pinned(1.0),
        ..rising
    };
    let p = measure_contraction(&q, &pinned, &x0, 200)?;
    Ok(vec![
        Check::new(
            "rate",
            format!("lambda2={lambda2} eps={eps}: tail <= (k+e)/(k+3e)"),
            r.max_tail_ratio <= r.rate_bound + 1e-6,
            format!("{:.6} <= {:.6}", r.max_tail_ratio, r.rate_bound),
        ),
        Check::new(
            "rate",
            format!("lambda2={lambda2} alpha=1: tail <= (k-1)/(k+1)"),
            p.max_tail_ratio <= p.quadratic_bound + 1e-6,
            format!("{:.6} <= {:.6}", p.max_tail_ratio, p.quadratic_bound),
        ),
    ])
}

fn rate_suite() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for l in [2.0, 5.0, 10.0] {
        out.extend(rate_checks(l, 0.5)?);
    }
    Ok(out)
}

fn alpha_suite() -> Result<Vec<Check>> {
    // RK4 on alpha' = c alpha (1 - alpha) against the logistic closed form.
    let mut worst = 0.0_f64;
    for c in [1.0, 2.0] {
        for a0 in [1e-11, 1e-9, 1e-7, 0.5] {
            let f = |a: f64| c * a * (1.0 - a);
            let (h, steps) = (1e-3, 30_000);
            let mut a = a0;
            for i in 1..=steps {
                let k1 = f(a);
                let k2 = f(a + 0.5 * h * k1);
                let k3 = f(a + 0.5 * h * k2);
                let k4 = f(a + h * k3);
                a += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                if i % 1000 == 0 {
                    let exact = alpha_closed_form(a0, c, i as f64 * h)?;
                    worst = worst.max((a - exact).abs() / exact);
                }
            }
        }
    }
    let schedule = AlphaSchedule::default();
    let mut a = schedule.alpha0;
    let mut monotone = true;
    for _ in 0..100 {
        let next = schedule.next(a);
        monotone &= next >= a && next < 1.0;
        a = next;
    }
    Ok(vec![
        Check::new(
            "alpha",
            "closed form matches RK4",
            worst <= 1e-8,
            format!("max relative error {worst:.2e} <= 1e-8"),
        ),
        Check::new(
            "alpha",
            "discrete ratio rises monotonically below 1",
            monotone && a > 0.99,
            format!("alpha after 100 steps {a:.15}"),
        ),
    ])
}

/// Smallest Hessian eigenvalue of the square pattern on the complement of
/// the symmetry zero modes.
pub fn square_soft_mode(a: f64) -> Result<f64> {
    let m = MorseCluster::new(4, a)?;
    let x = m.square_pattern()?;
    let h = m.hessian(&x).expect("analytic Hessian")?;
    let null = Symmetry::PlanarCluster.zero_mode_basis(&x);
    // Complement basis: eigenvectors of I - QQ^T with eigenvalue 1.
    let proj = DMatrix::identity(8, 8) - &null * null.transpose();
    let pe = eigen::symmetric_eigen(&proj);
    let comp = pe.vectors.columns(null.ncols(), 8 - null.ncols()).into_owned();
    let reduced = comp.transpose() * h * &comp;
    Ok(eigen::symmetric_eigen(&reduced).values[0])
}

/// Grid value of `a` after which the soft mode first changes sign, for the
/// sweep `start, start + step, ..., end`.
pub fn pitchfork_sweep(start: f64, end: f64, step: f64) -> Result<(Vec<(f64, f64)>, Option<f64>)> {
    let count = ((end - start) / step).round() as usize;
    let mut samples = Vec::with_capacity(count + 1);
    for i in 0..=count {
        let a = start + i as f64 * step;
        samples.push((a, square_soft_mode(a)?));
    }
    let crossing = samples.windows(2).find(|w| w[0].1.signum() != w[1].1.signum()).map(|w| {
        // Linear interpolation between the bracketing grid points.
        let (a0, l0, a1, l1) = (w[0].0, w[0].1, w[1].0, w[1].1);
        a0 - l0 * (a1 - a0) / (l1 - l0)
    });
    Ok((samples, crossing))
}

fn pitchfork_suite() -> Result<Vec<Check>> {
    let (_, crossing) = pitchfork_sweep(1.60, 1.90, 0.01)?;
    Ok(vec![match crossing {
        Some(a) => Check::new(
            "pitchfork",
            "square soft-mode sign change in [1.70, 1.80]",
            (1.70..=1.80).contains(&a),
            format!("a* = {a:.4}"),
        ),
        None => Check::new("pitchfork", "square soft-mode sign change in [1.70, 1.80]", false, "no sign change"),
    }])
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}
