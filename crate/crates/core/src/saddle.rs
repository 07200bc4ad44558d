//! Discrete crossover saddle search: at every iterate solve for the `k`
//! lowest Hessian eigenvectors, form the reflected search direction, take a
//! step and advance the mixing ratio, until the gradient is below tolerance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Direction, Sample, TerminalStatus, Trajectory, ALPHA_MAX};
use crate::eigen::{self, DeflatedOperator, EigenMode, EigenOptions, HessianOperator, SymmetricOperator};
use crate::energy::{dense_hessian, DimerSettings, Energy, EnergyModel};
use crate::error::{Error, Result};
use crate::landscape::{fingerprint, Fingerprint};

/// Ratio sequence `alpha_{m+1} = clamp(alpha_m + step * c * alpha_m (1 - alpha_m))`,
/// clamped to `[alpha0, 1 - 1e-15]`. `alpha0 = 1` pins the sequence at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    pub alpha0: f64,
    pub c: f64,
    pub step: f64,
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        AlphaSchedule {
            alpha0: 1e-9,
            c: 2.0,
            step: 1.0,
        }
    }
}

impl AlphaSchedule {
    pub fn pinned(alpha: f64) -> Self {
        AlphaSchedule {
            alpha0: alpha,
            c: 0.0,
            step: 1.0,
        }
    }

    pub fn next(&self, alpha: f64) -> f64 {
        (alpha + self.step * self.c * alpha * (1.0 - alpha))
            .min(ALPHA_MAX)
            .max(self.alpha0)
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.alpha0 <= 1.0) {
            return Err(Error::invalid(format!("alpha0 must lie in (0, 1], got {}", self.alpha0)));
        }
        if !(self.c >= 0.0 && self.step >= 0.0) {
            return Err(Error::invalid("alpha rate and step must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum StepPolicy {
    /// Constant step `eta`; if `max_step` is set the displacement
    /// `eta |d_m|` is capped at that length.
    Fixed { eta: f64, max_step: Option<f64> },
    /// `eta_m = 2 / (L + mu (2 alpha_m - 1))` for spectral bounds
    /// `mu <= |lambda(G(x*))| <= L` of the target saddle.
    Theoretical { lipschitz: f64, mu: f64 },
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy::Fixed {
            eta: 0.1,
            max_step: Some(0.2),
        }
    }
}

/// Base step length for the current ratio.
pub fn step_size(policy: &StepPolicy, alpha: f64) -> Result<f64> {
    match *policy {
        StepPolicy::Fixed { eta, max_step } => {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::invalid(format!("step size must be positive, got {eta}")));
            }
            if let Some(m) = max_step {
                if !(m > 0.0) {
                    return Err(Error::invalid("max_step must be positive"));
                }
            }
            Ok(eta)
        }
        StepPolicy::Theoretical { lipschitz, mu } => {
            if !(mu > 0.0) || !(lipschitz >= mu) {
                return Err(Error::invalid(format!(
                    "theoretical step needs L >= mu > 0, got L = {lipschitz}, mu = {mu}"
                )));
            }
            let denom = lipschitz + mu * (2.0 * alpha - 1.0);
            if !(denom > 0.0) {
                return Err(Error::invalid("theoretical step is undefined for this alpha"));
            }
            Ok(2.0 / denom)
        }
    }
}

/// `d = ((1 - alpha) s - alpha) g + 2 alpha sum_i <v_i, g> v_i`.
pub fn search_direction(g: &DVector<f64>, basis: &DMatrix<f64>, alpha: f64, s: Direction) -> DVector<f64> {
    let mut d = g * ((1.0 - alpha) * s.sign() - alpha);
    for v in basis.column_iter() {
        d.axpy(2.0 * alpha * v.dot(g), &v, 1.0);
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleConfig {
    /// Target Morse index.
    pub k: usize,
    pub direction: Direction,
    pub alpha: AlphaSchedule,
    pub step: StepPolicy,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub eigen: EigenOptions,
    /// `None` selects `1e-6 max(1, max |lambda|)` at the converged point.
    pub zero_threshold: Option<f64>,
    pub divergence_radius: f64,
    /// Grid used for the stationary-point fingerprint.
    pub fingerprint_tol: f64,
    /// Record the iterate every `j` steps.
    pub sample_every: Option<usize>,
}

impl Default for SaddleConfig {
    fn default() -> Self {
        SaddleConfig {
            k: 1,
            direction: Direction::Up,
            alpha: AlphaSchedule::default(),
            step: StepPolicy::default(),
            grad_tol: 1e-6,
            max_iter: 100_000,
            eigen: EigenOptions::default(),
            zero_threshold: None,
            divergence_radius: 1e6,
            fingerprint_tol: 1e-4,
            sample_every: None,
        }
    }
}

impl SaddleConfig {
    /// Defaults with a step suited to the model's stiffness.
    pub fn for_model(model: &EnergyModel) -> Self {
        let base = SaddleConfig::default();
        match model {
            EnergyModel::Butterfly(_) => SaddleConfig {
                step: StepPolicy::Fixed {
                    eta: 0.03,
                    max_step: Some(0.2),
                },
                ..base
            },
            EnergyModel::Morse(m) => SaddleConfig {
                step: StepPolicy::Fixed {
                    eta: (0.15 / (m.rigidity * m.rigidity)).min(0.05),
                    max_step: Some(0.05),
                },
                max_iter: 300_000,
                ..base
            },
            EnergyModel::Quadratic(q) => {
                let top = q.spectrum().iter().fold(0.0_f64, |a, l| a.max(l.abs()));
                SaddleConfig {
                    step: StepPolicy::Fixed {
                        eta: 1.0 / top.max(1e-12),
                        max_step: None,
                    },
                    ..base
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPoint {
    pub x: DVector<f64>,
    pub energy: f64,
    pub grad_norm: f64,
    pub index: usize,
    pub zero_count: usize,
    /// Full Hessian spectrum, ascending.
    pub eigenvalues: Vec<f64>,
    /// Matching unit eigenvectors as columns.
    pub eigenvectors: DMatrix<f64>,
    pub zero_threshold: f64,
    pub fingerprint: Fingerprint,
}

/// Full spectral classification of a point.
pub fn classify(
    model: &dyn Energy,
    x: &DVector<f64>,
    zero_threshold: Option<f64>,
    fingerprint_tol: f64,
) -> Result<StationaryPoint> {
    let energy = model.energy(x)?;
    let grad_norm = model.gradient(x)?.norm();
    let eig = eigen::symmetric_eigen(&dense_hessian(model, x)?);
    let zeta = zero_threshold.unwrap_or_else(|| eigen::default_zero_threshold(&eig.values));
    let mi = eigen::morse_index(&eig.values, zeta)?;
    Ok(StationaryPoint {
        x: x.clone(),
        energy,
        grad_norm,
        index: mi.index,
        zero_count: mi.zero_count,
        fingerprint: fingerprint(model, x, energy, fingerprint_tol),
        eigenvalues: eig.values,
        eigenvectors: eig.vectors,
        zero_threshold: zeta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Converged,
    MaxIter,
    Diverged,
    WrongIndex,
    /// The iterate returned to the same point after `alpha` settled, with
    /// the gradient still above tolerance (a cycle of the discrete map).
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub point: Option<StationaryPoint>,
    pub status: SearchStatus,
    pub iterations: usize,
    pub final_x: DVector<f64>,
    pub final_alpha: f64,
    pub trajectory: Option<Trajectory>,
}

impl SearchResult {
    pub fn converged(&self) -> bool {
        self.status == SearchStatus::Converged
    }
}

fn validate(model: &dyn Energy, x0: &DVector<f64>, config: &SaddleConfig) -> Result<()> {
    model.check_dim(x0)?;
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("initial point must be finite"));
    }
    if config.k > model.dim() {
        return Err(Error::invalid(format!(
            "target index {} exceeds dimension {}",
            config.k,
            model.dim()
        )));
    }
    if !(config.grad_tol > 0.0) {
        return Err(Error::invalid("gradient tolerance must be positive"));
    }
    config.alpha.validate()?;
    step_size(&config.step, config.alpha.alpha0)?;
    Ok(())
}

/// Iterations between the snapshots compared by the cycle check.
pub const STALL_WINDOW: usize = 1000;

/// Eigenvalue assigned to symmetry zero modes so they never enter the
/// unstable subspace.
pub const ZERO_MODE_SHIFT: f64 = 1e4;

/// The `k` lowest Hessian eigenvectors, skipping the model's symmetry zero
/// modes.
pub fn unstable_basis(
    model: &dyn Energy,
    op: &dyn SymmetricOperator,
    x: &DVector<f64>,
    k: usize,
    opts: &EigenOptions,
    warm: Option<&DMatrix<f64>>,
) -> Result<eigen::UnstableBasis> {
    let null = model.symmetry().zero_mode_basis(x);
    if null.ncols() == 0 {
        return eigen::eigensolve_k(op, k, opts, warm);
    }
    let deflated = DeflatedOperator {
        inner: op,
        null,
        shift: ZERO_MODE_SHIFT,
    };
    eigen::eigensolve_k(&deflated, k, opts, warm)
}

/// Runs the discrete crossover iteration from `x0`.
pub fn run_saddle_search(model: &dyn Energy, x0: &DVector<f64>, config: &SaddleConfig) -> Result<SearchResult> {
    validate(model, x0, config)?;
    let mut x = x0.clone();
    let mut alpha = config.alpha.alpha0;
    let mut warm: Option<DMatrix<f64>> = None;
    let mut t = 0.0;
    let mut samples = config.sample_every.map(|_| Vec::new());
    let mut snapshot: Option<DVector<f64>> = None;

    let finish = |status: SearchStatus,
                  point: Option<StationaryPoint>,
                  iterations: usize,
                  x: DVector<f64>,
                  alpha: f64,
                  samples: Option<Vec<Sample>>| {
        let trajectory = samples.map(|samples| Trajectory {
            samples,
            status: match status {
                SearchStatus::Converged | SearchStatus::WrongIndex => TerminalStatus::Converged,
                SearchStatus::MaxIter | SearchStatus::Stalled => TerminalStatus::TMaxReached,
                SearchStatus::Diverged => TerminalStatus::Diverged,
            },
        });
        SearchResult {
            point,
            status,
            iterations,
            final_x: x,
            final_alpha: alpha,
            trajectory,
        }
    };

    for m in 0..=config.max_iter {
        let g = match model.gradient(&x) {
            Ok(g) => g,
            Err(Error::NumericOverflow(_)) => {
                return Ok(finish(SearchStatus::Diverged, None, m, x, alpha, samples))
            }
            Err(e) => return Err(e),
        };
        let gn = g.norm();
        let done = gn < config.grad_tol;
        if let (Some(buf), Some(every)) = (samples.as_mut(), config.sample_every) {
            if m % every.max(1) == 0 || done || m == config.max_iter {
                buf.push(Sample {
                    step: m,
                    t,
                    alpha,
                    energy: model.energy(&x).unwrap_or(f64::NAN),
                    grad_norm: gn,
                    x: x.iter().copied().collect(),
                });
            }
        }
        if done {
            let point = classify(model, &x, config.zero_threshold, config.fingerprint_tol)?;
            let status = if point.index == config.k {
                SearchStatus::Converged
            } else {
                SearchStatus::WrongIndex
            };
            return Ok(finish(status, Some(point), m, x, alpha, samples));
        }
        if m == config.max_iter {
            break;
        }

        let op = HessianOperator {
            model,
            x: &x,
            dimer: DimerSettings::default(),
        };
        let start = if config.eigen.mode == EigenMode::MatrixFree {
            warm.as_ref()
        } else {
            None
        };
        let basis = unstable_basis(model, &op, &x, config.k, &config.eigen, start)?;
        let d = search_direction(&g, &basis.vectors, alpha, config.direction);
        let mut eta = step_size(&config.step, alpha)?;
        if let StepPolicy::Fixed {
            max_step: Some(cap), ..
        } = config.step
        {
            let len = eta * d.norm();
            if len > cap {
                eta = cap / d.norm();
            }
        }
        x.axpy(eta, &d, 1.0);
        t += eta;
        let settled = config.alpha.next(alpha) == alpha;
        alpha = config.alpha.next(alpha);
        if settled && (m + 1) % STALL_WINDOW == 0 {
            if let Some(prev) = &snapshot {
                if (&x - prev).norm() <= 1e-12 * x.norm().max(1.0) {
                    return Ok(finish(SearchStatus::Stalled, None, m + 1, x, alpha, samples));
                }
            }
            snapshot = Some(x.clone());
        }
        warm = Some(basis.vectors);

        if !x.iter().all(|v| v.is_finite()) || x.norm() > config.divergence_radius || model.fragmented(&x) {
            return Ok(finish(SearchStatus::Diverged, None, m + 1, x, alpha, samples));
        }
    }
    Ok(finish(SearchStatus::MaxIter, None, config.max_iter, x, alpha, samples))
}

/// Per-step contraction of `|x_m - x*|` on a quadratic saddle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub ratios: Vec<f64>,
    pub max_tail_ratio: f64,
    /// `2 min alpha_m - 1`.
    pub epsilon: f64,
    /// `L / mu`.
    pub kappa: f64,
    /// `(kappa + eps) / (kappa + 3 eps)`.
    pub rate_bound: f64,
    /// `(kappa - eps) / (kappa + eps)`, exact for quadratics.
    pub quadratic_bound: f64,
}

/// Iterates the solver on a quadratic `x^T A x / 2` (stationary point at the
/// origin) and reports `r_{m+1} / r_m` over the second half of the run.
///
/// The configuration must use the theoretical step policy and an initial
/// ratio above 1/2; `k` must equal the number of negative eigenvalues.
pub fn measure_contraction(
    model: &EnergyModel,
    config: &SaddleConfig,
    x0: &DVector<f64>,
    iterations: usize,
) -> Result<ContractionReport> {
    let EnergyModel::Quadratic(q) = model else {
        return Err(Error::invalid("contraction measurement needs a quadratic model"));
    };
    validate(q, x0, config)?;
    let StepPolicy::Theoretical { lipschitz, mu } = config.step else {
        return Err(Error::invalid("contraction measurement needs the theoretical step policy"));
    };
    let spectrum = q.spectrum();
    let negatives = spectrum.iter().filter(|&&l| l < 0.0).count();
    if negatives != config.k || spectrum.iter().any(|&l| l == 0.0) {
        return Err(Error::invalid(format!(
            "quadratic has {negatives} negative eigenvalues but k = {}",
            config.k
        )));
    }
    let epsilon = 2.0 * config.alpha.alpha0 - 1.0;
    if !(epsilon > 0.0) {
        return Err(Error::invalid("contraction bound needs alpha0 > 1/2"));
    }

    let mut x = x0.clone();
    let mut alpha = config.alpha.alpha0;
    let mut ratios = Vec::new();
    let mut r = x.norm();
    for _ in 0..iterations {
        if r < 1e-200 {
            break;
        }
        let g = q.gradient(&x)?;
        let op = HessianOperator {
            model: q,
            x: &x,
            dimer: DimerSettings::default(),
        };
        let basis = eigen::eigensolve_k(&op, config.k, &config.eigen, None)?;
        let d = search_direction(&g, &basis.vectors, alpha, config.direction);
        x.axpy(step_size(&config.step, alpha)?, &d, 1.0);
        alpha = config.alpha.next(alpha);
        let r_next = x.norm();
        ratios.push(r_next / r);
        r = r_next;
    }
    let tail = &ratios[ratios.len() / 2..];
    let max_tail_ratio = tail.iter().copied().fold(0.0_f64, f64::max);
    let kappa = lipschitz / mu;
    Ok(ContractionReport {
        max_tail_ratio,
        epsilon,
        kappa,
        rate_bound: (kappa + epsilon) / (kappa + 3.0 * epsilon),
        quadratic_bound: (kappa - epsilon) / (kappa + epsilon),
        ratios,
    })
}
