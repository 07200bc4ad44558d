//! Continuous-time dynamics integrated with forward Euler: plain gradient
//! flow and the crossover saddle dynamics on `(x, v_1..v_k, alpha)`.
//!
//! The crossover field is
//!
//! ```text
//! x'     = beta ((1 - alpha) s - alpha) g + 2 beta alpha sum_i <v_i, g> v_i
//! v_i'   = -gamma (I - v_i v_i^T - 2 sum_{j<i} v_j v_j^T) G v_i
//! alpha' = c alpha (1 - alpha)
//! ```
//!
//! With `alpha = 1` the `x` equation is `-beta R g`, the HiSD field; with
//! `k = 1` that is gentlest ascent dynamics.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::eigen::{self, EigenOptions, HessianOperator};
use crate::energy::{hessian_vector, DimerSettings, Energy};
use crate::error::{Error, Result};

/// Upper clamp for the mixing ratio; 1 itself is an absorbing fixed point.
pub const ALPHA_MAX: f64 = 1.0 - 1e-15;

/// Search direction `s`: `Up` climbs towards higher index, `Down` descends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Up => 1.0,
            Direction::Down => -1.0,
        }
    }

    pub fn as_int(self) -> i32 {
        match self {
            Direction::Up => 1,
            Direction::Down => -1,
        }
    }

    pub fn from_int(s: i32) -> Result<Self> {
        match s {
            1 => Ok(Direction::Up),
            -1 => Ok(Direction::Down),
            _ => Err(Error::invalid(format!("direction must be +1 or -1, got {s}"))),
        }
    }
}

/// Rate function `eps(alpha) = c alpha (1 - alpha)`.
pub fn rate(c: f64, alpha: f64) -> f64 {
    c * alpha * (1.0 - alpha)
}

/// Exact logistic solution of `alpha' = c alpha (1 - alpha)`.
pub fn alpha_closed_form(alpha0: f64, c: f64, t: f64) -> Result<f64> {
    if !(alpha0 > 0.0 && alpha0 < 1.0) {
        return Err(Error::invalid("alpha0 must lie in (0, 1)"));
    }
    Ok(1.0 / (1.0 + (1.0 - alpha0) / alpha0 * (-c * t).exp()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    pub x: DVector<f64>,
    /// Orthonormal columns `v_1..v_k`.
    pub basis: DMatrix<f64>,
    pub alpha: f64,
    pub t: f64,
}

impl SearchState {
    /// State at `x` with the basis initialized to the `k` lowest Hessian
    /// eigenvectors.
    pub fn from_hessian(model: &dyn Energy, x: DVector<f64>, k: usize, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid("alpha must lie in [0, 1]"));
        }
        let op = HessianOperator {
            model,
            x: &x,
            dimer: DimerSettings::default(),
        };
        let basis = eigen::eigensolve_k(&op, k, &EigenOptions::default(), None)?.vectors;
        Ok(SearchState {
            x,
            basis,
            alpha,
            t: 0.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Time scale of the `x` equation.
    pub beta: f64,
    /// Time scale of the `v` equations.
    pub gamma: f64,
    /// Rate constant in `eps(alpha) = c alpha (1 - alpha)`.
    pub c: f64,
    pub direction: Direction,
    /// Euler step.
    pub h: f64,
    pub t_max: f64,
    pub grad_tol: f64,
    /// `|x|` beyond which a trajectory is declared diverged.
    pub divergence_radius: f64,
    /// Saturation of `|x'|` for the crossover dynamics; gradient flow
    /// ignores it.
    pub max_speed: Option<f64>,
    /// Record every `sample_every`-th step (first and last always kept).
    pub sample_every: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            beta: 1.0,
            gamma: 1.0,
            c: 2.0,
            direction: Direction::Up,
            h: 1e-2,
            t_max: 200.0,
            grad_tol: 1e-6,
            divergence_radius: 1e6,
            max_speed: Some(0.5),
            sample_every: 1,
        }
    }
}

impl FlowConfig {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("h", self.h),
            ("t_max", self.t_max),
            ("grad_tol", self.grad_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.c >= 0.0) {
            return Err(Error::invalid("rate constant c must be non-negative"));
        }
        if let Some(s) = self.max_speed {
            if !(s > 0.0) {
                return Err(Error::invalid("max_speed must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalStatus {
    Converged,
    TMaxReached,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub step: usize,
    pub t: f64,
    pub alpha: f64,
    pub energy: f64,
    pub grad_norm: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub status: TerminalStatus,
}

/// 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

impl Trajectory {
    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    /// CSV with header `step,t,alpha,energy,grad_norm,x0,...,x{n-1}`.
    pub fn to_csv(&self) -> String {
        let n = self.samples.first().map_or(0, |s| s.x.len());
        let mut out = String::from("step,t,alpha,energy,grad_norm");
        for i in 0..n {
            let _ = write!(out, ",x{i}");
        }
        out.push('\n');
        for s in &self.samples {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                s.step,
                fmt_float(s.t),
                fmt_float(s.alpha),
                fmt_float(s.energy),
                fmt_float(s.grad_norm)
            );
            for v in &s.x {
                out.push(',');
                out.push_str(&fmt_float(*v));
            }
            out.push('\n');
        }
        out
    }
}

fn sample(model: &dyn Energy, step: usize, t: f64, alpha: f64, x: &DVector<f64>, gn: f64) -> Sample {
    Sample {
        step,
        t,
        alpha,
        energy: model.energy(x).unwrap_or(f64::NAN),
        grad_norm: gn,
        x: x.iter().copied().collect(),
    }
}

fn escaped(x: &DVector<f64>, radius: f64) -> bool {
    !x.iter().all(|v| v.is_finite()) || x.norm() > radius
}

fn overflowed(r: &Result<DVector<f64>>) -> bool {
    matches!(r, Err(Error::NumericOverflow(_)))
}

/// Forward-Euler gradient flow: `x' = -grad E` for `Down`, `x' = +grad E` for
/// `Up`. Descent halves `h` whenever a step would raise the energy, so the
/// recorded energies are non-increasing.
pub fn gradient_flow(
    model: &dyn Energy,
    x0: &DVector<f64>,
    config: &FlowConfig,
    direction: Direction,
) -> Result<Trajectory> {
    config.validate()?;
    model.check_dim(x0)?;
    let every = config.sample_every.max(1);
    let mut x = x0.clone();
    let mut h = config.h;
    let mut t = 0.0;
    let mut step = 0;
    let mut samples = Vec::new();
    let mut energy = model.energy(&x)?;

    loop {
        let g = model.gradient(&x)?;
        let gn = g.norm();
        let mut status = None;
        if gn < config.grad_tol {
            status = Some(TerminalStatus::Converged);
        } else if t >= config.t_max || h < 1e-300 {
            status = Some(TerminalStatus::TMaxReached);
        }
        if step % every == 0 || status.is_some() {
            samples.push(sample(model, step, t, 0.0, &x, gn));
        }
        if let Some(status) = status {
            return Ok(Trajectory { samples, status });
        }

        let trial = &x + &g * (direction.sign() * h);
        if escaped(&trial, config.divergence_radius) {
            samples.push(sample(model, step + 1, t + h, 0.0, &trial, f64::NAN));
            return Ok(Trajectory {
                samples,
                status: TerminalStatus::Diverged,
            });
        }
        if direction == Direction::Down {
            match model.energy(&trial) {
                Ok(e) if e <= energy => energy = e,
                _ => {
                    h *= 0.5;
                    continue;
                }
            }
        } else if overflowed(&model.gradient(&trial)) {
            samples.push(sample(model, step + 1, t + h, 0.0, &trial, f64::NAN));
            return Ok(Trajectory {
                samples,
                status: TerminalStatus::Diverged,
            });
        }
        x = trial;
        t += h;
        step += 1;
    }
}

/// Time derivative of the crossover dynamics at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldValue {
    pub dx: DVector<f64>,
    pub dv: DMatrix<f64>,
    pub dalpha: f64,
}

pub fn ihisd_field(model: &dyn Energy, state: &SearchState, config: &FlowConfig) -> Result<FieldValue> {
    model.check_dim(&state.x)?;
    let g = model.gradient(&state.x)?;
    let alpha = state.alpha;
    let s = config.direction.sign();
    let v = &state.basis;
    let k = v.ncols();

    let mut dx = &g * (config.beta * ((1.0 - alpha) * s - alpha));
    for i in 0..k {
        let vi = v.column(i);
        dx.axpy(2.0 * config.beta * alpha * vi.dot(&g), &vi, 1.0);
    }

    let dimer = DimerSettings::default();
    let mut dv = DMatrix::zeros(v.nrows(), k);
    for i in 0..k {
        let vi = v.column(i).into_owned();
        let gv = hessian_vector(model, &state.x, &vi, &dimer)?;
        let mut proj = gv.clone();
        proj.axpy(-vi.dot(&gv), &vi, 1.0);
        for j in 0..i {
            let vj = v.column(j);
            proj.axpy(-2.0 * vj.dot(&gv), &vj, 1.0);
        }
        dv.set_column(i, &(proj * -config.gamma));
    }

    Ok(FieldValue {
        dx,
        dv,
        dalpha: rate(config.c, alpha),
    })
}

/// Forward Euler on `(x, V, alpha)` with Gram–Schmidt retraction of `V`
/// after every step. Stops when `|grad E| < grad_tol` with `alpha > 0.99`,
/// when `t` exceeds `t_max`, or when `x` escapes the divergence radius.
pub fn integrate_ihisd(model: &dyn Energy, state0: &SearchState, config: &FlowConfig) -> Result<Trajectory> {
    config.validate()?;
    model.check_dim(&state0.x)?;
    if state0.basis.nrows() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: state0.basis.nrows(),
        });
    }
    if !(0.0..=1.0).contains(&state0.alpha) {
        return Err(Error::invalid("alpha must lie in [0, 1]"));
    }
    let alpha_floor = state0.alpha;
    let every = config.sample_every.max(1);
    let mut state = state0.clone();
    state.basis = eigen::orthonormalize(&state.basis)?;
    let mut step = 0;
    let mut samples = Vec::new();

    loop {
        let gn = model.gradient(&state.x)?.norm();
        let mut status = None;
        if gn < config.grad_tol && state.alpha > 0.99 {
            status = Some(TerminalStatus::Converged);
        } else if state.t >= config.t_max {
            status = Some(TerminalStatus::TMaxReached);
        }
        if step % every == 0 || status.is_some() {
            samples.push(sample(model, step, state.t, state.alpha, &state.x, gn));
        }
        if let Some(status) = status {
            return Ok(Trajectory { samples, status });
        }

        let mut field = ihisd_field(model, &state, config)?;
        if let Some(vmax) = config.max_speed {
            let speed = field.dx.norm();
            if speed > vmax {
                field.dx *= vmax / speed;
            }
        }
        state.x.axpy(config.h, &field.dx, 1.0);
        state.basis = eigen::orthonormalize(&(&state.basis + field.dv * config.h))?;
        state.alpha = (state.alpha + config.h * field.dalpha)
            .min(ALPHA_MAX)
            .max(alpha_floor);
        state.t += config.h;
        step += 1;

        if escaped(&state.x, config.divergence_radius) || overflowed(&model.gradient(&state.x)) {
            samples.push(sample(model, step, state.t, state.alpha, &state.x, f64::NAN));
            return Ok(Trajectory {
                samples,
                status: TerminalStatus::Diverged,
            });
        }
    }
}
