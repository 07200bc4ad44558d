//! Symmetric eigensolvers for the `k` smallest eigenpairs, Gram–Schmidt
//! retraction onto orthonormal frames, Morse-index classification and the
//! reflection-manifold helpers `R = I - 2 V V^T`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{hessian_vector, DimerSettings, Energy};
use crate::error::{Error, Result};

/// Eigenvalue gaps below this mark a basis as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-10;

/// Orthonormal frame `v_1..v_k` (columns) with ascending Rayleigh quotients.
#[derive(Debug, Clone, PartialEq)]
pub struct UnstableBasis {
    pub vectors: DMatrix<f64>,
    pub values: Vec<f64>,
    /// Set when two of the returned eigenvalues, or the last returned and the
    /// next one, are closer than [`DEGENERACY_GAP`].
    pub degenerate: bool,
}

impl UnstableBasis {
    pub fn empty(n: usize) -> Self {
        UnstableBasis {
            vectors: DMatrix::zeros(n, 0),
            values: Vec::new(),
            degenerate: false,
        }
    }

    pub fn k(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn reflection(&self) -> DMatrix<f64> {
        reflection(&self.vectors)
    }

    /// `max |<v_i, v_j> - delta_ij|`.
    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.vectors)
    }
}

pub fn orthonormality_error(v: &DMatrix<f64>) -> f64 {
    let k = v.ncols();
    if k == 0 {
        return 0.0;
    }
    (v.transpose() * v - DMatrix::identity(k, k)).amax()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EigenMode {
    Dense,
    MatrixFree,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    pub mode: EigenMode,
    /// Residual tolerance, relative to `max(1, |lambda|)`.
    pub tol: f64,
    /// `None` selects `10 n`.
    pub max_iter: Option<usize>,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            mode: EigenMode::Dense,
            tol: 1e-8,
            max_iter: None,
        }
    }
}

/// A symmetric linear map accessed through products.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>>;
    /// Explicit matrix, if cheaply available.
    fn dense(&self) -> Option<Result<DMatrix<f64>>> {
        None
    }
}

impl SymmetricOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.ncols(),
                actual: v.len(),
            });
        }
        Ok(self * v)
    }
    fn dense(&self) -> Option<Result<DMatrix<f64>>> {
        Some(Ok(self.clone()))
    }
}

/// Hessian of an energy at a fixed point.
pub struct HessianOperator<'a> {
    pub model: &'a dyn Energy,
    pub x: &'a DVector<f64>,
    pub dimer: DimerSettings,
}

impl SymmetricOperator for HessianOperator<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }
    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.norm() == 0.0 {
            return Ok(DVector::zeros(v.len()));
        }
        hessian_vector(self.model, self.x, v, &self.dimer)
    }
    fn dense(&self) -> Option<Result<DMatrix<f64>>> {
        self.model
            .hessian(self.x)
            .map(|h| h.map(|h| (&h + h.transpose()) * 0.5))
    }
}

/// Full eigendecomposition with ascending values; eigenvectors are the
/// matching columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// Flips `v` so its largest-magnitude component is positive (first such
/// component on ties).
pub fn normalize_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() * (1.0 + 1e-12) {
            best = i;
        }
    }
    if v.len() > 0 && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn symmetric_eigen(matrix: &DMatrix<f64>) -> SymmetricEigen {
    let n = matrix.nrows();
    let mut a = (matrix + matrix.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-17 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let mut c = v.column(i).into_owned();
        normalize_sign(&mut c);
        vectors.set_column(col, &c);
    }
    SymmetricEigen { values, vectors }
}

fn assemble(op: &dyn SymmetricOperator) -> Result<DMatrix<f64>> {
    if let Some(m) = op.dense() {
        return m;
    }
    let n = op.dim();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        m.set_column(j, &op.apply(&e)?);
    }
    Ok((&m + m.transpose()) * 0.5)
}

fn residual_norms(
    op: &dyn SymmetricOperator,
    vectors: &DMatrix<f64>,
    values: &[f64],
) -> Result<Vec<f64>> {
    (0..vectors.ncols())
        .map(|i| {
            let v = vectors.column(i).into_owned();
            let gv = op.apply(&v)?;
            Ok((gv - v * values[i]).norm() / values[i].abs().max(1.0))
        })
        .collect()
}

fn has_small_gap(values: &[f64]) -> bool {
    values.windows(2).any(|w| (w[1] - w[0]).abs() < DEGENERACY_GAP)
}

/// The `k` smallest eigenpairs of a symmetric operator.
///
/// `warm_start` seeds the matrix-free iteration (its columns need not be
/// orthonormal); dense mode ignores it.
pub fn eigensolve_k(
    op: &dyn SymmetricOperator,
    k: usize,
    opts: &EigenOptions,
    warm_start: Option<&DMatrix<f64>>,
) -> Result<UnstableBasis> {
    let n = op.dim();
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds dimension {n}")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("eigensolver tolerance must be positive"));
    }
    if k == 0 {
        return Ok(UnstableBasis::empty(n));
    }
    match opts.mode {
        EigenMode::Dense => {
            let m = assemble(op)?;
            let eig = symmetric_eigen(&m);
            let vectors = eig.vectors.columns(0, k).into_owned();
            let values = eig.values[..k].to_vec();
            let worst = residual_norms(op, &vectors, &values)?
                .into_iter()
                .fold(0.0_f64, f64::max);
            if !(worst <= opts.tol) {
                return Err(Error::ConvergenceFailure { residual: worst });
            }
            let probe = &eig.values[..(k + 1).min(n)];
            Ok(UnstableBasis {
                vectors,
                values,
                degenerate: has_small_gap(probe),
            })
        }
        EigenMode::MatrixFree => block_rayleigh_ritz(op, k, opts, warm_start),
    }
}

/// `P A P + shift Q Q^T` with `P = I - Q Q^T`: moves the span of the
/// orthonormal columns `Q` to eigenvalue `shift`, out of the low end of the
/// spectrum.
pub struct DeflatedOperator<'a> {
    pub inner: &'a dyn SymmetricOperator,
    pub null: DMatrix<f64>,
    pub shift: f64,
}

impl DeflatedOperator<'_> {
    fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        v - &self.null * (self.null.transpose() * v)
    }
}

impl SymmetricOperator for DeflatedOperator<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let pv = self.project(v);
        let mut out = self.project(&self.inner.apply(&pv)?);
        out += &self.null * (self.null.transpose() * v) * self.shift;
        Ok(out)
    }
    fn dense(&self) -> Option<Result<DMatrix<f64>>> {
        self.inner.dense().map(|m| {
            m.map(|m| {
                let n = m.nrows();
                let qqt = &self.null * self.null.transpose();
                let p = DMatrix::identity(n, n) - &qqt;
                let d = &p * m * &p + qqt * self.shift;
                (&d + d.transpose()) * 0.5
            })
        })
    }
}

/// Locally optimal block Rayleigh-quotient minimization (unpreconditioned
/// LOBPCG) using only operator products.
fn block_rayleigh_ritz(
    op: &dyn SymmetricOperator,
    k: usize,
    opts: &EigenOptions,
    warm_start: Option<&DMatrix<f64>>,
) -> Result<UnstableBasis> {
    let n = op.dim();
    let block = (k + 2).min(n);
    let max_iter = opts.max_iter.unwrap_or(10 * n).max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut start = DMatrix::zeros(n, block);
    let given = warm_start.map_or(0, |w| w.ncols().min(block));
    if let Some(w) = warm_start {
        if w.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: w.nrows(),
            });
        }
        for j in 0..given {
            start.set_column(j, &w.column(j));
        }
    }
    for j in given..block {
        start.set_column(j, &DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5));
    }
    let mut x = orthonormal_span(&start, 1e-10);
    while x.ncols() < block {
        let extra = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        let grown = DMatrix::from_columns(
            &x.column_iter()
                .map(|c| c.into_owned())
                .chain(std::iter::once(extra))
                .collect::<Vec<_>>(),
        );
        x = orthonormal_span(&grown, 1e-10);
    }

    let (mut values, ritz) = rayleigh_ritz(op, &x, block)?;
    x = ritz;
    let mut p: Option<DMatrix<f64>> = None;
    let mut best = f64::INFINITY;

    for _ in 0..max_iter {
        let ax = apply_block(op, &x)?;
        let theta = DMatrix::from_diagonal(&DVector::from_column_slice(&values));
        let r = &ax - &x * theta;
        let res: Vec<f64> = (0..block)
            .map(|i| r.column(i).norm() / values[i].abs().max(1.0))
            .collect();
        let worst = res[..k].iter().copied().fold(0.0_f64, f64::max);
        best = best.min(worst);
        if worst <= opts.tol {
            let mut vectors = x.columns(0, k).into_owned();
            for mut c in vectors.column_iter_mut() {
                let mut owned = c.clone_owned();
                normalize_sign(&mut owned);
                c.copy_from(&owned);
            }
            let probe = &values[..(k + 1).min(block)];
            return Ok(UnstableBasis {
                vectors,
                values: values[..k].to_vec(),
                degenerate: has_small_gap(probe),
            });
        }

        let mut cols: Vec<DVector<f64>> = x.column_iter().map(|c| c.into_owned()).collect();
        cols.extend(r.column_iter().map(|c| c.into_owned()));
        if let Some(p) = &p {
            cols.extend(p.column_iter().map(|c| c.into_owned()));
        }
        let s = orthonormal_span(&DMatrix::from_columns(&cols), 1e-10);
        if s.ncols() <= block {
            // Search space collapsed onto an invariant subspace.
            let (v, rv) = rayleigh_ritz(op, &s, block.min(s.ncols()))?;
            values = v;
            x = rv;
            p = None;
            if x.ncols() < block {
                break;
            }
            continue;
        }
        let (v, new_x) = rayleigh_ritz(op, &s, block)?;
        // Direction: the part of the update outside span(X).
        let coeff = x.transpose() * &new_x;
        p = Some(&new_x - &x * coeff);
        values = v;
        x = new_x;
    }
    Err(Error::ConvergenceFailure { residual: best })
}

fn apply_block(op: &dyn SymmetricOperator, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cols = x
        .column_iter()
        .map(|c| op.apply(&c.into_owned()))
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_columns(&cols))
}

/// Ritz pairs of `op` on the orthonormal basis `s`, lowest `count` kept.
fn rayleigh_ritz(
    op: &dyn SymmetricOperator,
    s: &DMatrix<f64>,
    count: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let as_ = apply_block(op, s)?;
    let small = s.transpose() * as_;
    let eig = symmetric_eigen(&small);
    let c = eig.vectors.columns(0, count).into_owned();
    Ok((eig.values[..count].to_vec(), s * c))
}

/// Orthonormal basis for the column span, silently dropping columns whose
/// remainder after projection falls below `drop_tol` times their norm.
fn orthonormal_span(m: &DMatrix<f64>, drop_tol: f64) -> DMatrix<f64> {
    let mut kept: Vec<DVector<f64>> = Vec::new();
    for c in m.column_iter() {
        let mut v = c.into_owned();
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for q in &kept {
                let d = q.dot(&v);
                v.axpy(-d, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > drop_tol * norm0 {
            kept.push(v / norm);
        }
    }
    if kept.is_empty() {
        DMatrix::zeros(m.nrows(), 0)
    } else {
        DMatrix::from_columns(&kept)
    }
}

/// Modified Gram–Schmidt (two passes) on the columns of `vectors`.
pub fn orthonormalize(vectors: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = vectors.clone();
    for j in 0..out.ncols() {
        let mut v = out.column(j).into_owned();
        for pass in 0..2 {
            for i in 0..j {
                let q = out.column(i);
                let d = q.dot(&v);
                v.axpy(-d, &q, 1.0);
            }
            if pass == 0 && v.norm() <= 1e-12 {
                return Err(Error::DegenerateBasis { index: j });
            }
        }
        let norm = v.norm();
        out.set_column(j, &(v / norm));
    }
    Ok(out)
}

/// Partition of a spectrum by a zero threshold `zeta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MorseIndex {
    /// Count of eigenvalues `< -zeta`.
    pub index: usize,
    /// Count of eigenvalues with `|lambda| <= zeta`.
    pub zero_count: usize,
    pub positive: usize,
}

pub fn morse_index(eigenvalues: &[f64], zeta: f64) -> Result<MorseIndex> {
    if !(zeta >= 0.0) {
        return Err(Error::invalid("zero threshold must be non-negative"));
    }
    let index = eigenvalues.iter().filter(|&&l| l < -zeta).count();
    let zero_count = eigenvalues.iter().filter(|&&l| l.abs() <= zeta).count();
    Ok(MorseIndex {
        index,
        zero_count,
        positive: eigenvalues.len() - index - zero_count,
    })
}

/// `1e-6 * max(1, max |lambda|)`.
pub fn default_zero_threshold(eigenvalues: &[f64]) -> f64 {
    1e-6 * eigenvalues.iter().fold(1.0_f64, |m, l| m.max(l.abs()))
}

/// `R = I - 2 sum v_i v_i^T` for the columns of `v`.
pub fn reflection(v: &DMatrix<f64>) -> DMatrix<f64> {
    let n = v.nrows();
    DMatrix::identity(n, n) - v * v.transpose() * 2.0
}

/// Squared Frobenius distance `|R - G|_F^2`.
pub fn reflection_distance(v: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<f64> {
    let n = v.nrows();
    if g.nrows() != n || g.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: g.nrows(),
        });
    }
    Ok((reflection(v) - g).norm_squared())
}

/// Orthogonal projection of a symmetric `a` onto the tangent space of the
/// reflection manifold at `r`: `(A - R A R) / 2`.
pub fn tangent_projection(r: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    (a - r * a * r) * 0.5
}

/// Moves the frame `v` a distance `step` along the tangent direction
/// `tangent` at `R = I - 2 V V^T`, staying on the manifold: `V' = Q V` with
/// the Cayley rotation generated by `W = T R / 2`, so that `dR'/dstep = T`
/// at `step = 0`.
pub fn move_on_manifold(v: &DMatrix<f64>, tangent: &DMatrix<f64>, step: f64) -> Result<DMatrix<f64>> {
    let n = v.nrows();
    let r = reflection(v);
    let w = tangent * &r * 0.5;
    let id = DMatrix::<f64>::identity(n, n);
    let lhs = &id - &w * (step / 2.0);
    let rhs = &id + &w * (step / 2.0);
    let q = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NumericDomain("Cayley transform is singular".into()))?;
    Ok(q * v)
}
