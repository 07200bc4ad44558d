//! Independent oracles: hand-coded finite differences, brute-force dense
//! eigendecomposition and closed-form values.

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ihisd_core::eigen::{self, EigenMode, EigenOptions};
use ihisd_core::energy::{dense_hessian, Butterfly, Energy, MorseCluster, Quadratic};
use ihisd_core::landscape::random_start;
use ihisd_core::saddle::classify;

fn central_gradient(m: &dyn Energy, x: &DVector<f64>) -> DVector<f64> {
    let h = 1e-5 * x.norm().max(1.0);
    DVector::from_fn(x.len(), |i, _| {
        let mut p = x.clone();
        let mut q = x.clone();
        p[i] += h;
        q[i] -= h;
        (m.energy(&p).unwrap() - m.energy(&q).unwrap()) / (2.0 * h)
    })
}

fn central_hessian(m: &dyn Energy, x: &DVector<f64>) -> DMatrix<f64> {
    let h = 1e-5 * x.norm().max(1.0);
    let mut out = DMatrix::zeros(x.len(), x.len());
    for j in 0..x.len() {
        let mut p = x.clone();
        let mut q = x.clone();
        p[j] += h;
        q[j] -= h;
        let col = (m.gradient(&p).unwrap() - m.gradient(&q).unwrap()) / (2.0 * h);
        out.set_column(j, &col);
    }
    out
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn check_model(m: &dyn Energy, points: &[DVector<f64>]) {
    for x in points {
        let g = m.gradient(x).unwrap();
        let fd = central_gradient(m, x);
        let scale = g.amax().max(1.0);
        assert!((&g - &fd).amax() / scale <= 1e-6, "gradient at {x}: {g} vs {fd}");
        let h = dense_hessian(m, x).unwrap();
        let fdh = central_hessian(m, x);
        let scale = h.amax().max(1.0);
        assert!((&h - &fdh).amax() / scale <= 1e-5, "Hessian at {x}");
    }
}

#[test]
fn analytic_derivatives_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let box_points = |rng: &mut ChaCha8Rng, n: usize| -> Vec<DVector<f64>> {
        (0..100).map(|_| DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0))).collect()
    };
    for c in [0.5, 1.0, 1.5, 2.0] {
        check_model(&Butterfly::new(c), &box_points(&mut rng, 2));
    }
    let q = Quadratic::diagonal(&[-1.0, 0.5, 3.0, 7.0]).unwrap();
    check_model(&q, &box_points(&mut rng, 4));
    for (n, a) in [(4, 1.5), (4, 6.0), (6, 3.0)] {
        let m = MorseCluster::new(n, a).unwrap();
        let pts: Vec<_> = (0..100).map(|s| random_start(&m, s)).collect();
        check_model(&m, &pts);
    }
}

#[test]
fn eigensolver_matches_dense_decomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for mode in [EigenMode::Dense, EigenMode::MatrixFree] {
        let opts = EigenOptions {
            mode,
            tol: 1e-10,
            max_iter: Some(500),
        };
        for _ in 0..1000 {
            let n = rng.random_range(1..=8);
            let k = rng.random_range(1..=n);
            let a: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let g = (&a + a.transpose()) * 0.5;
            let oracle = g.clone().symmetric_eigen();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| oracle.eigenvalues[i].total_cmp(&oracle.eigenvalues[j]));
            let basis = eigen::eigensolve_k(&g, k, &opts, None).unwrap();
            for i in 0..k {
                assert!((basis.values[i] - oracle.eigenvalues[order[i]]).abs() <= 1e-8);
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
                // Sine of the largest principal angle.
                let resid = &basis.vectors - &reference * (reference.transpose() * &basis.vectors);
                let sine = resid.singular_values().max();
                assert!(sine <= 1e-6, "principal angle {sine} (gap {gap})");
            }
        }
    }
}

#[test]
fn eigenvector_sign_convention() {
    let g = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    let e = eigen::symmetric_eigen(&g);
    assert_abs_diff_eq!(e.values[0], 1.0, epsilon = 1e-14);
    assert_abs_diff_eq!(e.values[1], 3.0, epsilon = 1e-14);
    for v in e.vectors.column_iter() {
        let i = v.iamax();
        assert!(v[i] > 0.0);
    }
}

#[test]
fn butterfly_closed_form_values() {
    for c in [0.5, 1.0, 1.5, 2.0] {
        let m = Butterfly::new(c);
        let o = DVector::zeros(2);
        assert_eq!(m.energy(&o).unwrap(), 0.0);
        assert_eq!(m.gradient(&o).unwrap(), DVector::zeros(2));
    }
    // (1.5, -1) is stationary for c = 1 with E = -33/16.
    let m = Butterfly::new(1.0);
    let x = DVector::from_column_slice(&[1.5, -1.0]);
    assert!(m.gradient(&x).unwrap().norm() < 1e-14);
    assert_abs_diff_eq!(m.energy(&x).unwrap(), -33.0 / 16.0, epsilon = 1e-14);
    // The maximum of c = 2 sits at (0, 1/2): y (4y^2 - 6y + 2) = 0.
    let m = Butterfly::new(2.0);
    let p = classify(&m, &DVector::from_column_slice(&[0.0, 0.5]), None, 1e-4).unwrap();
    assert!(p.grad_norm < 1e-15);
    assert_eq!(p.index, 2);
}

#[test]
fn morse_pair_and_square() {
    let m = MorseCluster::new(4, 1.5).unwrap();
    let (v, dv, ddv) = m.pair(1.0);
    assert_eq!((v, dv), (-1.0, 0.0));
    assert_abs_diff_eq!(ddv, 2.0 * 1.5 * 1.5, epsilon = 1e-14);

    // Square at a = 1.5 is the minimum, with three zero modes.
    let x = m.square_pattern().unwrap();
    let p = classify(&m, &x, None, 1e-4).unwrap();
    assert!(p.grad_norm < 1e-10);
    assert_eq!((p.index, p.zero_count), (0, 3));
    // Side solves 4 V'(d) + 2 sqrt2 V'(sqrt2 d) = 0.
    let d = (x[2] - x[0]).abs();
    let s2 = std::f64::consts::SQRT_2;
    assert!((4.0 * m.pair(d).1 + 2.0 * s2 * m.pair(s2 * d).1).abs() < 1e-10);
    assert!(rel(m.energy(&x).unwrap(), m.square_family_energy(d)) < 1e-14);

    // At a = 6 the square has lost stability along one shear mode.
    let m6 = MorseCluster::new(4, 6.0).unwrap();
    let p6 = classify(&m6, &m6.square_pattern().unwrap(), None, 1e-4).unwrap();
    assert_eq!((p6.index, p6.zero_count), (1, 3));
}

#[test]
fn coincident_particles_are_a_domain_error() {
    let m = MorseCluster::new(2, 1.0).unwrap();
    let x = DVector::from_column_slice(&[0.5, 0.5, 0.5, 0.5]);
    assert!(m.energy(&x).is_err());
    assert!(m.gradient(&x).is_err());
}
