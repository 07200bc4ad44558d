//! Property tests for the invariants of the energy models, eigensolver,
//! crossover dynamics and discrete search.

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use ihisd_core::dynamics::{alpha_closed_form, integrate_ihisd, rate, FlowConfig, SearchState};
use ihisd_core::eigen::{self, EigenMode, EigenOptions};
use ihisd_core::energy::{dense_hessian, Butterfly, Energy, EnergyModel, MorseCluster, Quadratic};
use ihisd_core::landscape::{fingerprint, random_start};
use ihisd_core::saddle::{
    run_saddle_search, search_direction, AlphaSchedule, SaddleConfig, SearchStatus, StepPolicy,
};
use ihisd_core::Direction;

fn symmetric(entries: &[f64], n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_column_slice(n, n, &entries[..n * n]);
    (&a + a.transpose()) * 0.5
}

fn matrix_strategy() -> impl Strategy<Value = (DMatrix<f64>, usize)> {
    (1usize..=8)
        .prop_flat_map(|n| (Just(n), prop::collection::vec(-1.0..1.0f64, n * n), 1..=n))
        .prop_map(|(n, e, k)| (symmetric(&e, n), k))
}

fn rotate(x: &DVector<f64>, theta: f64, shift: (f64, f64)) -> DVector<f64> {
    let (c, s) = (theta.cos(), theta.sin());
    let mut out = x.clone();
    for i in 0..x.len() / 2 {
        let (px, py) = (x[2 * i], x[2 * i + 1]);
        out[2 * i] = c * px - s * py + shift.0;
        out[2 * i + 1] = s * px + c * py + shift.1;
    }
    out
}

fn options(mode: EigenMode) -> EigenOptions {
    EigenOptions {
        mode,
        tol: 1e-10,
        max_iter: Some(500),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn morse_rigid_motion_invariance(
        seed in 0u64..1000,
        a in 1.0..6.0f64,
        n in 3usize..=6,
        theta in -3.2..3.2f64,
        tx in -5.0..5.0f64,
        ty in -5.0..5.0f64,
    ) {
        let m = MorseCluster::new(n, a).unwrap();
        let x = random_start(&m, seed);
        let y = rotate(&x, theta, (tx, ty));
        let (ex, ey) = (m.energy(&x).unwrap(), m.energy(&y).unwrap());
        prop_assert!((ex - ey).abs() <= 1e-10 * ex.abs().max(1.0));
        let g = m.gradient(&x).unwrap();
        let sx: f64 = (0..n).map(|i| g[2 * i]).sum();
        let sy: f64 = (0..n).map(|i| g[2 * i + 1]).sum();
        prop_assert!(sx.abs() <= 1e-10 && sy.abs() <= 1e-10, "{sx} {sy}");
    }

    #[test]
    fn cluster_fingerprint_ignores_rigid_motion(
        seed in 0u64..1000,
        theta in -3.2..3.2f64,
        tx in -5.0..5.0f64,
        ty in -5.0..5.0f64,
    ) {
        let m = MorseCluster::new(4, 3.0).unwrap();
        let x = random_start(&m, seed);
        let y = rotate(&x, theta, (tx, ty));
        let fx = fingerprint(&m, &x, m.energy(&x).unwrap(), 1e-4);
        let fy = fingerprint(&m, &y, m.energy(&y).unwrap(), 1e-4);
        prop_assert!(fx.matches(&fy));
    }

    #[test]
    fn butterfly_origin_is_index_one(c in -5.0..5.0f64) {
        let m = Butterfly::new(c);
        let h = dense_hessian(&m, &DVector::zeros(2)).unwrap();
        prop_assert_eq!(h, DMatrix::from_row_slice(2, 2, &[-4.0, 0.0, 0.0, 2.0]));
    }

    #[test]
    fn eigensolver_basis_properties((g, k) in matrix_strategy(), dense in any::<bool>()) {
        let mode = if dense { EigenMode::Dense } else { EigenMode::MatrixFree };
        let basis = eigen::eigensolve_k(&g, k, &options(mode), None).unwrap();
        prop_assert!(basis.orthonormality_error() <= 1e-8);

        let mut oracle: Vec<f64> = g.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        oracle.sort_by(f64::total_cmp);
        let lowest: f64 = oracle[..k].iter().sum();
        let rayleigh = (basis.vectors.transpose() * &g * &basis.vectors).trace();
        prop_assert!((rayleigh - lowest).abs() <= 1e-8, "{rayleigh} vs {lowest}");

        let r = basis.reflection();
        let n = g.nrows();
        prop_assert!((&r * &r - DMatrix::identity(n, n)).amax() <= 1e-10);
        prop_assert!((&r - r.transpose()).amax() <= 1e-12);
        prop_assert!((r.trace() - (n as f64 - 2.0 * k as f64)).abs() <= 1e-10);
        // V spans an invariant subspace, so R commutes with G.
        prop_assert!((&r * &g - &g * &r).norm() <= 1e-8);
    }

    #[test]
    fn alpha_schedule_is_monotone_and_bounded(
        alpha0 in 1e-12..1.0f64,
        c in 0.0..2.0f64,
        steps in 1usize..200,
    ) {
        let s = AlphaSchedule { alpha0, c, step: 1.0 };
        let mut a = alpha0;
        for _ in 0..steps {
            let next = s.next(a);
            prop_assert!(next >= a && next >= alpha0 && next < 1.0);
            a = next;
        }
    }

    #[test]
    fn search_direction_reductions(
        e in prop::collection::vec(-1.0..1.0f64, 16),
        gv in prop::collection::vec(-2.0..2.0f64, 4),
        k in 0usize..=4,
        up in any::<bool>(),
    ) {
        let g = DVector::from_vec(gv);
        let basis = eigen::eigensolve_k(&symmetric(&e, 4), k, &options(EigenMode::Dense), None).unwrap();
        let s = if up { Direction::Up } else { Direction::Down };
        // alpha = 0 is plain gradient flow in direction s.
        let d0 = search_direction(&g, &basis.vectors, 0.0, s);
        prop_assert!((d0 - &g * s.sign()).amax() <= 1e-15);
        // alpha = 1 is the reflected gradient -R g.
        let d1 = search_direction(&g, &basis.vectors, 1.0, s);
        prop_assert!((d1 + basis.reflection() * &g).amax() <= 1e-12);
    }

    #[test]
    fn euler_alpha_tracks_closed_form(alpha0 in 1e-6..0.9f64, c in 0.5..2.0f64) {
        let h = 1e-3;
        let mut a = alpha0;
        let mut worst = 0.0_f64;
        for i in 1..=20_000 {
            a += h * rate(c, a);
            worst = worst.max((a - alpha_closed_form(alpha0, c, i as f64 * h).unwrap()).abs());
        }
        prop_assert!(worst <= 5.0 * h * c, "{worst}");
    }

    #[test]
    fn converged_index_matches_dense_count(
        spectrum in prop::collection::vec(prop_oneof![-3.0..-0.5f64, 0.5..3.0f64], 2..=5),
        start in prop::collection::vec(-0.5..0.5f64, 5),
    ) {
        let k = spectrum.iter().filter(|&&l| l < 0.0).count();
        let q = EnergyModel::Quadratic(Quadratic::diagonal(&spectrum).unwrap());
        let x0 = DVector::from_column_slice(&start[..spectrum.len()]);
        let config = SaddleConfig { k, alpha: AlphaSchedule::pinned(1.0), ..SaddleConfig::for_model(&q) };
        let r = run_saddle_search(&q, &x0, &config).unwrap();
        prop_assert_eq!(r.status, SearchStatus::Converged);
        let p = r.point.unwrap();
        let h = dense_hessian(&q, &p.x).unwrap();
        let count = h.symmetric_eigen().eigenvalues.iter().filter(|&&l| l < -p.zero_threshold).count();
        prop_assert_eq!(p.index, count);
    }

    #[test]
    fn residual_is_non_increasing_on_quadratics(
        l2 in 1.5..10.0f64,
        start in prop::collection::vec(-0.5..0.5f64, 2),
    ) {
        let q = EnergyModel::Quadratic(Quadratic::diagonal(&[-1.0, l2]).unwrap());
        let config = SaddleConfig {
            k: 1,
            alpha: AlphaSchedule { alpha0: 0.75, ..AlphaSchedule::default() },
            step: StepPolicy::Theoretical { lipschitz: l2, mu: 1.0 },
            sample_every: Some(1),
            ..SaddleConfig::default()
        };
        let r = run_saddle_search(&q, &DVector::from_vec(start), &config).unwrap();
        prop_assert_eq!(r.status, SearchStatus::Converged);
        let norms: Vec<f64> = r.trajectory.unwrap().samples.iter()
            .map(|s| s.x.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        for w in norms.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
    }
}

/// Reference HiSD iteration `x <- x - eta R x` on a diagonal quadratic,
/// where the unstable frame is known exactly.
#[test]
fn pinned_alpha_reproduces_hisd() {
    let spectrum = [-1.0, 2.0, 0.5];
    let q = EnergyModel::Quadratic(Quadratic::diagonal(&spectrum).unwrap());
    let x0 = DVector::from_column_slice(&[0.3, 0.3, -0.2]);
    let eta = 0.1;
    let config = SaddleConfig {
        k: 1,
        alpha: AlphaSchedule::pinned(1.0),
        step: StepPolicy::Fixed { eta, max_step: None },
        sample_every: Some(1),
        ..SaddleConfig::default()
    };
    let r = run_saddle_search(&q, &x0, &config).unwrap();
    assert_eq!(r.status, SearchStatus::Converged);
    let mut x = [0.3, 0.3, -0.2];
    for s in &r.trajectory.unwrap().samples {
        for i in 0..3 {
            assert_abs_diff_eq!(s.x[i], x[i], epsilon = 1e-15);
        }
        // R = diag(-1, 1, 1), G = diag(spectrum): x <- x - eta R G x.
        for i in 0..3 {
            let r = if i == 0 { -1.0 } else { 1.0 };
            x[i] -= eta * r * spectrum[i] * x[i];
        }
    }
}

/// The continuous integrator with alpha at 1 matches an Euler HiSD stepper.
#[test]
fn integrator_at_alpha_one_reproduces_hisd() {
    let spectrum = [-1.0, 2.0];
    let q = Quadratic::diagonal(&spectrum).unwrap();
    let state = SearchState {
        x: DVector::from_column_slice(&[0.4, -0.3]),
        basis: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        alpha: 1.0,
        t: 0.0,
    };
    let config = FlowConfig {
        max_speed: None,
        t_max: 5.0,
        ..FlowConfig::default()
    };
    let traj = integrate_ihisd(&q, &state, &config).unwrap();
    let mut x = [0.4, -0.3];
    for s in &traj.samples {
        assert!((s.x[0] - x[0]).abs() <= 1e-12 && (s.x[1] - x[1]).abs() <= 1e-12);
        x[0] += config.h * spectrum[0] * x[0];
        x[1] -= config.h * spectrum[1] * x[1];
    }
}

/// Trajectory samples keep an orthonormal frame and a monotone ratio.
#[test]
fn trajectory_invariants_on_butterfly() {
    let m = Butterfly::new(1.0);
    let state = SearchState::from_hessian(&m, DVector::from_column_slice(&[1.49, -1.0]), 1, 1e-7).unwrap();
    let config = FlowConfig {
        t_max: 40.0,
        ..FlowConfig::default()
    };
    let traj = integrate_ihisd(&m, &state, &config).unwrap();
    for w in traj.samples.windows(2) {
        assert!(w[1].alpha >= w[0].alpha);
        assert!(w[1].t > w[0].t);
        assert!(w[1].alpha >= 1e-7 && w[1].alpha < 1.0);
    }
}
