//! Randomized invariants across module boundaries.

use mildsolve::compactness::{
    covering_ladder, evaluation_set, hausdorff_distance, image_cloud, PointCloud,
};
use mildsolve::controls::{lp_norm, sample_ball, Control};
use mildsolve::operator::{
    certify, omega_norm_distance, renormed_distance, sup_norm, CertificateChoice, CertificateMode,
    IntegralOperator, TrajectoryGrid,
};
use mildsolve::reachset::{
    counterexample_report, gamma_approximation, sample_reachset, DiagnosticConfig,
};
use mildsolve::solver::{gronwall_radius, solve_with, SolverOptions};
use mildsolve::spaces::{certify_class_constants, NormKind, Semigroup, StateVector, VectorField};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_state(rng: &mut ChaCha8Rng, n: usize, norm: NormKind) -> StateVector {
    StateVector::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), norm).unwrap()
}

fn random_dense(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        let v: f64 = rng.random_range(-1.0..1.0);
        if i == j {
            v - 1.0
        } else {
            v
        }
    })
}

fn random_trajectory(rng: &mut ChaCha8Rng, n_t: usize, dim: usize) -> TrajectoryGrid {
    let data = (0..(n_t + 1) * dim)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    TrajectoryGrid::from_raw(1.0, n_t, dim, NormKind::L2, data).unwrap()
}

fn shift(n: usize) -> VectorField {
    let b = DMatrix::from_fn(
        n,
        n,
        |i, j| if i + 1 == j || j + 1 == i { 0.5 } else { 0.0 },
    );
    VectorField::bilinear(b, NormKind::L2).unwrap()
}

fn small_heat(n: usize, n_t: usize) -> IntegralOperator {
    let sg = Semigroup::heat(n).unwrap();
    let xi0 = StateVector::new(
        (1..=n).map(|k| 0.5 / (k * k) as f64).collect(),
        NormKind::L2,
    )
    .unwrap();
    IntegralOperator::new(&sg, &[shift(n)], &xi0, 1.0, n_t).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn semigroup_property(seed in any::<u64>(), s in 0.0f64..1.5, t in 0.0f64..1.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..8);
        for sg in [Semigroup::heat(n).unwrap(), Semigroup::dense(random_dense(&mut rng, n), 1.0, 0.0).unwrap()] {
            let xi = random_state(&mut rng, n, NormKind::L2);
            let two = sg.apply(s, &sg.apply(t, &xi).unwrap()).unwrap();
            let one = sg.apply(s + t, &xi).unwrap();
            prop_assert!(two.distance(&one) <= 1e-10 * xi.norm().max(1e-300));
        }
    }

    #[test]
    fn lipschitz_in_control(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, n_t) = (6, 50);
        let op = small_heat(n, n_t);
        let p = [1.0, 2.0, 3.0][rng.random_range(0..3)];
        let x = random_trajectory(&mut rng, n_t, n);
        let us = sample_ball(p, 1.0, 1.0, 1, n_t, 2, rng.random()).unwrap();
        let k = x.states().map(|s| op.fields()[0].eval(0.0, &StateVector::new(s.to_vec(), NormKind::L2).unwrap()).unwrap().norm()).fold(0.0, f64::max);
        // T = 1, so the Hölder factor T^{1/q} is 1.
        let lhs = sup_norm(&op.apply(&x, &us[0]).unwrap(), &op.apply(&x, &us[1]).unwrap()).unwrap();
        let rhs = k * op.class_m() * (op.class_mu()).exp() * lp_norm(&us[0].difference(&us[1]).unwrap(), p).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-15, "{} > {}", lhs, rhs);
    }

    #[test]
    fn omega_contraction(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, n_t) = (8, 60);
        let op = small_heat(n, n_t);
        let r = rng.random_range(0.2..3.0);
        let cert = certify(CertificateChoice::Omega, 2.0, r, 1.0, 0.0, op.lipschitz(), 1.0, 0.5).unwrap();
        let CertificateMode::Omega { omega } = cert.mode else { unreachable!() };
        let u = &sample_ball(2.0, r, 1.0, 1, n_t, 1, rng.random()).unwrap()[0];
        let (x, y) = (random_trajectory(&mut rng, n_t, n), random_trajectory(&mut rng, n_t, n));
        let lhs = omega_norm_distance(&op.apply(&x, u).unwrap(), &op.apply(&y, u).unwrap(), omega).unwrap();
        prop_assert!(lhs <= cert.rate * omega_norm_distance(&x, &y, omega).unwrap() + 1e-6);
    }

    #[test]
    fn renormed_contraction(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, n_t) = (6, 50);
        let op = small_heat(n, n_t);
        let r = rng.random_range(0.5..4.0);
        let cert = certify(CertificateChoice::Hidden, 1.0, r, 1.0, 0.0, op.lipschitz(), 1.0, 0.5).unwrap();
        let u = &sample_ball(1.0, r, 1.0, 1, n_t, 1, rng.random()).unwrap()[0];
        let f = |z: &TrajectoryGrid| op.apply(z, u);
        let (x, y) = (random_trajectory(&mut rng, n_t, n), random_trajectory(&mut rng, n_t, n));
        let d = renormed_distance(&x, &y, f, &cert).unwrap();
        let dx = renormed_distance(&f(&x).unwrap(), &f(&y).unwrap(), f, &cert).unwrap();
        prop_assert!(dx <= cert.step_rate() * d * (1.0 + 1e-12));
    }

    #[test]
    fn image_hausdorff_below_sup_norm(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = (random_trajectory(&mut rng, 20, 3), random_trajectory(&mut rng, 20, 3));
        let dh = hausdorff_distance(&image_cloud(&x), &image_cloud(&y)).unwrap();
        prop_assert!(dh <= sup_norm(&x, &y).unwrap() + 1e-15);
    }

    #[test]
    fn covering_size_nonincreasing_in_radius(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.random_range(1..4);
        let cloud = PointCloud::new((0..150).map(|_| random_state(&mut rng, dim, NormKind::L2)).collect()).unwrap();
        let radii = [0.6, 0.4, 0.3, 0.2, 0.1, 0.05];
        let sizes: Vec<usize> = covering_ladder(&cloud, &radii).unwrap().iter().map(|r| r.covering_size).collect();
        for w in sizes.windows(2) {
            prop_assert!(w[0] <= w[1], "{:?}", sizes);
        }
    }
}

#[test]
fn class_bound_on_certified_semigroups() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for norm in [NormKind::L1, NormKind::L2, NormKind::Linf] {
        let n = 5;
        let sg = Semigroup::dense_certified(random_dense(&mut rng, n), 2.0, norm, 1.1).unwrap();
        let diag = Semigroup::diagonal(vec![0.3, -1.0, -4.0, 0.0, 0.1]).unwrap();
        for sg in [&sg, &diag] {
            for _ in 0..1000 {
                let t = rng.random_range(0.0..2.0);
                let xi = random_state(&mut rng, n, norm);
                let lhs = sg.apply(t, &xi).unwrap().norm();
                assert_le(
                    lhs,
                    sg.class_m() * (sg.class_mu() * t).exp() * xi.norm() * (1.0 + 1e-12),
                );
            }
        }
    }
}

#[test]
fn certified_constants_dominate_a_rotation() {
    // e^{At} is a rotation: M = 1, μ = 0 in the 2-norm.
    let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
    let sg = Semigroup::dense(a, 1.0, 0.0).unwrap();
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.1).collect();
    let c = certify_class_constants(&sg, &grid, 200, 1.1, NormKind::L2).unwrap();
    assert!(c.m >= 1.0 && c.m <= 1.1 + 1e-9 && c.mu == 0.0, "{c:?}");
}

fn assert_le(lhs: f64, rhs: f64) {
    assert!(lhs <= rhs, "{lhs} > {rhs}");
}

#[test]
fn a_posteriori_bound_is_honest() {
    let op = small_heat(8, 100);
    for (p, choice) in [
        (2.0, CertificateChoice::Omega),
        (1.0, CertificateChoice::Hidden),
    ] {
        let cert = certify(choice, p, 1.0, 1.0, 0.0, op.lipschitz(), 1.0, 0.5).unwrap();
        for u in sample_ball(p, 1.0, 1.0, 1, 100, 5, 3).unwrap() {
            let res = solve_with(&op, &u, &cert, &SolverOptions::default()).unwrap();
            assert!(res.a_posteriori_bound < 1e-8);
            let mut x = res.trajectory.clone();
            for _ in 0..20 {
                x = op.apply(&x, &u).unwrap();
            }
            let moved = match cert.mode {
                CertificateMode::Omega { omega } => {
                    omega_norm_distance(&x, &res.trajectory, omega).unwrap()
                }
                CertificateMode::Hidden { .. } => sup_norm(&x, &res.trajectory).unwrap(),
            };
            assert!(
                moved <= res.a_posteriori_bound,
                "{moved} > {}",
                res.a_posteriori_bound
            );
        }
    }
}

#[test]
fn gronwall_containment_for_lp_balls() {
    let sg = Semigroup::diagonal(vec![0.5]).unwrap();
    let xi0 = StateVector::new(vec![1.0], NormKind::L2).unwrap();
    let f = VectorField::bilinear(DMatrix::identity(1, 1), NormKind::L2).unwrap();
    let op = IntegralOperator::new(&sg, &[f], &xi0, 1.0, 400).unwrap();
    for p in [1.0, 2.0] {
        let k = 1.5;
        let radius = gronwall_radius(&xi0, k, p, 1.0, 1.0, 0.5, 1.0, 0.0).unwrap();
        let cert = certify(CertificateChoice::Auto, p, k, 1.0, 0.5, 1.0, 1.0, 0.5).unwrap();
        for u in sample_ball(p, k, 1.0, 1, 400, 200, 17).unwrap() {
            let x = solve_with(&op, &u, &cert, &SolverOptions::default())
                .unwrap()
                .trajectory;
            let exc = x.states().map(|s| (s[0] - 1.0).abs()).fold(0.0, f64::max);
            assert!(exc < radius, "p = {p}: {exc} >= {radius}");
        }
    }
}

/// `‖Φ(v) − Φ(u)‖_∞ ≤ e^{ωT}/(1−C) · L_u · ‖v − u‖_p` for a weighted-norm
/// certificate, with `L_u = K·M·e^{μT}·T^{1/q}` evaluated along `Φ(u)`.
#[test]
fn solution_map_is_lipschitz_in_control() {
    let n_t = 100;
    let op = small_heat(6, n_t);
    let cert = certify(
        CertificateChoice::Omega,
        2.0,
        1.0,
        1.0,
        0.0,
        op.lipschitz(),
        1.0,
        0.5,
    )
    .unwrap();
    let CertificateMode::Omega { omega } = cert.mode else {
        unreachable!()
    };
    let opts = SolverOptions {
        tol: 1e-12,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = sample_ball(2.0, 0.8, 1.0, 1, n_t, 20, 9).unwrap();
    let mut worst: f64 = 0.0;
    for u in &base {
        let v = Control::new(
            1.0,
            vec![u
                .channel(0)
                .iter()
                .map(|a| a + rng.random_range(-0.05..0.05))
                .collect()],
        )
        .unwrap();
        if lp_norm(&v, 2.0).unwrap() > 1.0 {
            continue;
        }
        let xu = solve_with(&op, u, &cert, &opts).unwrap().trajectory;
        let xv = solve_with(&op, &v, &cert, &opts).unwrap().trajectory;
        let k = xu
            .states()
            .map(|s| {
                op.fields()[0]
                    .eval(0.0, &StateVector::new(s.to_vec(), NormKind::L2).unwrap())
                    .unwrap()
                    .norm()
            })
            .fold(0.0, f64::max);
        let bound = omega.exp() / (1.0 - cert.rate) * k;
        let ratio = sup_norm(&xu, &xv).unwrap() / lp_norm(&v.difference(u).unwrap(), 2.0).unwrap();
        assert!(ratio <= bound, "{ratio} > {bound}");
        worst = worst.max(ratio / bound);
    }
    assert!(worst > 0.0);
}

#[test]
fn reachset_samples_are_reproducible_and_contained() {
    let cfg = DiagnosticConfig {
        dims: vec![8],
        count: 30,
        seed: 4,
        ..DiagnosticConfig::default()
    };
    let (op, a) = cfg.sample(8).unwrap();
    let (_, b) = cfg.sample(8).unwrap();
    assert_eq!(a.endpoints, b.endpoints);
    let xi0 = op.initial_state();
    let radius = gronwall_radius(
        &xi0,
        cfg.r,
        cfg.p,
        1.0,
        1.0,
        0.0,
        op.fields()[0].growth_alpha(),
        0.0,
    )
    .unwrap();
    for (u, x) in a.controls.iter().zip(&a.trajectories) {
        assert!(lp_norm(u, cfg.p).unwrap() <= cfg.r * (1.0 + 1e-12));
        assert_eq!(x.state(0), xi0.as_slice());
    }
    for s in a.endpoints.points() {
        assert!(s.distance(&xi0) <= radius);
    }
    let c = certify(
        CertificateChoice::Auto,
        cfg.p,
        cfg.r,
        1.0,
        0.0,
        op.lipschitz(),
        1.0,
        0.5,
    )
    .unwrap();
    let again = sample_reachset(&op, &c, cfg.p, cfg.r, 30, 4, &SolverOptions::default()).unwrap();
    assert_eq!(again.endpoints, a.endpoints);
}

#[test]
fn gamma_cells_partition_time_and_cover_states() {
    let cfg = DiagnosticConfig {
        count: 20,
        ..DiagnosticConfig::default()
    };
    let (_, sample) = cfg.sample(6).unwrap();
    let cloud = evaluation_set(&sample.trajectories).unwrap();
    let sg = Semigroup::heat(6).unwrap();
    let table = gamma_approximation(&sg, &cloud, 1.0, 0.01).unwrap();
    assert!(table.verified_error < 0.01);
    assert_eq!(table.time_cell(0.0), 0);
    assert_eq!(table.time_cell(1.0), table.time_cells - 1);
    for i in 0..table.time_cells {
        let right = (i + 1) as f64 / table.time_cells as f64;
        assert_eq!(table.time_cell(right), i);
    }
    assert_eq!(table.cell_of_point.len(), cloud.len());
    for (pt, &j) in cloud.points().iter().zip(&table.cell_of_point) {
        assert!(j < table.centers.len());
        assert_eq!(table.state_cell(pt.as_slice()), Some(j));
    }
    assert!(table.image_size() <= table.time_cells * table.centers.len());
}

#[test]
fn spike_dichotomy_across_family_sizes() {
    for k in 1..=8 {
        let n_max = 1usize << k;
        let r = counterexample_report(n_max, 1024).unwrap();
        assert_eq!(r.packing_half, k + 1);
        assert!(r.covering_quarter <= r.covering_bound);
    }
}

#[test]
fn omega_quotient_reaches_a_visible_fraction_of_the_rate() {
    // The identity field on a scalar system is close to extremal.
    let sg = Semigroup::identity(1).unwrap();
    let xi0 = StateVector::new(vec![1.0], NormKind::L2).unwrap();
    let f = VectorField::bilinear(DMatrix::identity(1, 1), NormKind::L2).unwrap();
    let op = IntegralOperator::new(&sg, &[f], &xi0, 1.0, 500).unwrap();
    let cert = certify(CertificateChoice::Omega, 2.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.5).unwrap();
    let CertificateMode::Omega { omega } = cert.mode else {
        unreachable!()
    };
    let u = Control::constant(1.0, 1, 500, 1.0).unwrap();
    let x =
        TrajectoryGrid::from_fn(1.0, 500, 1, NormKind::L2, |t| vec![(omega * t).exp()]).unwrap();
    let y = TrajectoryGrid::from_fn(1.0, 500, 1, NormKind::L2, |_| vec![0.0]).unwrap();
    let q = omega_norm_distance(
        &op.apply(&x, &u).unwrap(),
        &op.apply(&y, &u).unwrap(),
        omega,
    )
    .unwrap()
        / omega_norm_distance(&x, &y, omega).unwrap();
    assert!(q <= cert.rate + 1e-6 && q > 0.25 * cert.rate, "q = {q}");
}
