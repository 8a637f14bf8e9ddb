use std::sync::Arc;

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use turnpike_core::manifolds::*;
use turnpike_core::model::*;
use turnpike_core::odeflow::{integrate, FnField};
use turnpike_core::systems::{Byrnes, LinearSystem, ScalarCubic};

fn optimum(prob: &OcpProblem<f64>, seed: DVector<f64>) -> SteadyOptimum<f64> {
    solve_sop(prob, &[seed]).unwrap().optima.remove(0)
}

fn byrnes_ocp1() -> OcpProblem<f64> {
    OcpProblem::new(Arc::new(Byrnes), Objective::Tracking { z: dvector![1.0, -2.0] }, DMatrix::identity(2, 2), dvector![1.0, 0.2], vec![10.0]).unwrap()
}

fn byrnes_ocp2() -> OcpProblem<f64> {
    OcpProblem::new(Arc::new(Byrnes), Objective::FixedEndpoint { xf: dvector![0.0, 5.0] }, DMatrix::identity(2, 2), dvector![12.0, 12.0], vec![10.0]).unwrap()
}

fn cubic() -> OcpProblem<f64> {
    OcpProblem::new(Arc::new(ScalarCubic), Objective::FixedEndpoint { xf: dvector![-1.0] }, DMatrix::zeros(1, 1), dvector![1.5], vec![20.0]).unwrap()
}

fn span_of(v: &[f64]) -> DMatrix<f64> {
    let m = DMatrix::from_column_slice(v.len(), 1, v);
    &m / m.norm()
}

#[test]
fn scalar_tangent_lines() {
    let sys = LinearSystem::new(dmatrix![0.0], dmatrix![1.0]);
    let prob = OcpProblem::new(Arc::new(sys), Objective::Tracking { z: dvector![0.0] }, dmatrix![1.0], dvector![1.0], vec![5.0]).unwrap();
    let opt = optimum(&prob, dvector![0.0]);
    let (s, u) = tangent_spaces(&opt, &prob.c).unwrap();
    assert!(principal_angle_sine(&s.tangent_basis, &span_of(&[1.0, 1.0])) < 1e-12);
    // L = −1/2, PL + I = 1/2.
    assert!(principal_angle_sine(&u.tangent_basis, &span_of(&[-0.5, 0.5])) < 1e-12);
    assert!(s.principal_angle < 1e-8 && u.principal_angle < 1e-8);
}

#[test]
fn zero_weight_stable_space_is_the_state_plane() {
    let sys = LinearSystem::new(dmatrix![-1.0, 0.5; 0.0, -2.0], dmatrix![0.0; 1.0]);
    let prob = OcpProblem::new(Arc::new(sys), Objective::Tracking { z: dvector![0.0] }, DMatrix::zeros(1, 2), dvector![1.0, 1.0], vec![5.0]).unwrap();
    let opt = optimum(&prob, dvector![0.0, 0.0]);
    let (s, _) = tangent_spaces(&opt, &prob.c).unwrap();
    let plane = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    assert!(principal_angle_sine(&s.tangent_basis, &plane) < 1e-12);
}

#[test]
fn ocp2_unstable_tangent_is_the_affine_plane() {
    let prob = byrnes_ocp2();
    let opt = optimum(&prob, dvector![0.0, 0.0]);
    let (_, u) = tangent_spaces(&opt, &prob.c).unwrap();
    // {x1 = 0, x2 + p2 = 0} is spanned by e_p1 and (0, 1, 0, −1).
    let plane = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, -1.0]);
    let plane = plane.clone().qr().q();
    assert!(principal_angle_sine(&plane, &u.tangent_basis) < 1e-10);
}

#[test]
fn byrnes_unstable_manifolds_are_affine() {
    for prob in [byrnes_ocp1(), byrnes_ocp2()] {
        let seed = match prob.objective {
            Objective::Tracking { .. } => dvector![0.0, -2.0, -1.0, 0.0],
            Objective::FixedEndpoint { .. } => dvector![0.0, 0.0, 0.0, 0.0],
        };
        let opt = optimum(&prob, seed);
        let check = verify_affine_unstable(&prob, &opt).unwrap();
        assert!(check.is_affine && check.max_drift <= 1e-7, "{} {:e}", check.description, check.max_drift);
        assert_eq!(check.set.dim(), 2);
    }
}

#[test]
fn ocp2_affine_set_is_x2_plus_p2() {
    let prob = byrnes_ocp2();
    let opt = optimum(&prob, dvector![0.0, 0.0]);
    let set = verify_affine_unstable(&prob, &opt).unwrap().set;
    assert!(set.distance(&dvector![0.0, 0.7, 3.0, -0.7]) < 1e-12);
    assert!(set.distance(&dvector![0.0, 0.7, 3.0, 0.7]) > 0.5);
}

#[test]
fn stable_tangent_plane_of_nonlinear_problem_drifts() {
    let prob = byrnes_ocp1();
    let opt = optimum(&prob, dvector![0.0, -2.0]);
    let (s, _) = tangent_spaces(&opt, &prob.c).unwrap();
    let field = build_hamiltonian_field(&prob);
    let set = AffineSet { base: opt.point(), span: s.tangent_basis.clone() };
    let (ok, drift) = verify_invariant_affine(&field, &set, 2.0, 50, 1.0, 7).unwrap();
    assert!(!ok && drift > 3e-6, "{drift:e}");
}

#[test]
fn chart_samples_contract_by_ten() {
    let prob = byrnes_ocp1();
    let opt = optimum(&prob, dvector![0.0, -2.0]);
    let field = build_hamiltonian_field(&prob);
    let (mut s, mut u) = tangent_spaces(&opt, &prob.c).unwrap();
    sample_chart(&field, &mut s, 8, 0.2, 1).unwrap();
    sample_chart(&field, &mut u, 8, 0.2, 2).unwrap();
    for chart in [&s, &u] {
        assert_eq!(chart.samples.len(), 8);
        for z in &chart.samples {
            assert!(((z - &chart.equilibrium).norm() - 0.2).abs() < 1e-9);
        }
        let ratio = decay_ratio(&field, chart).unwrap();
        assert!(ratio <= 0.1, "{:?} {ratio}", chart.kind);
    }
}

#[test]
fn linear_saddle_branches_lie_on_eigenlines() {
    let field = FnField::new(2, |z: &DVector<f64>| dvector![z[1], z[0]]);
    let window = Window { x: (-2.0, 2.0), p: (-2.0, 2.0) };
    let branches = grow_manifold_2d(&field, &dvector![0.0, 0.0], 10.0, &window).unwrap();
    assert_eq!(branches.len(), 4);
    for b in &branches {
        let sign = match b.kind {
            ManifoldKind::Unstable => 1.0,
            ManifoldKind::Stable => -1.0,
        };
        assert_eq!(b.stop, BranchStop::LeftWindow);
        for z in &b.points {
            assert!((z[1] - sign * z[0]).abs() < 1e-6, "{z:?}");
        }
        for w in b.points.windows(2) {
            assert!((&w[1] - &w[0]).norm() <= 0.04 + 1e-12);
        }
    }
}

#[test]
fn cubic_heteroclinic_and_closed_orbits() {
    let prob = cubic();
    let field = build_hamiltonian_field(&prob);
    let window = Window { x: (-1.5, 2.5), p: (-2.0, 2.0) };
    let branches = grow_manifold_2d(&field, &dvector![0.0, 0.0], 20.0, &window).unwrap();
    let target = dvector![1.0, 0.0];
    let hit = branches
        .iter()
        .filter(|b| b.kind == ManifoldKind::Unstable)
        .map(|b| b.points.iter().map(|z| (z - &target).norm()).fold(f64::INFINITY, f64::min))
        .fold(f64::INFINITY, f64::min);
    assert!(hit < 1e-3, "closest approach {hit:e}");

    for start in [dvector![0.5, -0.15], dvector![0.5, -0.05], dvector![0.6, -0.25]] {
        let orbit = trace_closed_orbit(&field, &start, 100.0).unwrap().expect("orbit closes");
        assert!(orbit.closure_error < 1e-4 && orbit.level_drift < 1e-8, "{:?}", orbit.closure_error);
        assert!(orbit.period > 0.0);
    }
}

#[test]
fn branches_are_numerically_invariant() {
    let field = build_hamiltonian_field(&cubic());
    let window = Window { x: (-1.5, 2.5), p: (-2.0, 2.0) };
    let branches = grow_manifold_2d(&field, &dvector![0.0, 0.0], 6.0, &window).unwrap();
    for b in &branches {
        let mid = &b.points[b.points.len() / 2];
        for dt in [-0.5, 0.5] {
            let end = integrate(&field, mid, 0.0, dt, 1e-11, 1e-13).unwrap().final_state().clone();
            if window.contains(&end) && (&end - &b.points[0]).norm() < (b.points.last().unwrap() - &b.points[0]).norm() {
                assert!(b.distance_to(&end) <= 1e-4 * window.size(), "{:?} {:e}", b.kind, b.distance_to(&end));
            }
        }
    }
}

#[test]
fn rho_shrinks_with_horizon() {
    let prob = cubic();
    let field = build_hamiltonian_field(&prob);
    let opt = optimum(&prob, dvector![0.0, 0.0]);
    let (mut s, _) = tangent_spaces(&opt, &prob.c).unwrap();
    sample_chart(&field, &mut s, 1, 0.1, 3).unwrap();
    let z0 = s.samples[0].clone();
    let opts = RhoOptions { rel_tol: 1e-4, ..Default::default() };
    let (values, monotone) = rho_sweep(&field, &s, &z0, &[1.0, 2.0, 4.0, 8.0], 0.3, 0.8, &opts).unwrap();
    assert!(monotone, "{values:?}");
    assert!(values.iter().all(|(_, r)| *r > 0.0));
    assert!(values.last().unwrap().1 < values[0].1);

    let at_eq = estimate_rho(&field, &s, &s.equilibrium.clone(), 4.0, 0.3, 0.8, &opts).unwrap();
    assert!(at_eq > 0.0);
}
