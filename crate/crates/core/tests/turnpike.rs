use std::sync::Arc;

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use turnpike_core::model::*;
use turnpike_core::shooting::*;
use turnpike_core::systems::{Byrnes, LinearSystem, ScalarCubic};
use turnpike_core::turnpike::*;

fn sweep(prob: &OcpProblem<f64>, opt: &SteadyOptimum<f64>, horizons: &[f64]) -> Vec<BvpSolution<f64>> {
    horizons
        .iter()
        .map(|&t| {
            let spec = BvpSpec::near_steady(build_hamiltonian_field(prob), t, prob.x0.clone(), Terminal::CostateZero, opt);
            solve_bvp(&spec, 1e-10, 1e-12).unwrap()
        })
        .collect()
}

fn byrnes_sweep() -> (SteadyOptimum<f64>, Vec<BvpSolution<f64>>) {
    let horizons = [5.0, 10.0, 15.0, 20.0];
    let prob = OcpProblem::new(Arc::new(Byrnes), Objective::Tracking { z: dvector![1.0, -2.0] }, DMatrix::identity(2, 2), dvector![1.0, 0.2], horizons.to_vec()).unwrap();
    let opt = solve_sop(&prob, &[dvector![0.0, -2.0]]).unwrap().optima.remove(0);
    let sols = sweep(&prob, &opt, &horizons);
    (opt, sols)
}

/// `d(t)` recomputed from the solution without going through the library.
fn direct_distance(sol: &BvpSolution<f64>, opt: &SteadyOptimum<f64>, t: f64) -> f64 {
    (sol.control(t) - &opt.u_bar).norm() + (sol.state(t) - &opt.x_bar).norm()
}

#[test]
fn byrnes_fig2_sweep_is_certified() {
    let (opt, sols) = byrnes_sweep();
    for s in &sols {
        assert!(s.boundary_residual() <= 1e-8, "T = {}: {:e}", s.horizon, s.boundary_residual());
    }
    let cert = certify_with(&opt, &sols, &CertifyOptions::default()).unwrap();
    assert_eq!(cert.verdict, Verdict::Certified, "{cert:?}");
    assert!(cert.mu > 1e-3 && cert.mu_spread <= 0.25);
    assert!(cert.envelope_valid);

    // Validity of the global envelope, checked independently off the grid too.
    for s in &sols {
        for k in 0..=997 {
            let t = s.horizon * k as f64 / 997.0;
            let bound = cert.k * ((-cert.mu * t).exp() + (-cert.mu * (s.horizon - t)).exp());
            assert!(direct_distance(s, &opt, t) <= bound * (1.0 + 1e-6), "T = {} t = {t}", s.horizon);
        }
    }

    let r15 = residence_measure(&distance_profile(&sols[2], &opt, 4000), &[0.05])[0].1;
    let r20 = residence_measure(&distance_profile(&sols[3], &opt, 4000), &[0.05])[0].1;
    assert!((r15 - r20).abs() <= 0.1 * r15.max(r20), "{r15} vs {r20}");
}

#[test]
fn byrnes_profile_dips_in_the_interior() {
    let (opt, sols) = byrnes_sweep();
    let p = distance_profile(&sols[2], &opt, 3000);
    let n = p.values.len();
    let mid = p.values[n / 2];
    assert!(mid < 0.05, "{mid}");
    assert!(p.values[0] > 0.5);
    // u = −p₂ with p̄₂ = 0 and x stays put, so d has no exit layer: the
    // terminal layer lives in p₁ only.
    assert!(p.values[n - 1] < 1e-4, "{}", p.values[n - 1]);
    for (k, &t) in p.times.iter().enumerate().step_by(97) {
        assert!((p.values[k] - direct_distance(&sols[2], &opt, t)).abs() < 1e-14);
    }
}

#[test]
fn residence_is_stable_under_grid_refinement() {
    let (opt, sols) = byrnes_sweep();
    for s in &sols {
        for grid in [250usize, 500, 1000] {
            let coarse = residence_measure(&distance_profile(s, &opt, grid), &[0.01, 0.05, 0.1]);
            let fine = residence_measure(&distance_profile(s, &opt, 2 * grid), &[0.01, 0.05, 0.1]);
            for ((_, a), (_, b)) in coarse.iter().zip(&fine) {
                assert!((a - b).abs() <= 2.0 * s.horizon / grid as f64, "T = {} grid = {grid}: {a} vs {b}", s.horizon);
            }
        }
    }
}

#[test]
fn p0_approaches_the_long_horizon_value() {
    let (_, sols) = byrnes_sweep();
    let gaps = p0_convergence(&sols);
    assert_eq!(gaps.last().unwrap().1, 0.0);
    assert!(gaps[2].1 < 1e-3 * gaps[0].1.max(1e-300) || gaps[2].1 < 1e-8, "{gaps:?}");
}

#[test]
fn lqr_certifies_for_random_data() {
    let a = dmatrix![1.0, 1.0; 0.0, -1.0];
    let b = dmatrix![0.0; 1.0];
    let c = DMatrix::<f64>::identity(2, 2);
    let horizons = [10.0, 15.0, 20.0];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..6 {
        let dir = |rng: &mut ChaCha8Rng| {
            let v = DVector::<f64>::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let r: f64 = rng.random_range(0.0..10.0);
            &v / v.norm() * r
        };
        let x0 = dir(&mut rng);
        let z = dir(&mut rng);
        let prob = OcpProblem::new(Arc::new(LinearSystem::new(a.clone(), b.clone())), Objective::Tracking { z }, c.clone(), x0, horizons.to_vec()).unwrap();
        let opt = solve_sop(&prob, &[DVector::zeros(2)]).unwrap().optima.remove(0);
        let sols = sweep(&prob, &opt, &horizons);
        for s in &sols {
            assert!(verify_p_condition(s, 100).unwrap().ok);
        }
        let cert = certify(&prob, &opt, &sols).unwrap();
        assert_eq!(cert.verdict, Verdict::Certified, "spread {} variation {}", cert.mu_spread, cert.residence_variation);
    }
}

#[test]
fn bump_case_needs_the_control_certificate() {
    let prob = OcpProblem::new(Arc::new(ScalarCubic), Objective::FixedEndpoint { xf: dvector![1.4] }, DMatrix::zeros(1, 1), dvector![-0.1], vec![10.0, 20.0, 30.0]).unwrap();
    let opt = solve_sop(&prob, &[dvector![0.0, 0.0]]).unwrap().optima.remove(0);
    let spec = BvpSpec::near_steady(build_hamiltonian_field(&prob), 2.0, dvector![-0.1], Terminal::StateTarget(dvector![1.4]), &opt);
    let o = ShootingOptions::new(1e-10, 1e-12);
    let s10 = solve_with_continuation(&spec, &ContinuationPlan::horizon_ramp(&[4.0, 6.0, 8.0, 10.0]), &o).unwrap();
    let s20 = solve_with_continuation(&s10.spec(), &ContinuationPlan::horizon_ramp(&[12.0, 14.0, 16.0, 18.0, 20.0]), &o).unwrap();
    let s30 = solve_with_continuation(&s20.spec(), &ContinuationPlan::horizon_ramp(&[22.0, 24.0, 26.0, 28.0, 30.0]), &o).unwrap();
    let sols = vec![s10, s20, s30];

    // The state visits (1, 0) on the way, so the state-based constants are
    // not uniform in T.
    let state = certify(&prob, &opt, &sols).unwrap();
    assert_eq!(state.verdict, Verdict::Inconclusive);
    assert!(state.mu_spread > 0.25 || state.residence_variation > 0.1);

    let control = control_residence(&opt, &sols, 0.05, &CertifyOptions::default()).unwrap();
    assert!(control.bounded, "{control:?}");
    assert!(control.fraction < control.per_horizon[0].1 / 10.0, "{control:?}");
}

#[test]
fn control_residence_needs_three_horizons() {
    let (opt, sols) = byrnes_sweep();
    let err = control_residence(&opt, &sols[..2], 0.05, &CertifyOptions::default()).unwrap_err();
    assert_eq!(err, TurnpikeError::InsufficientHorizons { needed: 3, got: 2 });
    assert!(matches!(certify_with(&opt, &sols[..1], &CertifyOptions::default()), Err(TurnpikeError::InsufficientHorizons { .. })));
}

#[test]
fn synthetic_constants_are_recovered() {
    for k in [0.5_f64, 2.0, 10.0] {
        for mu in [0.2_f64, 1.0, 3.0] {
            let horizon: f64 = 40.0;
            let p = DistanceProfile::from_fn(horizon, 4000, |t| k * ((-mu * t).exp() + (-mu * (horizon - t)).exp()));
            let fit = fit_envelope(&p, horizon).unwrap();
            assert!((fit.k - k).abs() <= 0.01 * k && (fit.mu - mu).abs() <= 0.01 * mu, "({k}, {mu}): {fit:?}");
        }
    }
}

fn two_rate(a: f64, la: f64, b: f64, lb: f64, horizon: f64) -> DistanceProfile<f64> {
    DistanceProfile::from_fn(horizon, 800, |t| a * (-la * t).exp() + b * (-lb * (horizon - t)).exp())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn residence_is_non_increasing_in_epsilon(
        a in 0.01f64..10.0, la in 0.1f64..3.0, b in 0.0f64..5.0, lb in 0.1f64..3.0, horizon in 2.0f64..30.0,
        mut eps in proptest::collection::vec(1e-4f64..5.0, 2..8),
    ) {
        eps.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let r = residence_measure(&two_rate(a, la, b, lb, horizon), &eps);
        for w in r.windows(2) {
            prop_assert!(w[1].1 <= w[0].1 + 1e-12);
        }
        prop_assert!(r.iter().all(|(_, m)| *m >= 0.0 && *m <= horizon + 1e-12));
    }

    #[test]
    fn fit_is_scale_equivariant_and_valid(
        a in 0.01f64..10.0, la in 0.1f64..3.0, b in 0.0f64..5.0, lb in 0.1f64..3.0, horizon in 2.0f64..30.0, c in 1e-3f64..1e3,
    ) {
        let p = two_rate(a, la, b, lb, horizon);
        let f = fit_envelope(&p, horizon).unwrap();
        let g = fit_envelope(&p.scaled(c), horizon).unwrap();
        prop_assert!((g.k / f.k - c).abs() <= 1e-9 * c);
        prop_assert!((g.mu - f.mu).abs() <= 1e-9 * f.mu);
        for (&t, &d) in p.times.iter().zip(&p.values) {
            prop_assert!(d <= f.k * envelope(f.mu, horizon, t) * (1.0 + 1e-9));
        }
        prop_assert!(f.fit_residual <= 1e-9);
    }
}
