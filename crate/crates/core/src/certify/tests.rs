use super::*;
use crate::equilibria::{continue_family, newton_solve, seeds, Parameter, SolverOptions};
use crate::geometry::{planar_generator, validate_generator};

fn omega_family(law: ForceLaw<f64>) -> ContinuationFamily<f64> {
    let seed = seeds::two_body(&[1.0, 1.0], law, 0.5).unwrap();
    let first = newton_solve(&seed.problem, &seed.positions, &SolverOptions::default()).unwrap();
    let grid: Vec<f64> = (0..20).map(|k| 0.5 + 1.5 * k as f64 / 19.0).collect();
    continue_family(&seed.problem, &first, Parameter::Omega, &grid, &Default::default()).unwrap()
}

#[test]
fn separation_of_two_body_family() {
    let cert = separation_scan(&omega_family(ForceLaw::newtonian())).unwrap();
    assert!((cert.c_hat - 2f64.powf(-1.0 / 3.0)).abs() < 1e-6);
    assert_eq!(cert.argmin_member, 19);
    assert!((cert.stability_ratio - 1.0).abs() < 1e-9);
}

#[test]
fn empty_family_is_unverified() {
    let seed = seeds::two_body(&[1.0, 1.0], ForceLaw::newtonian(), 1.0).unwrap();
    let first = newton_solve(&seed.problem, &seed.positions, &SolverOptions::default()).unwrap();
    let empty = continue_family(&seed.problem, &first, Parameter::Omega, &[3.0], &Default::default())
        .unwrap_err()
        .family;
    assert!(matches!(separation_scan(&empty), Err(Error::UnverifiedMember { index: 0 })));
}

#[test]
fn boundedness_of_two_body_family() {
    let law = ForceLaw::newtonian();
    let cert = boundedness_scan(&omega_family(law.clone()), &law).unwrap();
    assert!((cert.big_c_hat - 1.0).abs() < 1e-6);
    assert_eq!(cert.argmax_member, 0);

    let weak = ForceLaw::power(0.5).unwrap();
    assert!(matches!(
        boundedness_scan(&omega_family(weak.clone()), &weak),
        Err(Error::HypothesisNotMet(_))
    ));
}

#[test]
fn boundedness_of_single_member() {
    let law = ForceLaw::newtonian();
    let seed = seeds::lagrange(&[1.0, 2.0, 3.0], law.clone(), 1.0).unwrap();
    let first = newton_solve(&seed.problem, &seed.positions, &SolverOptions::default()).unwrap();
    let fam = continue_family(&seed.problem, &first, Parameter::Omega, &[1.0], &Default::default()).unwrap();
    let cert = boundedness_scan(&fam, &law).unwrap();
    let expect = first.positions.iter().map(|q| q.norm()).fold(0.0, f64::max);
    assert_eq!(cert.big_c_hat, expect);
}

fn flat_gen() -> RotationGenerator<f64> {
    validate_generator(planar_generator(2, 1.0), SpaceForm::flat(2).unwrap()).unwrap()
}

#[test]
fn newtonian_collision_probe() {
    let path = ShrinkPath::default_for(2, 3).unwrap();
    let grid = shrink_grid(1e-1, 1e-4, 10);
    let res = collision_divergence_probe(&[1.0, 1.0, 1.0], &flat_gen(), &ForceLaw::newtonian(), &path, &grid).unwrap();
    assert!((res.slope + 3.0).abs() <= 0.05, "{}", res.slope);
    assert!(res.triangle_ratio_max <= 1.0 + 1e-12);
    assert!(res.triangle_ratio_max > 0.0);
    assert!(res.remainder_band_ratio <= 10.0);
    assert!(res.rows.last().unwrap().required_bound > 1e6);
    assert!(res.invariants(0.05).iter().all(|c| c.passed));
    assert_eq!(res.first_s_exceeding_c2, Some(1e-1));
}

#[test]
fn quasi_homogeneous_collision_probe() {
    let law = ForceLaw::quasi_homogeneous(1.0, 2.0, 1.0, 3.0).unwrap();
    let path = ShrinkPath::default_for(2, 4).unwrap();
    let grid = shrink_grid(1e-1, 1e-4, 10);
    let res = collision_divergence_probe(&[1.0, 2.0, 0.5, 1.5], &flat_gen(), &law, &path, &grid).unwrap();
    assert!((res.slope + 3.0).abs() <= 0.05, "{}", res.slope);
    let checks = res.invariants(0.05);
    assert!(checks.iter().all(|c| c.passed), "{checks:?}");
}

#[test]
fn probe_rejects_bad_paths_and_grids() {
    let law = ForceLaw::newtonian();
    let gen = flat_gen();
    let grid = shrink_grid(1e-1, 1e-4, 5);
    let intruder = |s: f64| {
        vec![
            DVector::from_vec(vec![s / 2.0, 0.0]),
            DVector::from_vec(vec![-s / 2.0, 0.0]),
            DVector::from_vec(vec![0.0, 10.0 * s]),
        ]
    };
    assert!(matches!(
        collision_divergence_probe(&[1.0; 3], &gen, &law, &intruder, &grid),
        Err(Error::PathViolation(_))
    ));
    let wrong_gap = |s: f64| {
        vec![
            DVector::from_vec(vec![s, 0.0]),
            DVector::from_vec(vec![-s, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
        ]
    };
    assert!(matches!(
        collision_divergence_probe(&[1.0; 3], &gen, &law, &wrong_gap, &grid),
        Err(Error::PathViolation(_))
    ));
    let path = ShrinkPath::default_for(2, 3).unwrap();
    let increasing: Vec<f64> = grid.iter().rev().cloned().collect();
    assert!(collision_divergence_probe(&[1.0; 3], &gen, &law, &path, &increasing).is_err());
    assert!(collision_divergence_probe(&[1.0; 3], &gen, &law, &path, &[1e-3, 1e-9]).is_err());
}

#[test]
fn identity_on_singleton_cluster() {
    let space = SpaceForm::sphere(2).unwrap();
    let q = vec![
        DVector::from_vec(vec![1.0, 0.0, 0.0]),
        DVector::from_vec(vec![0.0, 1.0, 0.0]),
    ];
    let r = curved_cluster_identity(&q, &[1.0, 1.0], space, &[0]).unwrap();
    assert_eq!(r.relative_residual, 0.0);
    assert_eq!(r.lhs_norm, 0.0);
}

#[test]
fn identity_batches_resolve_the_denominator() {
    let s2 = cluster_identity_batch(SpaceForm::sphere(2).unwrap(), 100, 6, 42).unwrap();
    assert!(s2.max_relative_residual < 1e-12, "{s2:?}");
    assert!(s2.readings_coincide);
    let h2 = cluster_identity_batch(SpaceForm::hyperboloid(2).unwrap(), 100, 6, 42).unwrap();
    assert!(h2.max_relative_residual < 1e-12, "{h2:?}");
    assert!(h2.max_literal_relative_residual > 1e-3);
    assert_eq!(h2.resolved_reading, DenominatorReading::SigmaCorrected);
    assert!(!h2.readings_coincide);
    // thread scheduling does not matter
    assert_eq!(h2, cluster_identity_batch(SpaceForm::hyperboloid(2).unwrap(), 100, 6, 42).unwrap());
}

#[test]
fn identity_rejects_antipodal_cluster() {
    let space = SpaceForm::sphere(2).unwrap();
    let q = vec![
        DVector::from_vec(vec![1.0, 0.0, 0.0]),
        DVector::from_vec(vec![-1.0, 0.0, 0.0]),
    ];
    assert!(matches!(
        curved_cluster_identity(&q, &[1.0, 1.0], space, &[0, 1]),
        Err(Error::AntipodalOrCoincidentSingularity { .. })
    ));
}

fn axial(space: SpaceForm) -> RotationGenerator<f64> {
    validate_generator(planar_generator(3, 1.0), space).unwrap()
}

#[test]
fn cluster_divergence_on_both_curvatures() {
    for space in [SpaceForm::sphere(2).unwrap(), SpaceForm::hyperboloid(2).unwrap()] {
        let path = ClusterPath::default_for(space, 3).unwrap();
        let grid = shrink_grid(1e-1, 1e-5, 10);
        let res = curved_cluster_divergence(&[4.0, 4.0, 1.0], &axial(space), &path, &[0, 1], &grid, 0.1).unwrap();
        let checks = res.invariants(1e6, 1e-5, 0.1);
        assert!(checks.iter().all(|c| c.passed), "{space:?}: {checks:?}");
        // R ~ m1 m2 / s
        let last = res.rows.last().unwrap();
        assert!((last.rhs * last.s / 16.0 - 1.0).abs() < 1e-3);
    }
}

#[test]
fn antipodal_guard_is_enforced() {
    let space = SpaceForm::sphere(2).unwrap();
    let mut path = ClusterPath::default_for(space, 3).unwrap();
    path.far = vec![-&path.anchor];
    let grid = shrink_grid(1e-1, 1e-5, 5);
    assert!(matches!(
        curved_cluster_divergence(&[1.0; 3], &axial(space), &path, &[0, 1], &grid, 0.1),
        Err(Error::AntipodalGuardViolation { .. })
    ));
}

#[test]
fn cluster_path_violation() {
    let space = SpaceForm::hyperboloid(2).unwrap();
    let path = ClusterPath::default_for(space, 3).unwrap();
    let anchor = path.anchor.clone();
    let creeping = move |s: f64| {
        let mut q = path.positions(s);
        // third body follows the cluster in
        let t = 5.0 * s;
        q[2] = &anchor * (1.0 + t * t).sqrt() + DVector::from_vec(vec![0.0, t, 0.0]) * 1.0;
        q
    };
    let grid = shrink_grid(1e-1, 1e-4, 5);
    assert!(matches!(
        curved_cluster_divergence(&[1.0; 3], &axial(space), &creeping, &[0, 1], &grid, 0.1),
        Err(Error::PathViolation(_))
    ));
}
