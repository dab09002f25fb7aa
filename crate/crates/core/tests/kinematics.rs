mod common;

use std::time::Instant;

use fls_core::ik::{solve_ik, track_trajectory, IkProblem, IkSettings};
use fls_core::kinematics::{forward_kinematics, jacobians, ChainModel, JointState};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{fd_jacobian, perturbed, random_configuration, rel_err};

#[test]
fn jacobian_matches_central_differences() {
    let chain = ChainModel::synthetic_7r();
    let n = chain.dof();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let q = random_configuration(&chain, &mut rng, 0.01, (0.0, chain.forcep_length()));
        let j = jacobians(&chain, &q).unwrap();
        let (fd_f, fd_v) = fd_jacobian(&chain, &q, 1e-6);
        let an_f: Vec<f64> = (0..3).flat_map(|r| (0..=n).map(move |c| (r, c))).map(|(r, c)| j.forcep[(r, c)]).collect();
        let an_v: Vec<f64> = (0..3).flat_map(|r| (0..=n).map(move |c| (r, c))).map(|(r, c)| j.virtual_tip[(r, c)]).collect();
        worst = worst.max(rel_err(&an_f, &fd_f)).max(rel_err(&an_v, &fd_v));
    }
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn forcep_column_for_virtual_joint_is_zero() {
    let chain = ChainModel::synthetic_7r();
    let q = chain.mid_configuration();
    let j = jacobians(&chain, &q).unwrap();
    let n = chain.dof();
    for r in 0..3 {
        assert_eq!(j.forcep[(r, n)], 0.0);
    }
    let axis = j.virtual_tip.column(n).norm();
    assert!((axis - 1.0).abs() < 1e-12);
}

#[test]
fn ik_recovers_fk_generated_targets() {
    let chain = ChainModel::synthetic_7r();
    let fl = chain.forcep_length();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t0 = Instant::now();
    let (mut converged, mut worst_tip, mut worst_port) = (0, 0.0_f64, 0.0_f64);
    for _ in 0..1000 {
        let q = random_configuration(&chain, &mut rng, 0.05, (0.2 * fl, 0.8 * fl));
        let fk = chain.fk_unchecked(&q);
        let seed = perturbed(&chain, &q, &mut rng, 0.2);
        let sol = solve_ik(&chain, &IkProblem::new(fk.forcep_tip, fk.virtual_tip, seed)).unwrap();
        converged += sol.converged as usize;
        worst_tip = worst_tip.max(sol.residual_tip);
        worst_port = worst_port.max(sol.residual_port);
        forward_kinematics(&chain, &sol.q).expect("solution within limits");
    }
    assert_eq!(converged, 1000);
    assert!(worst_tip < 1e-3 && worst_port < 1e-3, "tip {worst_tip:e} port {worst_port:e}");
    assert!(t0.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn port_stays_fixed_along_a_tracked_sweep() {
    let chain = ChainModel::synthetic_7r();
    let mut q0 = chain.mid_configuration();
    q0.theta[3] = -1.5;
    q0.theta_virtual = 0.6 * chain.forcep_length();
    let fk = chain.fk_unchecked(&q0);
    let port = fk.virtual_tip;
    let centre = fk.forcep_tip;
    let targets: Vec<Vector3<f64>> = (0..500)
        .map(|k| {
            let a = k as f64 / 500.0 * std::f64::consts::TAU;
            centre + Vector3::new(20.0 * a.cos() - 20.0, 20.0 * a.sin(), 10.0 * (2.0 * a).sin())
        })
        .collect();
    let sols = track_trajectory(&chain, &targets, port, q0, IkSettings::default()).unwrap();
    let worst_port = sols.iter().map(|s| s.residual_port).fold(0.0, f64::max);
    let worst_tip = sols.iter().map(|s| s.residual_tip).fold(0.0, f64::max);
    assert!(sols.iter().all(|s| s.converged));
    assert!(worst_port < 1e-3, "port {worst_port:e}");
    assert!(worst_tip < 1e-3, "tip {worst_tip:e}");
    for s in &sols {
        let f = chain.fk_unchecked(&s.q);
        assert!((f.virtual_tip - port).norm() < 1e-3);
    }
}

#[test]
fn limits_are_enforced() {
    let chain = ChainModel::synthetic_7r();
    let mut q = chain.mid_configuration();
    q.theta[2] = chain.joints()[2].hi + 0.01;
    assert!(forward_kinematics(&chain, &q).is_err());
    let mut q = chain.mid_configuration();
    q.theta_virtual = -1.0;
    assert!(forward_kinematics(&chain, &q).is_err());
    let q = JointState::zeros(3);
    assert!(forward_kinematics(&chain, &q).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn virtual_tip_lies_on_the_shaft(seed in 0u64..10_000, v in 0.0f64..1.0) {
        let chain = ChainModel::synthetic_7r();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = random_configuration(&chain, &mut rng, 0.0, (0.0, 1.0));
        q.theta_virtual = v * chain.forcep_length();
        let fk = chain.fk_unchecked(&q);
        let hand = fk.hand.position;
        let along = (fk.virtual_tip - hand).norm() + (fk.forcep_tip - fk.virtual_tip).norm();
        prop_assert!((along - chain.forcep_length()).abs() < 1e-9);
    }

    #[test]
    fn ik_solutions_respect_limits(seed in 0u64..10_000) {
        let chain = ChainModel::synthetic_7r();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fl = chain.forcep_length();
        let q = random_configuration(&chain, &mut rng, 0.05, (0.2 * fl, 0.8 * fl));
        let fk = chain.fk_unchecked(&q);
        let start = perturbed(&chain, &q, &mut rng, 0.5);
        let sol = solve_ik(&chain, &IkProblem::new(fk.forcep_tip, fk.virtual_tip, start)).unwrap();
        prop_assert!(forward_kinematics(&chain, &sol.q).is_ok());
        prop_assert!(sol.residual_tip.is_finite() && sol.residual_port.is_finite());
    }
}
