mod common;

use fls_core::config::RunConfig;
use fls_core::phase::{
    constrained_filter, detect_phases, extract_constraints, feedback_force, ConstraintSet, PhaseConstraint,
};
use fls_core::scene::Arm;
use fls_core::sim::Rig;
use fls_core::teacher::{exemplary_demo, TeacherConfig};
use fls_core::trajectory::DemoRecord;
use proptest::prelude::*;

use common::{brute_force_bands, brute_force_labels};

#[test]
fn exemplary_demo_has_eight_phases_and_exact_bands() {
    let cfg = RunConfig::default();
    let rig = Rig::default_rig().unwrap();
    let ex = exemplary_demo(&rig, &TeacherConfig::default(), cfg.exemplary_peg).unwrap();
    let steps = &ex.record.steps;
    let n_thre = cfg.transitions.n_thre_constraint_gen;
    assert_eq!(n_thre, 20);
    let thr = cfg.transitions.velocity_threshold;
    let trace = detect_phases(steps, thr, n_thre).unwrap();
    assert_eq!(trace.phase_count(), 8);

    let labels = brute_force_labels(steps, thr, n_thre);
    assert_eq!(*labels.last().unwrap(), 8);
    let oracle = brute_force_bands(steps, &labels);
    let bands = extract_constraints(steps, &trace).unwrap();
    assert_eq!(bands.len(), oracle.len());
    for (b, (phase, arm, lo, hi)) in bands.iter().zip(&oracle) {
        assert_eq!((b.phase, b.arm), (*phase, *arm));
        assert_eq!(b.z_lo, *lo, "phase {phase} {arm:?}");
        assert_eq!(b.z_hi, *hi, "phase {phase} {arm:?}");
    }
}

#[test]
fn phases_survive_a_log_round_trip() {
    let rig = Rig::default_rig().unwrap();
    let ex = exemplary_demo(&rig, &TeacherConfig::default(), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exemplary.log");
    ex.record.write_log(&path).unwrap();
    let back = DemoRecord::read_log(&path).unwrap();
    assert_eq!(back.steps, ex.record.steps);
    let a = detect_phases(&ex.record.steps, 1.0, 20).unwrap();
    let b = detect_phases(&back.steps, 1.0, 20).unwrap();
    assert_eq!(a, b);

    let set = ConstraintSet::new(extract_constraints(&back.steps, &b).unwrap());
    let cpath = dir.path().join("constraints.txt");
    set.write(&cpath).unwrap();
    assert_eq!(ConstraintSet::read(&cpath).unwrap(), set);
}

fn band(lo: f64, hi: f64) -> PhaseConstraint {
    PhaseConstraint {
        phase: 1,
        arm: Arm::Left,
        z_lo: lo,
        z_hi: hi,
    }
}

#[test]
fn force_law_sweep() {
    for kp in [0.5, 0.1, 2.0] {
        let c = band(25.0, 45.0);
        let n = 20_001;
        let zs: Vec<f64> = (0..n).map(|i| 0.0 + 70.0 * i as f64 / (n - 1) as f64).collect();
        let f: Vec<f64> = zs.iter().map(|z| feedback_force(*z, &c, kp)).collect();
        for (z, v) in zs.iter().zip(&f) {
            if (25.0..=45.0).contains(z) {
                assert_eq!(*v, 0.0);
            }
        }
        for w in zs.windows(2).zip(f.windows(2)) {
            let ((z0, z1), (f0, f1)) = ((w.0[0], w.0[1]), (w.1[0], w.1[1]));
            let slope = (f1 - f0) / (z1 - z0);
            if z1 < 25.0 {
                assert!((slope + kp).abs() < 1e-9, "slope {slope} below band");
            } else if z0 > 45.0 {
                assert!((slope + kp).abs() < 1e-9, "slope {slope} above band");
            }
        }
        // Restoring: positive below the band, negative above.
        assert!(feedback_force(10.0, &c, kp) > 0.0);
        assert!(feedback_force(60.0, &c, kp) < 0.0);
        for edge in [25.0_f64, 45.0] {
            let eps = 1e-13;
            let jump = (feedback_force(edge - eps, &c, kp) - feedback_force(edge + eps, &c, kp)).abs();
            assert!(jump < 1e-12, "jump {jump:e} at {edge}");
            assert_eq!(feedback_force(edge, &c, kp), 0.0);
        }
    }
}

#[test]
fn kp_is_configurable() {
    assert_eq!(RunConfig::default().kp, 0.5);
    let cfg = RunConfig::from_toml("kp = 1.25").unwrap();
    assert_eq!(cfg.kp, 1.25);
    assert!(RunConfig::from_toml("kp = -1.0").is_err());
}

proptest! {
    #[test]
    fn full_compliance_lands_in_band(lo in -50.0f64..50.0, w in 0.0f64..40.0, z in -200.0f64..200.0) {
        let c = band(lo, lo + w);
        let out = constrained_filter(&[z], &c, 1.0).unwrap()[0];
        prop_assert!(c.contains(out));
        prop_assert!(c.violation(out) == 0.0);
        prop_assert!((feedback_force(out, &c, 0.5)).abs() < 1e-12);
    }

    #[test]
    fn force_is_minus_kp_times_signed_violation(lo in -50.0f64..50.0, w in 0.0f64..40.0, z in -200.0f64..200.0, kp in 0.0f64..5.0) {
        let c = band(lo, lo + w);
        let f = feedback_force(z, &c, kp);
        prop_assert!((f.abs() - kp * c.violation(z)).abs() < 1e-9);
        prop_assert!(f * (z - (lo + 0.5 * w)) <= 0.0);
    }
}
