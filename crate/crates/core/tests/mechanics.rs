use approx::assert_relative_eq;
use nalgebra::Vector2;
use proptest::prelude::*;

use fieldgen::arm::{home_posture, ArmParams, JointState};
use fieldgen::controllers::DesiredTrajectory;

fn posture() -> impl Strategy<Value = Vector2<f64>> {
    (-1.0f64..2.5, 0.15f64..2.9).prop_map(|(a, b)| Vector2::new(a, b))
}

fn rates() -> impl Strategy<Value = Vector2<f64>> {
    (-4.0f64..4.0, -4.0f64..4.0).prop_map(|(a, b)| Vector2::new(a, b))
}

proptest! {
    #[test]
    fn inertia_is_symmetric_positive_definite(q in posture()) {
        let m = ArmParams::default().inertia_matrix(&q);
        prop_assert_eq!(m.m12, m.m21);
        prop_assert!(m.m11 > 0.0 && m.determinant() > 0.0);
    }

    #[test]
    fn passivity_skew_symmetry(q in posture(), qd in rates()) {
        let arm = ArmParams::default();
        let n = arm.inertia_dot(&q, &qd) - 2.0 * arm.coriolis_matrix(&q, &qd);
        prop_assert!((n + n.transpose()).norm() < 1e-9);
    }

    #[test]
    fn kinematics_round_trip(q in posture()) {
        let arm = ArmParams::default();
        let p = arm.forward_kinematics(&q);
        let back = arm.inverse_kinematics(&p).unwrap();
        prop_assert!((arm.forward_kinematics(&back) - p).norm() < 1e-10);
        // Elbow-positive branch recovers the posture itself.
        let d = back - q;
        let wrapped = Vector2::new(d.x.sin().atan2(d.x.cos()), d.y);
        prop_assert!(wrapped.norm() < 1e-8);
    }

    #[test]
    fn hand_and_joint_states_agree(q in posture(), qd in rates(), qdd in rates()) {
        let arm = ArmParams::default();
        let hand = arm.hand_state(&JointState { q, qd, qdd });
        let joint = arm.joint_state(&hand).unwrap();
        prop_assert!((joint.qd - qd).norm() < 1e-8 * (1.0 + qd.norm()));
        prop_assert!((joint.qdd - qdd).norm() < 1e-7 * (1.0 + qdd.norm() + qd.norm_squared()));
    }

    #[test]
    fn jacobian_dot_matches_differences(q in posture(), qd in rates()) {
        let arm = ArmParams::default();
        let h = 1e-6;
        let fd = (arm.jacobian(&(q + qd * h)) - arm.jacobian(&(q - qd * h))) / (2.0 * h);
        prop_assert!((fd - arm.jacobian_dot(&q, &qd)).norm() < 1e-6 * (1.0 + qd.norm()));
    }
}

#[test]
fn home_posture_puts_the_hand_at_the_origin() {
    let arm = ArmParams::default();
    let p = arm.forward_kinematics(&home_posture());
    assert!(p.norm() < 1e-12, "{p}");
    assert_relative_eq!(home_posture().x, 45f64.to_radians());
    assert_relative_eq!(home_posture().y, 90f64.to_radians());
}

#[test]
fn gravity_free_arm_at_rest_stays_at_rest() {
    let arm = ArmParams::default();
    let a = arm.forward_dynamics(&home_posture(), &Vector2::zeros(), &Vector2::zeros(), &Vector2::zeros());
    assert_eq!(a, Vector2::zeros());
}

#[test]
fn straight_plan_reaches_target_and_stops() {
    let arm = ArmParams::default();
    for d in [0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0] {
        let plan = DesiredTrajectory::straight(&arm, Vector2::zeros(), d, 0.1, 0.375, 5e-4).unwrap();
        let last = plan.samples().last().unwrap();
        let goal = Vector2::new(d.to_radians().cos(), d.to_radians().sin()) * 0.1;
        assert!((last.p - goal).norm() < 1e-12);
        assert!(last.v.norm() < 1e-12 && last.qd.norm() < 1e-12);
        assert!((arm.forward_kinematics(&last.q) - goal).norm() < 1e-12);
    }
}
