//! Planar two-link arm: kinematics and rigid-body dynamics.
//!
//! Angles follow the usual robotics convention: the shoulder angle `q1` is
//! measured counter-clockwise from the +x axis and the elbow angle `q2` is
//! the relative flexion of the forearm. Gravity is absent (the arm moves in
//! a horizontal plane).

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::ArmError;

/// Shoulder and elbow angles of the home posture, in degrees.
pub const HOME_POSTURE_DEG: (f64, f64) = (45.0, 90.0);

/// Physical description of the arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmParams {
    /// Upper-arm mass (kg).
    pub m1: f64,
    /// Forearm + hand mass (kg).
    pub m2: f64,
    /// Link lengths (m).
    pub l1: f64,
    pub l2: f64,
    /// Proximal joint to centre of mass (m).
    pub r1: f64,
    pub r2: f64,
    /// Moments of inertia about each link's centre of mass (kg m^2).
    pub i1: f64,
    pub i2: f64,
    /// Shoulder position in workspace coordinates (m).
    pub base: [f64; 2],
}

impl Default for ArmParams {
    fn default() -> Self {
        let (m1, m2, l1, l2) = (1.93, 1.52, 0.33, 0.34);
        ArmParams::with_home(
            ArmParams {
                m1,
                m2,
                l1,
                l2,
                r1: 0.165,
                r2: 0.19,
                i1: m1 * l1 * l1 / 12.0,
                i2: m2 * l2 * l2 / 12.0,
                base: [0.0, 0.0],
            },
            Vector2::zeros(),
        )
    }
}

impl ArmParams {
    /// Returns a copy whose shoulder is placed so that the home posture puts
    /// the hand at `home`.
    pub fn with_home(mut self, home: Vector2<f64>) -> Self {
        self.base = [0.0, 0.0];
        let q = home_posture();
        let rel = self.forward_kinematics(&q);
        self.base = [home.x - rel.x, home.y - rel.y];
        self
    }

    pub fn validate(&self) -> Result<(), ArmError> {
        let positive = [
            ("m1", self.m1),
            ("m2", self.m2),
            ("l1", self.l1),
            ("l2", self.l2),
            ("r1", self.r1),
            ("r2", self.r2),
            ("i1", self.i1),
            ("i2", self.i2),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ArmError::InvalidParameter(format!(
                    "{name} must be finite and positive, got {value}"
                )));
            }
        }
        if self.r1 > self.l1 || self.r2 > self.l2 {
            return Err(ArmError::InvalidParameter(
                "centre of mass must lie on its link (r <= l)".into(),
            ));
        }
        if !(self.base[0].is_finite() && self.base[1].is_finite()) {
            return Err(ArmError::InvalidParameter("base must be finite".into()));
        }
        Ok(())
    }

    pub fn base(&self) -> Vector2<f64> {
        Vector2::new(self.base[0], self.base[1])
    }

    /// Hand position for joint angles `q`.
    pub fn forward_kinematics(&self, q: &Vector2<f64>) -> Vector2<f64> {
        let (s1, c1) = q.x.sin_cos();
        let (s12, c12) = (q.x + q.y).sin_cos();
        Vector2::new(
            self.base[0] + self.l1 * c1 + self.l2 * c12,
            self.base[1] + self.l1 * s1 + self.l2 * s12,
        )
    }

    /// End-point Jacobian dp/dq.
    pub fn jacobian(&self, q: &Vector2<f64>) -> Matrix2<f64> {
        let (s1, c1) = q.x.sin_cos();
        let (s12, c12) = (q.x + q.y).sin_cos();
        Matrix2::new(
            -self.l1 * s1 - self.l2 * s12,
            -self.l2 * s12,
            self.l1 * c1 + self.l2 * c12,
            self.l2 * c12,
        )
    }

    /// Time derivative of the Jacobian along joint velocity `qd`.
    pub fn jacobian_dot(&self, q: &Vector2<f64>, qd: &Vector2<f64>) -> Matrix2<f64> {
        let (s1, c1) = q.x.sin_cos();
        let (s12, c12) = (q.x + q.y).sin_cos();
        let w1 = qd.x;
        let w12 = qd.x + qd.y;
        Matrix2::new(
            -self.l1 * c1 * w1 - self.l2 * c12 * w12,
            -self.l2 * c12 * w12,
            -self.l1 * s1 * w1 - self.l2 * s12 * w12,
            -self.l2 * s12 * w12,
        )
    }

    /// Joint angles placing the hand at `p`, elbow branch `q2 in (0, pi)`.
    pub fn inverse_kinematics(&self, p: &Vector2<f64>) -> Result<Vector2<f64>, ArmError> {
        let rel = p - self.base();
        let r2 = rel.norm_squared();
        let r = r2.sqrt();
        let inner = (self.l1 - self.l2).abs();
        let outer = self.l1 + self.l2;
        if !(r > inner && r < outer) {
            return Err(ArmError::Unreachable {
                x: p.x,
                y: p.y,
                distance: r,
                inner,
                outer,
            });
        }
        let c2 = ((r2 - self.l1 * self.l1 - self.l2 * self.l2) / (2.0 * self.l1 * self.l2))
            .clamp(-1.0, 1.0);
        let q2 = c2.acos();
        let (s2, c2) = q2.sin_cos();
        let q1 = rel.y.atan2(rel.x) - (self.l2 * s2).atan2(self.l1 + self.l2 * c2);
        Ok(Vector2::new(q1, q2))
    }

    fn inertia_constants(&self) -> (f64, f64, f64) {
        let a1 = self.i1
            + self.m1 * self.r1 * self.r1
            + self.i2
            + self.m2 * (self.l1 * self.l1 + self.r2 * self.r2);
        let a2 = self.m2 * self.l1 * self.r2;
        let a3 = self.i2 + self.m2 * self.r2 * self.r2;
        (a1, a2, a3)
    }

    /// Joint-space inertia matrix. Depends on the elbow angle only.
    pub fn inertia_matrix(&self, q: &Vector2<f64>) -> Matrix2<f64> {
        let (a1, a2, a3) = self.inertia_constants();
        let c2 = q.y.cos();
        let off = a3 + a2 * c2;
        Matrix2::new(a1 + 2.0 * a2 * c2, off, off, a3)
    }

    /// Coriolis/centripetal matrix from Christoffel symbols, so that
    /// `dI/dt - 2C` is skew-symmetric.
    pub fn coriolis_matrix(&self, q: &Vector2<f64>, qd: &Vector2<f64>) -> Matrix2<f64> {
        let (_, a2, _) = self.inertia_constants();
        let h = a2 * q.y.sin();
        Matrix2::new(-h * qd.y, -h * (qd.x + qd.y), h * qd.x, 0.0)
    }

    /// Time derivative of the inertia matrix along `qd`.
    pub fn inertia_dot(&self, q: &Vector2<f64>, qd: &Vector2<f64>) -> Matrix2<f64> {
        let (_, a2, _) = self.inertia_constants();
        let d = -a2 * q.y.sin() * qd.y;
        Matrix2::new(2.0 * d, d, d, 0.0)
    }

    /// Joint accelerations from `I(q) qdd + C(q, qd) qd = tau + J^T f_hand`.
    pub fn forward_dynamics(
        &self,
        q: &Vector2<f64>,
        qd: &Vector2<f64>,
        tau: &Vector2<f64>,
        f_hand: &Vector2<f64>,
    ) -> Vector2<f64> {
        let inertia = self.inertia_matrix(q);
        let rhs = tau + self.jacobian(q).transpose() * f_hand
            - self.coriolis_matrix(q, qd) * qd;
        solve2(&inertia, &rhs)
    }

    /// Kinetic energy `0.5 qd^T I(q) qd`.
    pub fn kinetic_energy(&self, q: &Vector2<f64>, qd: &Vector2<f64>) -> f64 {
        0.5 * qd.dot(&(self.inertia_matrix(q) * qd))
    }

    /// Hand kinematics for a joint state.
    pub fn hand_state(&self, joint: &JointState) -> HandState {
        let jac = self.jacobian(&joint.q);
        HandState {
            p: self.forward_kinematics(&joint.q),
            v: jac * joint.qd,
            a: jac * joint.qdd + self.jacobian_dot(&joint.q, &joint.qd) * joint.qd,
        }
    }

    /// Joint state reproducing a hand state, via inverse kinematics and the
    /// Jacobian chain rule.
    pub fn joint_state(&self, hand: &HandState) -> Result<JointState, ArmError> {
        let q = self.inverse_kinematics(&hand.p)?;
        let jac = self.jacobian(&q);
        let qd = solve2(&jac, &hand.v);
        let qdd = solve2(&jac, &(hand.a - self.jacobian_dot(&q, &qd) * qd));
        Ok(JointState { q, qd, qdd })
    }
}

/// Home posture in radians.
pub fn home_posture() -> Vector2<f64> {
    Vector2::new(
        HOME_POSTURE_DEG.0.to_radians(),
        HOME_POSTURE_DEG.1.to_radians(),
    )
}

/// Closed-form solve of a 2x2 system. The arm matrices are never singular
/// away from full extension, which inverse kinematics excludes.
pub(crate) fn solve2(m: &Matrix2<f64>, b: &Vector2<f64>) -> Vector2<f64> {
    let det = m.m11 * m.m22 - m.m12 * m.m21;
    Vector2::new(
        (m.m22 * b.x - m.m12 * b.y) / det,
        (m.m11 * b.y - m.m21 * b.x) / det,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub q: Vector2<f64>,
    pub qd: Vector2<f64>,
    pub qdd: Vector2<f64>,
}

impl JointState {
    pub fn at_rest(q: Vector2<f64>) -> Self {
        JointState {
            q,
            qd: Vector2::zeros(),
            qdd: Vector2::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandState {
    pub p: Vector2<f64>,
    pub v: Vector2<f64>,
    pub a: Vector2<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn at_origin() -> ArmParams {
        ArmParams {
            base: [0.0, 0.0],
            ..ArmParams::default()
        }
    }

    #[test]
    fn fk_extended_and_rotated() {
        let arm = at_origin();
        let p = arm.forward_kinematics(&Vector2::new(0.0, 0.0));
        assert_relative_eq!(p.x, 0.67, epsilon = 1e-12);
        assert_relative_eq!(p.y, 0.0, epsilon = 1e-12);
        let p = arm.forward_kinematics(&Vector2::new(FRAC_PI_2, 0.0));
        assert_relative_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.y, 0.67, epsilon = 1e-12);
    }

    #[test]
    fn default_home_is_origin() {
        let arm = ArmParams::default();
        let p = arm.forward_kinematics(&home_posture());
        assert!(p.norm() < 1e-12);
        let q = arm.inverse_kinematics(&Vector2::zeros()).unwrap();
        assert_relative_eq!(q.x.to_degrees(), 45.0, epsilon = 1e-9);
        assert_relative_eq!(q.y.to_degrees(), 90.0, epsilon = 1e-9);
    }

    #[test]
    fn jacobian_at_right_angle_elbow() {
        let arm = at_origin();
        let j = arm.jacobian(&Vector2::new(0.0, FRAC_PI_2));
        assert_relative_eq!(j.m11, -arm.l2, epsilon = 1e-12);
        assert_relative_eq!(j.m12, -arm.l2, epsilon = 1e-12);
        assert_relative_eq!(j.m21, arm.l1, epsilon = 1e-12);
        assert_relative_eq!(j.m22, 0.0, epsilon = 1e-12);
        assert_relative_eq!(arm.jacobian(&Vector2::zeros()).determinant(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn ik_rejects_points_outside_annulus() {
        let arm = at_origin();
        let err = arm.inverse_kinematics(&Vector2::new(0.68, 0.0)).unwrap_err();
        assert!(matches!(err, ArmError::Unreachable { .. }));
        assert!(arm.inverse_kinematics(&Vector2::new(0.005, 0.0)).is_err());
    }

    #[test]
    fn inertia_is_spd_and_independent_of_shoulder() {
        let arm = ArmParams::default();
        let a = arm.inertia_matrix(&Vector2::new(0.1, 1.2));
        let b = arm.inertia_matrix(&Vector2::new(2.7, 1.2));
        assert_eq!(a, b);
        assert_eq!(a.m12, a.m21);
        assert!(a.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn exact_coriolis_compensation_gives_zero_acceleration() {
        let arm = ArmParams::default();
        let q = Vector2::new(0.7, 1.4);
        let qd = Vector2::new(1.3, -2.1);
        let tau = arm.coriolis_matrix(&q, &qd) * qd;
        let qdd = arm.forward_dynamics(&q, &qd, &tau, &Vector2::zeros());
        assert!(qdd.norm() < 1e-12);
    }

    #[test]
    fn static_force_map() {
        let arm = ArmParams::default();
        let q = home_posture();
        let f = Vector2::new(1.0, 0.0);
        let qdd = arm.forward_dynamics(&q, &Vector2::zeros(), &Vector2::zeros(), &f);
        let expected = arm.inertia_matrix(&q).try_inverse().unwrap() * arm.jacobian(&q).transpose() * f;
        assert_relative_eq!(qdd, expected, epsilon = 1e-12);
    }

    #[test]
    fn joint_and_hand_states_round_trip() {
        let arm = ArmParams::default();
        let joint = JointState {
            q: Vector2::new(0.9, 1.3),
            qd: Vector2::new(0.4, -0.8),
            qdd: Vector2::new(-3.0, 5.0),
        };
        let back = arm.joint_state(&arm.hand_state(&joint)).unwrap();
        assert_relative_eq!(back.q, joint.q, epsilon = 1e-10);
        assert_relative_eq!(back.qd, joint.qd, epsilon = 1e-10);
        assert_relative_eq!(back.qdd, joint.qdd, epsilon = 1e-9);
    }

    #[test]
    fn validation_rejects_com_outside_link() {
        let arm = ArmParams {
            r1: 0.5,
            ..ArmParams::default()
        };
        assert!(arm.validate().is_err());
        assert!(ArmParams::default().validate().is_ok());
    }
}
