//! Desired trajectories, learned field representations and the torque
//! policies of the two candidate models.
//!
//! Both models share a feed-forward command that reproduces the planned
//! motion through inverse dynamics and cancels the estimated curl field:
//!
//! `tau_ff = I(q) qdd_des + C(q, qd) qd_des - J^T (alpha_hat [0 1; -1 0] v)`
//!
//! The impedance model adds a restoring joint-space spring-damper around the
//! planned (baseline) trajectory:
//!
//! `tau_fb = -(alpha_k K_nom (q - q_des) + alpha_b B_nom (qd - qd_des))`

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::arm::{ArmParams, HandState};
use crate::environment::curl_force;
use crate::error::{ArmError, SimError};

/// Nominal joint stiffness (N m/rad).
pub const K_NOMINAL: [[f64; 2]; 2] = [[32.0, 16.0], [16.0, 21.0]];
/// Nominal joint damping (N m s/rad).
pub const B_NOMINAL: [[f64; 2]; 2] = [[5.0, 3.0], [3.0, 4.0]];
/// Planned movement time (s), the middle of the accepted 300-450 ms window.
pub const DEFAULT_MOVEMENT_TIME: f64 = 0.375;
/// Home-to-target distance (m).
pub const DEFAULT_REACH_DISTANCE: f64 = 0.10;

/// Wraps an angle in degrees to (-180, 180].
pub fn wrap_deg(angle: f64) -> f64 {
    let mut a = angle % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

/// Unit vector pointing along a reach direction given in degrees.
pub fn direction_vector(direction_deg: f64) -> Vector2<f64> {
    let (s, c) = direction_deg.to_radians().sin_cos();
    Vector2::new(c, s)
}

/// Normalized quintic minimum-jerk progress and its first two time
/// derivatives at time `t` for duration `duration`. Held at the ends.
pub fn min_jerk_progress(duration: f64, t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if t >= duration {
        return (1.0, 0.0, 0.0);
    }
    let tau = t / duration;
    let tau2 = tau * tau;
    let tau3 = tau2 * tau;
    let s = tau3 * (10.0 - 15.0 * tau + 6.0 * tau2);
    let sd = 30.0 * tau2 * (1.0 - tau) * (1.0 - tau) / duration;
    let sdd = 60.0 * tau * (1.0 - 3.0 * tau + 2.0 * tau2) / (duration * duration);
    (s, sd, sdd)
}

/// Straight-line minimum-jerk position, velocity and acceleration.
pub fn min_jerk(
    start: &Vector2<f64>,
    goal: &Vector2<f64>,
    duration: f64,
    t: f64,
) -> (Vector2<f64>, Vector2<f64>, Vector2<f64>) {
    let (s, sd, sdd) = min_jerk_progress(duration, t);
    let d = goal - start;
    (start + d * s, d * sd, d * sdd)
}

/// Which internal-representation model a parameter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Standard,
    Impedance,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Standard => "standard",
            ModelKind::Impedance => "impedance",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(ModelKind::Standard),
            "impedance" => Ok(ModelKind::Impedance),
            other => Err(format!("unknown model '{other}'")),
        }
    }
}

/// Gaussian tuning of the learned field estimate over reach direction.
///
/// `offset_deg` is present for the standard model and absent for the
/// impedance model, whose representation is centred on the training
/// direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Representation {
    pub amplitude: f64,
    pub sigma_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_deg: Option<f64>,
    pub train_deg: f64,
}

impl Representation {
    pub fn standard(amplitude: f64, sigma_deg: f64, offset_deg: f64, train_deg: f64) -> Self {
        Representation {
            amplitude,
            sigma_deg,
            offset_deg: Some(offset_deg),
            train_deg,
        }
    }

    pub fn centered(amplitude: f64, sigma_deg: f64, train_deg: f64) -> Self {
        Representation {
            amplitude,
            sigma_deg,
            offset_deg: None,
            train_deg,
        }
    }

    /// No learning: zero amplitude.
    pub fn naive(model: ModelKind, train_deg: f64) -> Self {
        match model {
            ModelKind::Standard => Self::standard(0.0, 30.0, 0.0, train_deg),
            ModelKind::Impedance => Self::centered(0.0, 30.0, train_deg),
        }
    }

    pub fn model(&self) -> ModelKind {
        if self.offset_deg.is_some() {
            ModelKind::Standard
        } else {
            ModelKind::Impedance
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma_deg > 0.0 && self.sigma_deg.is_finite()) {
            return Err(format!("sigma must be positive, got {}", self.sigma_deg));
        }
        if !self.amplitude.is_finite() || !self.train_deg.is_finite() {
            return Err("amplitude and training direction must be finite".into());
        }
        if let Some(mu) = self.offset_deg {
            if !mu.is_finite() {
                return Err("offset must be finite".into());
            }
        }
        Ok(())
    }

    /// Estimated field strength as a fraction of the true gain.
    pub fn gain_fraction(&self, direction_deg: f64) -> f64 {
        let delta = wrap_deg(direction_deg - self.train_deg - self.offset_deg.unwrap_or(0.0));
        self.amplitude * (-delta * delta / (2.0 * self.sigma_deg * self.sigma_deg)).exp()
    }
}

/// Estimated curl gain `alpha_hat` (N s/m) for a reach in `direction_deg`.
pub fn representation_strength(rep: &Representation, direction_deg: f64, alpha_true: f64) -> f64 {
    rep.gain_fraction(direction_deg) * alpha_true
}

/// Scale factors on the nominal joint stiffness and damping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpedanceScaling {
    pub alpha_k: f64,
    pub alpha_b: f64,
}

impl ImpedanceScaling {
    /// Gains fitted to baseline indices in the reference study.
    pub const BASELINE: ImpedanceScaling = ImpedanceScaling {
        alpha_k: 0.7278,
        alpha_b: 0.0723,
    };
    /// Gains fitted to post-adaptation indices in the reference study.
    pub const POST_ADAPTATION: ImpedanceScaling = ImpedanceScaling {
        alpha_k: 0.1406,
        alpha_b: 0.7108,
    };

    pub fn stiffness(&self) -> Matrix2<f64> {
        self.alpha_k * mat(K_NOMINAL)
    }

    pub fn damping(&self) -> Matrix2<f64> {
        self.alpha_b * mat(B_NOMINAL)
    }
}

fn mat(m: [[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}

/// One sample of a planned movement in hand and joint coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanSample {
    pub p: Vector2<f64>,
    pub v: Vector2<f64>,
    pub a: Vector2<f64>,
    pub q: Vector2<f64>,
    pub qd: Vector2<f64>,
    pub qdd: Vector2<f64>,
}

/// A planned hand movement sampled on a uniform grid, with its joint-space
/// image. After the last sample the plan holds still at the final posture.
#[derive(Debug, Clone, PartialEq)]
pub struct DesiredTrajectory {
    step: f64,
    samples: Vec<PlanSample>,
}

impl DesiredTrajectory {
    /// Samples a hand-space plan `path(t)` on `[0, duration]` with spacing
    /// `step`. Joint images come from inverse kinematics and the Jacobian
    /// chain rule at each sample.
    pub fn from_hand_path<F>(
        arm: &ArmParams,
        duration: f64,
        step: f64,
        path: F,
    ) -> Result<Self, ArmError>
    where
        F: Fn(f64) -> HandState,
    {
        let n = (duration / step).round() as usize;
        let mut samples = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let hand = path(i as f64 * step);
            let joint = arm.joint_state(&hand)?;
            samples.push(PlanSample {
                p: hand.p,
                v: hand.v,
                a: hand.a,
                q: joint.q,
                qd: joint.qd,
                qdd: joint.qdd,
            });
        }
        Ok(DesiredTrajectory { step, samples })
    }

    /// Straight minimum-jerk reach from `home` in `direction_deg`.
    pub fn straight(
        arm: &ArmParams,
        home: Vector2<f64>,
        direction_deg: f64,
        distance: f64,
        movement_time: f64,
        step: f64,
    ) -> Result<Self, ArmError> {
        Self::curved(arm, home, direction_deg, distance, movement_time, step, 0.0)
    }

    /// Minimum-jerk reach bowed sideways by a half-sine of peak
    /// `lateral_peak` metres (positive to the left of the reach, i.e.
    /// counter-clockwise). The lateral offset follows the normalized
    /// progress `s` of the quintic as `lateral_peak * sin(pi s)`.
    pub fn curved(
        arm: &ArmParams,
        home: Vector2<f64>,
        direction_deg: f64,
        distance: f64,
        movement_time: f64,
        step: f64,
        lateral_peak: f64,
    ) -> Result<Self, ArmError> {
        let u = direction_vector(direction_deg);
        let n = Vector2::new(-u.y, u.x);
        Self::from_hand_path(arm, movement_time, step, |t| {
            let (s, sd, sdd) = min_jerk_progress(movement_time, t);
            let (sin, cos) = (PI * s).sin_cos();
            let tangent = u * distance + n * (lateral_peak * PI * cos);
            HandState {
                p: home + u * (distance * s) + n * (lateral_peak * sin),
                v: tangent * sd,
                a: tangent * sdd - n * (lateral_peak * PI * PI * sin * sd * sd),
            }
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn duration(&self) -> f64 {
        (self.samples.len() - 1) as f64 * self.step
    }

    pub fn samples(&self) -> &[PlanSample] {
        &self.samples
    }

    /// Plan at time `t`. Exact on grid points, linear in between; before the
    /// start and after the end the plan is at rest.
    pub fn at(&self, t: f64) -> PlanSample {
        let last = self.samples.len() - 1;
        let x = t / self.step;
        let rest = |s: &PlanSample| PlanSample {
            v: Vector2::zeros(),
            a: Vector2::zeros(),
            qd: Vector2::zeros(),
            qdd: Vector2::zeros(),
            ..*s
        };
        if x <= 0.0 {
            return if x < 0.0 { rest(&self.samples[0]) } else { self.samples[0] };
        }
        let nearest = x.round();
        if (x - nearest).abs() < 1e-6 {
            let i = nearest as usize;
            return if i > last { rest(&self.samples[last]) } else { self.samples[i] };
        }
        let i = x.floor() as usize;
        if i >= last {
            return rest(&self.samples[last]);
        }
        let w = x - i as f64;
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        let lerp = |x: &Vector2<f64>, y: &Vector2<f64>| x + (y - x) * w;
        PlanSample {
            p: lerp(&a.p, &b.p),
            v: lerp(&a.v, &b.v),
            a: lerp(&a.a, &b.a),
            q: lerp(&a.q, &b.q),
            qd: lerp(&a.qd, &b.qd),
            qdd: lerp(&a.qdd, &b.qdd),
        }
    }
}

/// `tau_ff` for the current state. `alpha_hat` is the estimated curl gain
/// (N s/m); the compensation term opposes the estimated field at the
/// actual hand velocity.
pub fn feedforward_torque(
    arm: &ArmParams,
    des: &PlanSample,
    q: &Vector2<f64>,
    qd: &Vector2<f64>,
    alpha_hat: f64,
) -> Vector2<f64> {
    let jac = arm.jacobian(q);
    let v = jac * qd;
    arm.inertia_matrix(q) * des.qdd + arm.coriolis_matrix(q, qd) * des.qd
        - jac.transpose() * curl_force(alpha_hat, &v)
}

/// Restoring impedance torque around the plan.
pub fn feedback_torque(
    des: &PlanSample,
    q: &Vector2<f64>,
    qd: &Vector2<f64>,
    scaling: &ImpedanceScaling,
) -> Vector2<f64> {
    -(scaling.stiffness() * (q - des.q) + scaling.damping() * (qd - des.qd))
}

/// Serializable description of the controller driving a trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ControllerSpec {
    Standard {
        representation: Representation,
    },
    Impedance {
        representation: Representation,
        scaling: ImpedanceScaling,
    },
}

impl ControllerSpec {
    pub fn representation(&self) -> &Representation {
        match self {
            ControllerSpec::Standard { representation }
            | ControllerSpec::Impedance { representation, .. } => representation,
        }
    }

    pub fn model(&self) -> ModelKind {
        match self {
            ControllerSpec::Standard { .. } => ModelKind::Standard,
            ControllerSpec::Impedance { .. } => ModelKind::Impedance,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let rep = self.representation();
        rep.validate()?;
        match self {
            ControllerSpec::Standard { .. } => {
                if rep.offset_deg.is_none() {
                    return Err("standard model requires an offset".into());
                }
            }
            ControllerSpec::Impedance { scaling, .. } => {
                if rep.offset_deg.is_some() {
                    return Err("impedance model representation has no offset".into());
                }
                if !(scaling.alpha_k >= 0.0 && scaling.alpha_b >= 0.0) {
                    return Err("impedance scalings must be non-negative".into());
                }
            }
        }
        Ok(())
    }
}

/// Which plan the impedance model's feed-forward term follows.
///
/// `Baseline` uses the baseline movement for both the feed-forward and the
/// feedback terms. `Straight` keeps the feed-forward on the straight
/// minimum-jerk reach and only the feedback term tracks the baseline; it is
/// offered for comparison.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedforwardPlan {
    #[default]
    Baseline,
    Straight,
}

/// A torque policy resolved for one trial.
#[derive(Debug, Clone)]
pub struct TorquePolicy {
    pub desired: Arc<DesiredTrajectory>,
    /// Plan for the feed-forward term when it differs from `desired`.
    pub feedforward_plan: Option<Arc<DesiredTrajectory>>,
    /// Estimated curl gain for this reach (N s/m).
    pub alpha_hat: f64,
    pub feedback: Option<ImpedanceScaling>,
}

impl TorquePolicy {
    pub fn torque(&self, arm: &ArmParams, t: f64, q: &Vector2<f64>, qd: &Vector2<f64>) -> Vector2<f64> {
        let des = self.desired.at(t);
        let mut tau = match &self.feedforward_plan {
            Some(plan) => feedforward_torque(arm, &plan.at(t), q, qd, self.alpha_hat),
            None => feedforward_torque(arm, &des, q, qd, self.alpha_hat),
        };
        if let Some(scaling) = &self.feedback {
            tau += feedback_torque(&des, q, qd, scaling);
        }
        tau
    }
}

/// Standard model: straight minimum-jerk plan, feed-forward only.
pub fn standard_controller(
    rep: &Representation,
    straight_plan: Arc<DesiredTrajectory>,
    direction_deg: f64,
    alpha_true: f64,
) -> TorquePolicy {
    TorquePolicy {
        desired: straight_plan,
        feedforward_plan: None,
        alpha_hat: representation_strength(rep, direction_deg, alpha_true),
        feedback: None,
    }
}

/// Impedance model: the baseline movement is the plan, with feedback.
/// `feedforward_plan` overrides the plan of the feed-forward term only.
pub fn impedance_controller(
    rep: &Representation,
    scaling: ImpedanceScaling,
    baseline_plan: Option<Arc<DesiredTrajectory>>,
    feedforward_plan: Option<Arc<DesiredTrajectory>>,
    direction_deg: f64,
    alpha_true: f64,
) -> Result<TorquePolicy, SimError> {
    let desired = baseline_plan.ok_or(SimError::MissingBaseline(direction_deg))?;
    Ok(TorquePolicy {
        desired,
        feedforward_plan,
        alpha_hat: representation_strength(rep, direction_deg, alpha_true),
        feedback: Some(scaling),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wrapping() {
        assert_eq!(wrap_deg(180.0), 180.0);
        assert_eq!(wrap_deg(-180.0), 180.0);
        assert_eq!(wrap_deg(270.0), -90.0);
        assert_eq!(wrap_deg(-315.0), 45.0);
        assert_eq!(wrap_deg(720.0), 0.0);
    }

    #[test]
    fn min_jerk_boundaries_and_midpoint_speed() {
        let start = Vector2::new(0.01, -0.02);
        let goal = Vector2::new(0.11, -0.02);
        let (p, v, a) = min_jerk(&start, &goal, 0.375, 0.0);
        assert_eq!((p, v, a), (start, Vector2::zeros(), Vector2::zeros()));
        let (p, v, a) = min_jerk(&start, &goal, 0.375, 0.375);
        assert_eq!((p, v, a), (goal, Vector2::zeros(), Vector2::zeros()));
        let (_, v, a) = min_jerk(&start, &goal, 0.375, 0.1875);
        assert_relative_eq!(v.norm(), 15.0 / 8.0 * 0.10 / 0.375, epsilon = 1e-12);
        assert!(a.norm() < 1e-12);
    }

    #[test]
    fn representation_examples() {
        let rep = Representation::standard(0.8, 30.0, 12.0, 90.0);
        assert_relative_eq!(representation_strength(&rep, 102.0, 15.0), 12.0, epsilon = 1e-12);
        let none = Representation::standard(0.0, 30.0, 12.0, 90.0);
        assert_eq!(representation_strength(&none, 45.0, 15.0), 0.0);
        let c = Representation::centered(0.9, 25.0, 315.0);
        assert_relative_eq!(c.gain_fraction(340.0), 0.9 * (-0.5f64).exp(), epsilon = 1e-12);
        // wraps across 0/360
        assert_relative_eq!(c.gain_fraction(-20.0), c.gain_fraction(340.0), epsilon = 1e-12);
        assert_eq!(c.model(), ModelKind::Impedance);
        assert_eq!(rep.model(), ModelKind::Standard);
    }

    #[test]
    fn feedback_examples() {
        let des = PlanSample {
            p: Vector2::zeros(),
            v: Vector2::zeros(),
            a: Vector2::zeros(),
            q: Vector2::new(0.8, 1.5),
            qd: Vector2::new(0.2, -0.1),
            qdd: Vector2::zeros(),
        };
        let unit = ImpedanceScaling { alpha_k: 1.0, alpha_b: 1.0 };
        assert_eq!(feedback_torque(&des, &des.q, &des.qd, &unit), Vector2::zeros());
        let q = des.q + Vector2::new(0.01, 0.0);
        let tau = feedback_torque(&des, &q, &des.qd, &unit);
        assert_relative_eq!(tau, Vector2::new(-0.32, -0.16), epsilon = 1e-12);
        let off = ImpedanceScaling { alpha_k: 0.0, alpha_b: 0.0 };
        assert_eq!(feedback_torque(&des, &q, &Vector2::new(3.0, 1.0), &off), Vector2::zeros());
    }

    #[test]
    fn feedforward_reproduces_plan_on_track() {
        let arm = ArmParams::default();
        let plan =
            DesiredTrajectory::straight(&arm, Vector2::zeros(), 135.0, 0.1, 0.375, 2.5e-4).unwrap();
        let des = plan.at(0.1);
        let tau = feedforward_torque(&arm, &des, &des.q, &des.qd, 0.0);
        let qdd = arm.forward_dynamics(&des.q, &des.qd, &tau, &Vector2::zeros());
        assert_relative_eq!(qdd, des.qdd, epsilon = 1e-9);
    }

    #[test]
    fn compensation_vanishes_at_rest() {
        let arm = ArmParams::default();
        let plan =
            DesiredTrajectory::straight(&arm, Vector2::zeros(), 0.0, 0.1, 0.375, 2.5e-4).unwrap();
        let des = plan.at(0.0);
        let with = feedforward_torque(&arm, &des, &des.q, &Vector2::zeros(), 15.0);
        let without = feedforward_torque(&arm, &des, &des.q, &Vector2::zeros(), 0.0);
        assert_eq!(with, without);
    }

    #[test]
    fn curved_plan_joint_image_is_consistent() {
        let arm = ArmParams::default();
        let plan =
            DesiredTrajectory::curved(&arm, Vector2::zeros(), 225.0, 0.1, 0.375, 1.25e-4, 0.008)
                .unwrap();
        for s in plan.samples() {
            assert!((arm.forward_kinematics(&s.q) - s.p).norm() < 1e-8);
            assert!((arm.jacobian(&s.q) * s.qd - s.v).norm() < 1e-8);
        }
        let mid = plan.at(0.1875);
        let n = Vector2::new(-direction_vector(225.0).y, direction_vector(225.0).x);
        assert_relative_eq!(mid.p.dot(&n), 0.008, epsilon = 1e-12);
    }

    #[test]
    fn plan_holds_after_end() {
        let arm = ArmParams::default();
        let plan =
            DesiredTrajectory::straight(&arm, Vector2::zeros(), 90.0, 0.1, 0.375, 1e-3).unwrap();
        let late = plan.at(0.45);
        assert_relative_eq!(late.p, Vector2::new(0.0, 0.1), epsilon = 1e-12);
        assert_eq!(late.qd, Vector2::zeros());
    }

    #[test]
    fn impedance_controller_needs_baseline() {
        let rep = Representation::centered(0.0, 30.0, 0.0);
        let err = impedance_controller(&rep, ImpedanceScaling::BASELINE, None, None, 45.0, 15.0)
            .unwrap_err();
        assert_eq!(err, SimError::MissingBaseline(45.0));
    }
}
