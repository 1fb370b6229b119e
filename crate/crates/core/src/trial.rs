//! Closed-loop simulation of single reaching trials.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arm::ArmParams;
use crate::baselines::{direction_key, target_position, BaselineSet, STANDARD_DIRECTIONS};
use crate::controllers::{
    impedance_controller, standard_controller, ControllerSpec, DesiredTrajectory, FeedforwardPlan, TorquePolicy,
    DEFAULT_MOVEMENT_TIME, DEFAULT_REACH_DISTANCE,
};
use crate::environment::{ChannelGeometry, ChannelWalls, FieldSpec, DEFAULT_CURL_GAIN};
use crate::error::SimError;

/// Joint speed beyond which a trial is declared divergent (rad/s).
pub const DIVERGENCE_SPEED: f64 = 50.0;

/// Condition tag of a trial within the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialKind {
    BaselineNull,
    BaselineClamp,
    AdaptField,
    AdaptClamp,
    TestClamp,
    TrainField,
    TrainClamp,
}

impl TrialKind {
    pub fn name(self) -> &'static str {
        match self {
            TrialKind::BaselineNull => "baseline-null",
            TrialKind::BaselineClamp => "baseline-clamp",
            TrialKind::AdaptField => "adapt-field",
            TrialKind::AdaptClamp => "adapt-clamp",
            TrialKind::TestClamp => "test-clamp",
            TrialKind::TrainField => "train-field",
            TrialKind::TrainClamp => "train-clamp",
        }
    }

    pub fn is_clamp(self) -> bool {
        matches!(
            self,
            TrialKind::BaselineClamp | TrialKind::AdaptClamp | TrialKind::TestClamp | TrialKind::TrainClamp
        )
    }
}

/// Timing and geometry shared by every trial of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    /// Integrator step (s).
    pub step: f64,
    /// Logging rate (Hz).
    pub log_rate: f64,
    /// Planned movement time (s).
    pub movement_time: f64,
    /// Extra simulated time after the planned movement (s).
    pub settle_time: f64,
    /// Home-to-target distance (m).
    pub reach_distance: f64,
    /// Home position (m).
    pub home: [f64; 2],
    /// Gain of the trained curl field (N s/m); its sign selects orientation.
    pub field_gain: f64,
    #[serde(default)]
    pub channel: ChannelWalls,
    #[serde(default)]
    pub impedance_feedforward: FeedforwardPlan,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            step: 5e-4,
            log_rate: 1000.0,
            movement_time: DEFAULT_MOVEMENT_TIME,
            settle_time: 0.125,
            reach_distance: DEFAULT_REACH_DISTANCE,
            home: [0.0, 0.0],
            field_gain: DEFAULT_CURL_GAIN,
            channel: ChannelWalls::default(),
            impedance_feedforward: FeedforwardPlan::Baseline,
        }
    }
}

impl SimSettings {
    pub fn home(&self) -> Vector2<f64> {
        Vector2::new(self.home[0], self.home[1])
    }

    pub fn duration(&self) -> f64 {
        self.movement_time + self.settle_time
    }

    pub fn target(&self, direction_deg: f64) -> Vector2<f64> {
        target_position(self.home(), direction_deg, self.reach_distance)
    }

    pub fn channel(&self, direction_deg: f64) -> ChannelGeometry {
        ChannelGeometry::new(self.home(), self.target(direction_deg)).with_walls(&self.channel)
    }

    /// Environment for a trial kind toward `direction_deg`.
    pub fn field_for(&self, kind: TrialKind, direction_deg: f64) -> FieldSpec {
        match kind {
            TrialKind::BaselineNull => FieldSpec::Null,
            TrialKind::AdaptField | TrialKind::TrainField => FieldSpec::Curl {
                alpha: self.field_gain,
            },
            _ => FieldSpec::Clamp {
                channel: self.channel(direction_deg),
            },
        }
    }

    /// A fully specified trial using these settings.
    pub fn trial(
        &self,
        index: usize,
        group_deg: f64,
        direction_deg: f64,
        kind: TrialKind,
        controller: ControllerSpec,
    ) -> TrialSpec {
        TrialSpec {
            index,
            group_deg,
            direction_deg,
            kind,
            feedback: !kind.is_clamp(),
            field: self.field_for(kind, direction_deg),
            controller,
            home: self.home,
            reach_distance: self.reach_distance,
            movement_time: self.movement_time,
            duration: self.duration(),
            step: self.step,
            log_rate: self.log_rate,
            field_gain: self.field_gain,
        }
    }
}

/// Everything needed to simulate one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialSpec {
    pub index: usize,
    pub group_deg: f64,
    pub direction_deg: f64,
    pub kind: TrialKind,
    /// Visual feedback flag. Carried for schedule fidelity only.
    pub feedback: bool,
    pub field: FieldSpec,
    pub controller: ControllerSpec,
    pub home: [f64; 2],
    pub reach_distance: f64,
    pub movement_time: f64,
    pub duration: f64,
    pub step: f64,
    pub log_rate: f64,
    /// True field gain, the reference for estimated gains and indices.
    pub field_gain: f64,
}

impl TrialSpec {
    pub fn home(&self) -> Vector2<f64> {
        Vector2::new(self.home[0], self.home[1])
    }

    pub fn target(&self) -> Vector2<f64> {
        target_position(self.home(), self.direction_deg, self.reach_distance)
    }

    /// Integrator steps between logged samples.
    pub fn log_interval(&self) -> Result<usize, SimError> {
        let ratio = 1.0 / (self.log_rate * self.step);
        let rounded = ratio.round();
        if rounded < 1.0 || (ratio - rounded).abs() > 1e-6 {
            return Err(SimError::InvalidSpec(format!(
                "log rate {} Hz is not an integer division of the step rate {} Hz",
                self.log_rate,
                1.0 / self.step
            )));
        }
        Ok(rounded as usize)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSpec(m));
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad(format!("step must be positive, got {}", self.step));
        }
        if !(self.movement_time > 0.0) {
            return bad("movement time must be positive".into());
        }
        if self.duration + 1e-12 < self.movement_time {
            return bad(format!(
                "duration {} s shorter than movement time {} s",
                self.duration, self.movement_time
            ));
        }
        if !(self.reach_distance > 0.0) {
            return bad("reach distance must be positive".into());
        }
        self.field.validate().map_err(SimError::InvalidSpec)?;
        self.controller.validate().map_err(SimError::InvalidSpec)?;
        self.log_interval()?;
        Ok(())
    }

    /// Same trial with a different integrator step (log rate unchanged).
    pub fn with_step(&self, step: f64) -> TrialSpec {
        TrialSpec { step, ..*self }
    }
}

/// Logged time series of one simulated trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub spec: TrialSpec,
    pub t: Vec<f64>,
    pub position: Vec<Vector2<f64>>,
    pub velocity: Vec<Vector2<f64>>,
    /// Force the hand applies to the environment (N).
    pub force: Vec<Vector2<f64>>,
    pub joints: Vec<Vector2<f64>>,
}

impl TrialRecord {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        self.spec.log_rate
    }
}

/// Classic explicit fourth-order Runge-Kutta step for `x' = f(t, x)`.
pub fn rk4_step<const N: usize, F>(f: &mut F, t: f64, x: &[f64; N], h: f64) -> [f64; N]
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let axpy = |x: &[f64; N], k: &[f64; N], c: f64| {
        let mut out = *x;
        for i in 0..N {
            out[i] += c * k[i];
        }
        out
    };
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * h, &axpy(x, &k1, 0.5 * h));
    let k3 = f(t + 0.5 * h, &axpy(x, &k2, 0.5 * h));
    let k4 = f(t + h, &axpy(x, &k3, h));
    let mut out = *x;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Simulates trials for one arm, one set of baselines and one timing.
///
/// Plans for the eight standard directions are built once at half the
/// integrator step (the RK4 midpoints) and shared between trials.
#[derive(Debug, Clone)]
pub struct Simulator {
    arm: ArmParams,
    settings: SimSettings,
    baselines: BaselineSet,
    straight: HashMap<i64, Arc<DesiredTrajectory>>,
    curved: HashMap<i64, Arc<DesiredTrajectory>>,
}

impl Simulator {
    pub fn new(arm: ArmParams, settings: SimSettings, baselines: BaselineSet) -> Result<Self, SimError> {
        arm.validate()?;
        let mut sim = Simulator {
            arm,
            settings,
            baselines,
            straight: HashMap::new(),
            curved: HashMap::new(),
        };
        let plan_step = settings.step / 2.0;
        for dir in STANDARD_DIRECTIONS {
            let key = direction_key(dir);
            sim.straight
                .insert(key, Arc::new(sim.build_straight(dir, plan_step)?));
            if sim.baselines.get(dir).is_some() {
                sim.curved
                    .insert(key, Arc::new(sim.build_baseline(dir, plan_step)?));
            }
        }
        Ok(sim)
    }

    pub fn arm(&self) -> &ArmParams {
        &self.arm
    }

    pub fn settings(&self) -> &SimSettings {
        &self.settings
    }

    pub fn baselines(&self) -> &BaselineSet {
        &self.baselines
    }

    fn build_straight(&self, dir: f64, plan_step: f64) -> Result<DesiredTrajectory, SimError> {
        Ok(DesiredTrajectory::straight(
            &self.arm,
            self.settings.home(),
            dir,
            self.settings.reach_distance,
            self.settings.movement_time,
            plan_step,
        )?)
    }

    fn build_baseline(&self, dir: f64, plan_step: f64) -> Result<DesiredTrajectory, SimError> {
        self.baselines.plan(
            &self.arm,
            self.settings.home(),
            dir,
            self.settings.reach_distance,
            self.settings.movement_time,
            plan_step,
        )
    }

    fn uses_cache(&self, spec: &TrialSpec) -> bool {
        spec.step == self.settings.step
            && spec.home == self.settings.home
            && spec.reach_distance == self.settings.reach_distance
            && spec.movement_time == self.settings.movement_time
    }

    fn straight_plan(&self, spec: &TrialSpec) -> Result<Arc<DesiredTrajectory>, SimError> {
        if self.uses_cache(spec) {
            if let Some(p) = self.straight.get(&direction_key(spec.direction_deg)) {
                return Ok(p.clone());
            }
        }
        Ok(Arc::new(DesiredTrajectory::straight(
            &self.arm,
            spec.home(),
            spec.direction_deg,
            spec.reach_distance,
            spec.movement_time,
            spec.step / 2.0,
        )?))
    }

    fn baseline_plan(&self, spec: &TrialSpec) -> Result<Option<Arc<DesiredTrajectory>>, SimError> {
        if self.baselines.get(spec.direction_deg).is_none() {
            return Ok(None);
        }
        if self.uses_cache(spec) {
            if let Some(p) = self.curved.get(&direction_key(spec.direction_deg)) {
                return Ok(Some(p.clone()));
            }
        }
        Ok(Some(Arc::new(self.baselines.plan(
            &self.arm,
            spec.home(),
            spec.direction_deg,
            spec.reach_distance,
            spec.movement_time,
            spec.step / 2.0,
        )?)))
    }

    /// Resolves the trial's controller into a torque policy.
    pub fn policy(&self, spec: &TrialSpec) -> Result<TorquePolicy, SimError> {
        match &spec.controller {
            ControllerSpec::Standard { representation } => Ok(standard_controller(
                representation,
                self.straight_plan(spec)?,
                spec.direction_deg,
                spec.field_gain,
            )),
            ControllerSpec::Impedance {
                representation,
                scaling,
            } => impedance_controller(
                representation,
                *scaling,
                self.baseline_plan(spec)?,
                match self.settings.impedance_feedforward {
                    FeedforwardPlan::Baseline => None,
                    FeedforwardPlan::Straight => Some(self.straight_plan(spec)?),
                },
                spec.direction_deg,
                spec.field_gain,
            ),
        }
    }

    /// Integrates the arm from rest at home under the trial's controller
    /// and environment, logging at the spec's rate.
    pub fn simulate(&self, spec: &TrialSpec) -> Result<TrialRecord, SimError> {
        spec.validate()?;
        let policy = self.policy(spec)?;
        self.run(spec, |arm, t, q, qd| policy.torque(arm, t, q, qd))
    }

    /// Integrates with an arbitrary torque law. Exposed for tests and for
    /// apparatus studies that bypass the learned-model controllers.
    pub fn run<T>(&self, spec: &TrialSpec, torque: T) -> Result<TrialRecord, SimError>
    where
        T: Fn(&ArmParams, f64, &Vector2<f64>, &Vector2<f64>) -> Vector2<f64>,
    {
        let arm = &self.arm;
        let field = spec.field;
        let log_every = spec.log_interval()?;
        let n_steps = (spec.duration / spec.step).round() as usize;
        let h = spec.step;

        let q0 = arm.inverse_kinematics(&spec.home())?;
        let mut x = [q0.x, q0.y, 0.0, 0.0];

        let mut deriv = |t: f64, s: &[f64; 4]| {
            let q = Vector2::new(s[0], s[1]);
            let qd = Vector2::new(s[2], s[3]);
            let p = arm.forward_kinematics(&q);
            let v = arm.jacobian(&q) * qd;
            let f_env = field.force(&p, &v);
            let tau = torque(arm, t, &q, &qd);
            let qdd = arm.forward_dynamics(&q, &qd, &tau, &f_env);
            [s[2], s[3], qdd.x, qdd.y]
        };

        let n_log = n_steps / log_every + 1;
        let mut rec = TrialRecord {
            spec: *spec,
            t: Vec::with_capacity(n_log),
            position: Vec::with_capacity(n_log),
            velocity: Vec::with_capacity(n_log),
            force: Vec::with_capacity(n_log),
            joints: Vec::with_capacity(n_log),
        };
        let log = |k: usize, s: &[f64; 4], rec: &mut TrialRecord| {
            let q = Vector2::new(s[0], s[1]);
            let qd = Vector2::new(s[2], s[3]);
            let p = arm.forward_kinematics(&q);
            let v = arm.jacobian(&q) * qd;
            rec.t.push(k as f64 * h);
            rec.position.push(p);
            rec.velocity.push(v);
            rec.force.push(-field.force(&p, &v));
            rec.joints.push(q);
        };

        log(0, &x, &mut rec);
        for k in 0..n_steps {
            let t = k as f64 * h;
            x = rk4_step(&mut deriv, t, &x, h);
            let speed = x[2].abs().max(x[3].abs());
            if !(speed <= DIVERGENCE_SPEED) {
                return Err(SimError::Diverged {
                    t: t + h,
                    speed,
                });
            }
            if (k + 1) % log_every == 0 {
                log(k + 1, &x, &mut rec);
            }
        }
        Ok(rec)
    }

    /// Simulates many trials in parallel; results come back in trial-index
    /// order regardless of completion order.
    pub fn simulate_all(&self, specs: &[TrialSpec]) -> Vec<Result<TrialRecord, SimError>> {
        let mut out: Vec<(usize, Result<TrialRecord, SimError>)> = specs
            .par_iter()
            .map(|s| (s.index, self.simulate(s)))
            .collect();
        out.sort_by_key(|(i, _)| *i);
        out.into_iter().map(|(_, r)| r).collect()
    }
}

/// Discrepancies between a trial simulated at its step and at half of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub step: f64,
    pub max_position_diff: f64,
    pub max_force_diff: f64,
}

/// Re-runs a trial at half the integrator step and compares logged samples.
pub fn halve_step_check(sim: &Simulator, spec: &TrialSpec) -> Result<ConvergenceReport, SimError> {
    let coarse = sim.simulate(spec)?;
    let fine = sim.simulate(&spec.with_step(spec.step / 2.0))?;
    Ok(compare_records(&coarse, &fine, spec.step))
}

fn compare_records(a: &TrialRecord, b: &TrialRecord, step: f64) -> ConvergenceReport {
    let mut max_position_diff = 0.0f64;
    let mut max_force_diff = 0.0f64;
    for i in 0..a.len().min(b.len()) {
        max_position_diff = max_position_diff.max((a.position[i] - b.position[i]).norm());
        max_force_diff = max_force_diff.max((a.force[i] - b.force[i]).norm());
    }
    ConvergenceReport {
        step,
        max_position_diff,
        max_force_diff,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::Representation;

    fn sim() -> Simulator {
        Simulator::new(ArmParams::default(), SimSettings::default(), BaselineSet::straight()).unwrap()
    }

    fn standard(a: f64, train: f64) -> ControllerSpec {
        ControllerSpec::Standard {
            representation: Representation::standard(a, 30.0, 0.0, train),
        }
    }

    #[test]
    fn rk4_matches_harmonic_oscillator() {
        let w = 7.0f64;
        let mut f = |_t: f64, x: &[f64; 2]| [x[1], -w * w * x[0]];
        let mut x = [0.01, 0.0];
        let h = 5e-4;
        let n = 1000;
        for k in 0..n {
            x = rk4_step(&mut f, k as f64 * h, &x, h);
        }
        let t = n as f64 * h;
        assert!((x[0] - 0.01 * (w * t).cos()).abs() < 1e-8);
    }

    #[test]
    fn null_field_reach_lands_on_target() {
        let sim = sim();
        let s = sim.settings();
        for dir in [0.0, 135.0, 270.0] {
            let spec = s.trial(0, dir, dir, TrialKind::BaselineNull, standard(0.0, dir));
            let rec = sim.simulate(&spec).unwrap();
            let end = *rec.position.last().unwrap();
            assert!((end - spec.target()).norm() < 1e-4, "dir {dir}: {}", (end - spec.target()).norm());
            assert_eq!(rec.len(), 501);
            assert!((rec.t[500] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn naive_reach_in_curl_field_hooks() {
        let sim = sim();
        let s = sim.settings();
        let spec = s.trial(0, 90.0, 90.0, TrialKind::AdaptField, standard(0.0, 90.0));
        let rec = sim.simulate(&spec).unwrap();
        let u = crate::controllers::direction_vector(90.0);
        let n = Vector2::new(-u.y, u.x);
        let peak = rec
            .position
            .iter()
            .map(|p| n.dot(p).abs())
            .fold(0.0, f64::max);
        assert!(peak > 0.010, "peak lateral deviation {peak}");
    }

    #[test]
    fn logged_force_is_negated_channel_force() {
        let sim = sim();
        let s = sim.settings();
        let spec = s.trial(0, 45.0, 45.0, TrialKind::TrainClamp, standard(1.0, 45.0));
        let rec = sim.simulate(&spec).unwrap();
        let ch = s.channel(45.0);
        for i in 0..rec.len() {
            let f = crate::environment::channel_force(&ch, &rec.position[i], &rec.velocity[i]);
            assert!((rec.force[i] + f).norm() <= 1e-12);
        }
    }

    #[test]
    fn deterministic_records() {
        let sim = sim();
        let s = sim.settings();
        let spec = s.trial(3, 180.0, 225.0, TrialKind::TestClamp, standard(0.8, 180.0));
        assert_eq!(sim.simulate(&spec).unwrap(), sim.simulate(&spec).unwrap());
    }

    #[test]
    fn equilibrium_is_exact_under_step_halving() {
        let sim = sim();
        let s = sim.settings();
        let spec = s.trial(0, 0.0, 0.0, TrialKind::BaselineNull, standard(0.0, 0.0));
        let still = |_: &ArmParams, _: f64, _: &Vector2<f64>, _: &Vector2<f64>| Vector2::zeros();
        let a = sim.run(&spec, still).unwrap();
        let b = sim.run(&spec.with_step(spec.step / 2.0), still).unwrap();
        let report = compare_records(&a, &b, spec.step);
        assert_eq!(report.max_position_diff, 0.0);
        assert_eq!(report.max_force_diff, 0.0);
    }

    #[test]
    fn invalid_log_rate_rejected() {
        let sim = sim();
        let mut spec = sim
            .settings()
            .trial(0, 0.0, 0.0, TrialKind::BaselineNull, standard(0.0, 0.0));
        spec.log_rate = 3000.0;
        assert!(matches!(sim.simulate(&spec), Err(SimError::InvalidSpec(_))));
        spec.log_rate = 1000.0;
        spec.duration = 0.2;
        assert!(matches!(sim.simulate(&spec), Err(SimError::InvalidSpec(_))));
    }

    #[test]
    fn destabilizing_feedback_diverges() {
        let sim = sim();
        let spec = sim
            .settings()
            .trial(0, 0.0, 0.0, TrialKind::BaselineNull, standard(0.0, 0.0));
        let res = sim.run(&spec, |_, _, q, _| {
            let q0 = crate::arm::home_posture();
            (q - q0) * 400.0 + Vector2::new(0.5, 0.0)
        });
        assert!(matches!(res, Err(SimError::Diverged { .. })));
    }
}
