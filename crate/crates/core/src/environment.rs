//! Forces rendered at the hand: null field, velocity-dependent curl field,
//! and the error-clamp channel.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

/// Default curl gain (N s/m).
pub const DEFAULT_CURL_GAIN: f64 = 15.0;
/// Force-loop gains of the manipulandum for the null and curl fields.
pub const NULL_FIELD_LOOP_GAIN: f64 = 0.5;
pub const CURL_FIELD_LOOP_GAIN: f64 = 0.75;

/// Straight virtual channel from `origin` to `target` with stiff walls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelGeometry {
    pub origin: [f64; 2],
    pub target: [f64; 2],
    /// Lateral free play on either side of the centreline (m).
    pub half_width: f64,
    /// Wall stiffness (N/m).
    pub k_wall: f64,
    /// Wall damping (N s/m).
    pub b_wall: f64,
}

/// Wall properties shared by every channel of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelWalls {
    /// m
    pub half_width: f64,
    /// N/m
    pub k_wall: f64,
    /// N s/m
    pub b_wall: f64,
}

impl Default for ChannelWalls {
    fn default() -> Self {
        ChannelWalls {
            half_width: 0.0005,
            k_wall: 5000.0,
            b_wall: 5.0,
        }
    }
}

impl ChannelGeometry {
    /// Channel with the apparatus defaults: 1 mm total width, 5 kN/m, 5 N s/m.
    pub fn new(origin: Vector2<f64>, target: Vector2<f64>) -> Self {
        let w = ChannelWalls::default();
        ChannelGeometry {
            origin: [origin.x, origin.y],
            target: [target.x, target.y],
            half_width: w.half_width,
            k_wall: w.k_wall,
            b_wall: w.b_wall,
        }
    }

    pub fn with_walls(mut self, walls: &ChannelWalls) -> Self {
        self.half_width = walls.half_width;
        self.k_wall = walls.k_wall;
        self.b_wall = walls.b_wall;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.half_width > 0.0) {
            return Err(format!("half_width must be positive, got {}", self.half_width));
        }
        if !(self.k_wall >= 0.0 && self.b_wall >= 0.0) {
            return Err("wall stiffness and damping must be non-negative".into());
        }
        if self.origin == self.target {
            return Err("channel origin and target coincide".into());
        }
        Ok(())
    }

    /// Unit vector along the channel.
    pub fn axis(&self) -> Vector2<f64> {
        let d = Vector2::new(self.target[0] - self.origin[0], self.target[1] - self.origin[1]);
        d / d.norm()
    }

    /// Unit normal to the left of the channel axis (the CCW side).
    pub fn normal(&self) -> Vector2<f64> {
        let u = self.axis();
        Vector2::new(-u.y, u.x)
    }

    /// Signed lateral displacement of `p` from the centreline, positive to
    /// the left of the origin->target direction.
    pub fn lateral_offset(&self, p: &Vector2<f64>) -> f64 {
        self.normal()
            .dot(&(p - Vector2::new(self.origin[0], self.origin[1])))
    }
}

/// The environment acting on the hand during a trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSpec {
    Null,
    Curl { alpha: f64 },
    Clamp { channel: ChannelGeometry },
}

impl FieldSpec {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            FieldSpec::Null => Ok(()),
            FieldSpec::Curl { alpha } if alpha.is_finite() => Ok(()),
            FieldSpec::Curl { alpha } => Err(format!("curl gain must be finite, got {alpha}")),
            FieldSpec::Clamp { channel } => channel.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FieldSpec::Null => "null",
            FieldSpec::Curl { .. } => "curl",
            FieldSpec::Clamp { .. } => "clamp",
        }
    }

    /// Force exerted on the hand at position `p` moving with velocity `v`.
    pub fn force(&self, p: &Vector2<f64>, v: &Vector2<f64>) -> Vector2<f64> {
        match self {
            FieldSpec::Null => Vector2::zeros(),
            FieldSpec::Curl { alpha } => curl_force(*alpha, v),
            FieldSpec::Clamp { channel } => channel_force(channel, p, v),
        }
    }

    /// Gain of the manipulandum's force loop for this condition.
    pub fn loop_gain(&self) -> f64 {
        match self {
            FieldSpec::Curl { .. } => CURL_FIELD_LOOP_GAIN,
            _ => NULL_FIELD_LOOP_GAIN,
        }
    }
}

/// `F = alpha [0 1; -1 0] v`. Always perpendicular to `v`.
pub fn curl_force(alpha: f64, v: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(alpha * v.y, -alpha * v.x)
}

/// Wall force of the error-clamp channel.
///
/// Inside the free play the force is zero. Past it the wall acts as a
/// spring-damper that only pushes inward: the damping contribution is
/// bounded by the spring force, so the total lies between zero and twice
/// the spring force and is continuous at the moment of contact.
pub fn channel_force(geom: &ChannelGeometry, p: &Vector2<f64>, v: &Vector2<f64>) -> Vector2<f64> {
    let n = geom.normal();
    let d = geom.lateral_offset(p);
    let penetration = d.abs() - geom.half_width;
    if penetration <= 0.0 {
        return Vector2::zeros();
    }
    let side = d.signum();
    let spring = geom.k_wall * penetration;
    // Outward lateral speed resists with damping, inward speed relieves it.
    let outward_speed = side * n.dot(v);
    let damping = (geom.b_wall * outward_speed).clamp(-spring, spring);
    let inward = spring + damping;
    -side * inward * n
}

/// Commanded robot force of the low-gain force-feedback loop.
pub fn robot_rendered_force(
    desired: &Vector2<f64>,
    measured: &Vector2<f64>,
    gain: f64,
) -> Vector2<f64> {
    desired + gain * (desired - measured)
}
