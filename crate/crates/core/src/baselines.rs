//! Per-direction baseline movements used as the impedance model's plan.

use std::collections::BTreeMap;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::analysis::filtered_velocity;
use crate::arm::{ArmParams, HandState};
use crate::controllers::{direction_vector, wrap_deg, DesiredTrajectory};
use crate::error::{AnalysisError, ArmError, SimError};

/// The eight standard reach directions (deg).
pub const STANDARD_DIRECTIONS: [f64; 8] = [0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0];

/// Default signed baseline peak deviations (mm, positive = CCW), one per
/// standard direction: largest along 45/225 deg, smallest along 135/315 deg.
pub const DEFAULT_BASELINE_PE_MM: [f64; 8] = [6.0, 11.5, 7.0, 4.0, 6.5, 10.5, 7.5, 4.5];

/// Canonical integer key for a direction on the 45 degree grid (or any
/// direction to millidegree resolution), in [0, 360000).
pub fn direction_key(direction_deg: f64) -> i64 {
    let d = direction_deg.rem_euclid(360.0);
    ((d * 1000.0).round() as i64).rem_euclid(360_000)
}

pub fn key_to_deg(key: i64) -> f64 {
    key as f64 / 1000.0
}

/// Source of a baseline movement for one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselinePath {
    /// Minimum-jerk reach bowed by a half-sine of this signed peak (mm).
    Curved { pe_mm: f64 },
    /// Measured hand path sampled uniformly from movement onset at rest.
    Sampled {
        rate: f64,
        positions: Vec<[f64; 2]>,
    },
}

/// Hand-space samples with derivatives obtained from the analysis filter
/// chain (differentiate, then zero-phase low-pass).
#[derive(Debug, Clone)]
struct SampledKinematics {
    rate: f64,
    p: Vec<Vector2<f64>>,
    v: Vec<Vector2<f64>>,
    a: Vec<Vector2<f64>>,
}

impl SampledKinematics {
    fn new(rate: f64, positions: &[[f64; 2]]) -> Result<Self, AnalysisError> {
        let p: Vec<Vector2<f64>> = positions.iter().map(|x| Vector2::new(x[0], x[1])).collect();
        let v = filtered_velocity(&p, rate)?;
        let a = filtered_velocity(&v, rate)?;
        Ok(SampledKinematics { rate, p, v, a })
    }

    fn at(&self, t: f64) -> HandState {
        let x = (t * self.rate).max(0.0);
        let last = self.p.len() - 1;
        let i = (x.floor() as usize).min(last);
        if i >= last {
            return HandState {
                p: self.p[last],
                v: self.v[last],
                a: self.a[last],
            };
        }
        let w = x - i as f64;
        let lerp = |s: &[Vector2<f64>]| s[i] + (s[i + 1] - s[i]) * w;
        HandState {
            p: lerp(&self.p),
            v: lerp(&self.v),
            a: lerp(&self.a),
        }
    }

    fn duration(&self) -> f64 {
        (self.p.len() - 1) as f64 / self.rate
    }
}

/// Baseline movements keyed by direction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineSet {
    paths: BTreeMap<i64, BaselinePath>,
}

impl BaselineSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Half-sine curved baselines with the given signed peaks, one per
    /// standard direction.
    pub fn curved(pe_mm: &[f64; 8]) -> Self {
        let mut set = Self::new();
        for (dir, pe) in STANDARD_DIRECTIONS.iter().zip(pe_mm) {
            set.insert(*dir, BaselinePath::Curved { pe_mm: *pe });
        }
        set
    }

    /// Perfectly straight baselines in every standard direction.
    pub fn straight() -> Self {
        Self::curved(&[0.0; 8])
    }

    pub fn insert(&mut self, direction_deg: f64, path: BaselinePath) {
        self.paths.insert(direction_key(direction_deg), path);
    }

    pub fn get(&self, direction_deg: f64) -> Option<&BaselinePath> {
        self.paths.get(&direction_key(direction_deg))
    }

    pub fn directions(&self) -> Vec<f64> {
        self.paths.keys().map(|k| key_to_deg(*k)).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Builds the plan for `direction_deg` sampled at `step`.
    pub fn plan(
        &self,
        arm: &ArmParams,
        home: Vector2<f64>,
        direction_deg: f64,
        distance: f64,
        movement_time: f64,
        step: f64,
    ) -> Result<DesiredTrajectory, SimError> {
        let path = self
            .get(direction_deg)
            .ok_or(SimError::MissingBaseline(wrap_deg(direction_deg).rem_euclid(360.0)))?;
        match path {
            BaselinePath::Curved { pe_mm } => Ok(DesiredTrajectory::curved(
                arm,
                home,
                direction_deg,
                distance,
                movement_time,
                step,
                pe_mm * 1e-3,
            )?),
            BaselinePath::Sampled { rate, positions } => {
                let kin = SampledKinematics::new(*rate, positions)
                    .map_err(|e| SimError::InvalidSpec(format!("baseline {direction_deg} deg: {e}")))?;
                let plan: Result<DesiredTrajectory, ArmError> =
                    DesiredTrajectory::from_hand_path(arm, kin.duration(), step, |t| kin.at(t));
                Ok(plan?)
            }
        }
    }
}

/// Target position of a reach.
pub fn target_position(home: Vector2<f64>, direction_deg: f64, distance: f64) -> Vector2<f64> {
    home + direction_vector(direction_deg) * distance
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_canonical() {
        assert_eq!(direction_key(-45.0), direction_key(315.0));
        assert_eq!(direction_key(360.0), 0);
        assert_eq!(key_to_deg(direction_key(225.0)), 225.0);
    }

    #[test]
    fn missing_direction_is_named() {
        let mut set = BaselineSet::new();
        set.insert(0.0, BaselinePath::Curved { pe_mm: 4.0 });
        let arm = ArmParams::default();
        let err = set
            .plan(&arm, Vector2::zeros(), 90.0, 0.1, 0.375, 1e-3)
            .unwrap_err();
        assert_eq!(err, SimError::MissingBaseline(90.0));
    }
}
