//! Measurement pipeline: velocity estimation, movement landmarks,
//! perpendicular error, adaptation indices and generalization curves.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::baselines::{direction_key, key_to_deg};
use crate::controllers::wrap_deg;
use crate::environment::FieldSpec;
use crate::error::AnalysisError;
use crate::trial::{TrialKind, TrialRecord};

/// Low-pass cutoff for hand velocity (Hz).
pub const VELOCITY_CUTOFF_HZ: f64 = 50.0;
/// Movement onset speed (m/s).
pub const ONSET_SPEED: f64 = 0.05;
/// Movement stop speed (m/s).
pub const STOP_SPEED: f64 = 0.02;
/// Minimum predictor variance accepted by the index regression (N^2).
pub const MIN_PREDICTOR_VARIANCE: f64 = 1e-8;
/// Angular offsets of a generalization curve (deg).
pub const CURVE_OFFSETS: [f64; 8] = [-135.0, -90.0, -45.0, 0.0, 45.0, 90.0, 135.0, 180.0];

const MIN_SAMPLES: usize = 20;

/// Second-order low-pass Butterworth section designed with the bilinear
/// transform (pre-warped so the -3 dB point lands on the cutoff).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Butterworth2 {
    pub b: [f64; 3],
    /// Denominator `[1, a1, a2]`.
    pub a: [f64; 3],
}

impl Butterworth2 {
    pub fn low_pass(cutoff_hz: f64, sample_rate: f64) -> Self {
        let k = (PI * cutoff_hz / sample_rate).tan();
        let k2 = k * k;
        let norm = 1.0 / (1.0 + SQRT_2 * k + k2);
        let b0 = k2 * norm;
        Butterworth2 {
            b: [b0, 2.0 * b0, b0],
            a: [1.0, 2.0 * (k2 - 1.0) * norm, (1.0 - SQRT_2 * k + k2) * norm],
        }
    }

    /// Magnitude of the single-pass frequency response.
    pub fn magnitude(&self, freq_hz: f64, sample_rate: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / sample_rate;
        let eval = |c: &[f64; 3]| {
            let re = c[0] + c[1] * w.cos() + c[2] * (2.0 * w).cos();
            let im = -c[1] * w.sin() - c[2] * (2.0 * w).sin();
            (re * re + im * im).sqrt()
        };
        eval(&self.b) / eval(&self.a)
    }

    /// Steady-state initial conditions for a unit-step input (transposed
    /// direct form II).
    fn step_state(&self) -> [f64; 2] {
        [1.0 - self.b[0], self.b[2] - self.a[2]]
    }

    /// Causal filtering starting from the steady state of `x[0]`.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let Some(&x0) = x.first() else {
            return Vec::new();
        };
        let zi = self.step_state();
        let (mut z1, mut z2) = (zi[0] * x0, zi[1] * x0);
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        x.iter()
            .map(|&xi| {
                let y = b0 * xi + z1;
                z1 = b1 * xi - a1 * y + z2;
                z2 = b2 * xi - a2 * y;
                y
            })
            .collect()
    }

    /// Zero-phase forward-backward filtering with odd-reflection padding.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let pad = 9.min(n.saturating_sub(1));
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let mut y = self.filter(&ext);
        y.reverse();
        let mut y = self.filter(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

/// Velocity from uniformly sampled positions: central differences, then a
/// 50 Hz second-order Butterworth applied forward and backward.
pub fn filtered_velocity(
    positions: &[Vector2<f64>],
    sample_rate: f64,
) -> Result<Vec<Vector2<f64>>, AnalysisError> {
    let n = positions.len();
    if n < MIN_SAMPLES {
        return Err(AnalysisError::TooShort(n));
    }
    if !(sample_rate > 2.0 * VELOCITY_CUTOFF_HZ) {
        return Err(AnalysisError::InvalidSampling(format!(
            "sample rate {sample_rate} Hz must exceed 100 Hz"
        )));
    }
    let mut raw = Vec::with_capacity(n);
    raw.push((positions[1] - positions[0]) * sample_rate);
    for i in 1..n - 1 {
        raw.push((positions[i + 1] - positions[i - 1]) * (0.5 * sample_rate));
    }
    raw.push((positions[n - 1] - positions[n - 2]) * sample_rate);

    let filter = Butterworth2::low_pass(VELOCITY_CUTOFF_HZ, sample_rate);
    let vx = filter.filtfilt(&raw.iter().map(|v| v.x).collect::<Vec<_>>());
    let vy = filter.filtfilt(&raw.iter().map(|v| v.y).collect::<Vec<_>>());
    Ok(vx.into_iter().zip(vy).map(|(x, y)| Vector2::new(x, y)).collect())
}

/// Onset and stop landmarks of a movement, as sample indices and times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovementWindow {
    pub start: usize,
    pub stop: usize,
    pub t_start: f64,
    pub t_stop: f64,
}

/// Onset is the first sample faster than 5 cm/s; stop is the first sample
/// after peak speed slower than 2 cm/s (or the last sample if the record
/// ends first).
pub fn movement_window(t: &[f64], velocity: &[Vector2<f64>]) -> Result<MovementWindow, AnalysisError> {
    let speed: Vec<f64> = velocity.iter().map(|v| v.norm()).collect();
    let start = speed
        .iter()
        .position(|&s| s > ONSET_SPEED)
        .ok_or(AnalysisError::NoMovement)?;
    let peak = speed
        .iter()
        .enumerate()
        .skip(start)
        .fold(start, |best, (i, &s)| if s > speed[best] { i } else { best });
    let stop = speed
        .iter()
        .enumerate()
        .skip(peak + 1)
        .find(|(_, &s)| s < STOP_SPEED)
        .map(|(i, _)| i)
        .unwrap_or(speed.len() - 1)
        .max(start + 1)
        .min(speed.len() - 1);
    Ok(MovementWindow {
        start,
        stop,
        t_start: t[start],
        t_stop: t[stop],
    })
}

/// Signed maximum deviation (m) of `positions[window]` from the line
/// joining the position at movement onset and `target`; positive to the
/// left of that line (counter-clockwise).
pub fn path_perpendicular_error(
    positions: &[Vector2<f64>],
    window: &MovementWindow,
    target: &Vector2<f64>,
) -> f64 {
    let start = positions[window.start];
    let axis = target - start;
    let u = axis / axis.norm();
    let n = Vector2::new(-u.y, u.x);
    positions[window.start..=window.stop]
        .iter()
        .map(|p| n.dot(&(p - start)))
        .fold(0.0, |best: f64, d| if d.abs() > best.abs() { d } else { best })
}

/// Signed perpendicular error of a trial (mm).
pub fn perpendicular_error(record: &TrialRecord) -> Result<f64, AnalysisError> {
    let v = filtered_velocity(&record.position, record.sample_rate())?;
    let window = movement_window(&record.t, &v)?;
    Ok(1e3 * path_perpendicular_error(&record.position, &window, &record.spec.target()))
}

/// Experimental phase an index belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Baseline,
    Adaptation,
    Test,
}

impl Phase {
    pub fn of(kind: TrialKind) -> Phase {
        match kind {
            TrialKind::BaselineNull | TrialKind::BaselineClamp => Phase::Baseline,
            TrialKind::AdaptField | TrialKind::AdaptClamp => Phase::Adaptation,
            TrialKind::TestClamp | TrialKind::TrainField | TrialKind::TrainClamp => Phase::Test,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Baseline => "baseline",
            Phase::Adaptation => "adaptation",
            Phase::Test => "test",
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Phase::Baseline),
            "adaptation" => Ok(Phase::Adaptation),
            "test" | "post" => Ok(Phase::Test),
            other => Err(format!("unknown phase '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptationIndex {
    pub value: f64,
    pub direction_deg: f64,
    pub phase: Phase,
    pub group_deg: f64,
}

impl AdaptationIndex {
    /// Soft sanity bound on index values.
    pub fn is_plausible(&self) -> bool {
        self.value.is_finite() && self.value.abs() <= 1.5
    }
}

/// Ordinary least-squares slope of `y` on `x` with an intercept.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
    }
    let var = sxx / n;
    if !(var >= MIN_PREDICTOR_VARIANCE) {
        return Err(AnalysisError::DegenerateRegression(var));
    }
    Ok(sxy / sxx)
}

/// Adaptation index of an error-clamp trial: slope of the lateral force the
/// hand applies to the channel against the force that would exactly cancel
/// a curl field of gain `alpha_true`, over the movement window.
pub fn adaptation_index(record: &TrialRecord, alpha_true: f64) -> Result<AdaptationIndex, AnalysisError> {
    let FieldSpec::Clamp { channel } = record.spec.field else {
        return Err(AnalysisError::NotClamp);
    };
    let v = filtered_velocity(&record.position, record.sample_rate())?;
    let window = movement_window(&record.t, &v)?;
    let (u, n) = (channel.axis(), channel.normal());
    let range = window.start..=window.stop;
    let ideal: Vec<f64> = v[range.clone()].iter().map(|v| alpha_true * u.dot(v)).collect();
    let lateral: Vec<f64> = record.force[range].iter().map(|f| n.dot(f)).collect();
    Ok(AdaptationIndex {
        value: ols_slope(&ideal, &lateral)?,
        direction_deg: record.spec.direction_deg,
        phase: Phase::of(record.spec.kind),
        group_deg: record.spec.group_deg,
    })
}

/// Mean and standard error of the mean.
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn same_direction(a: f64, b: f64) -> bool {
    direction_key(a) == direction_key(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    /// Fixed training direction, varying test direction.
    Intra,
    /// Fixed test direction, varying training direction.
    Inter,
}

impl CurveKind {
    pub fn name(self) -> &'static str {
        match self {
            CurveKind::Intra => "intra",
            CurveKind::Inter => "inter",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub offset_deg: f64,
    /// Reach direction the entry was measured in.
    pub direction_deg: f64,
    /// Training direction of the contributing group.
    pub group_deg: f64,
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
}

/// Adaptation index against angular offset; entries ordered from -135 to
/// 180 deg. The -180 deg entry of a plot is the 180 deg entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationCurve {
    pub kind: CurveKind,
    /// Training direction (intra) or test direction (inter).
    pub anchor_deg: f64,
    pub baseline_corrected: bool,
    pub points: Vec<CurvePoint>,
}

impl GeneralizationCurve {
    pub fn at(&self, offset_deg: f64) -> Option<&CurvePoint> {
        self.points
            .iter()
            .find(|p| same_direction(p.offset_deg, offset_deg))
    }
}

/// Intra-generalization curve of the group trained at `group_deg`, from its
/// test-phase indices. Offsets are `test - train`, wrapped.
pub fn intra_curve(indices: &[AdaptationIndex], group_deg: f64) -> Result<GeneralizationCurve, AnalysisError> {
    let points = CURVE_OFFSETS
        .iter()
        .map(|&offset| {
            let direction = (group_deg + offset).rem_euclid(360.0);
            let values: Vec<f64> = indices
                .iter()
                .filter(|i| {
                    i.phase == Phase::Test
                        && same_direction(i.group_deg, group_deg)
                        && same_direction(i.direction_deg, direction)
                })
                .map(|i| i.value)
                .collect();
            if values.is_empty() {
                return Err(AnalysisError::MissingDirection(direction));
            }
            let (mean, sem) = mean_sem(&values);
            Ok(CurvePoint {
                offset_deg: offset,
                direction_deg: direction,
                group_deg: group_deg.rem_euclid(360.0),
                mean,
                sem,
                n: values.len(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GeneralizationCurve {
        kind: CurveKind::Intra,
        anchor_deg: group_deg.rem_euclid(360.0),
        baseline_corrected: false,
        points,
    })
}

/// Inter-generalization curve toward `test_deg`, one contribution per
/// training group. Offsets are `train - test`, wrapped.
pub fn inter_curve(indices: &[AdaptationIndex], test_deg: f64) -> Result<GeneralizationCurve, AnalysisError> {
    let points = CURVE_OFFSETS
        .iter()
        .map(|&offset| {
            let group = (test_deg + offset).rem_euclid(360.0);
            let values: Vec<f64> = indices
                .iter()
                .filter(|i| {
                    i.phase == Phase::Test
                        && same_direction(i.group_deg, group)
                        && same_direction(i.direction_deg, test_deg)
                })
                .map(|i| i.value)
                .collect();
            if values.is_empty() {
                return Err(AnalysisError::MissingGroup(group));
            }
            let (mean, sem) = mean_sem(&values);
            Ok(CurvePoint {
                offset_deg: offset,
                direction_deg: test_deg.rem_euclid(360.0),
                group_deg: group,
                mean,
                sem,
                n: values.len(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GeneralizationCurve {
        kind: CurveKind::Inter,
        anchor_deg: test_deg.rem_euclid(360.0),
        baseline_corrected: false,
        points,
    })
}

/// Indices of every clamp trial among `records`, in record order.
pub fn indices_from_records(records: &[TrialRecord], alpha_true: f64) -> Result<Vec<AdaptationIndex>, AnalysisError> {
    records
        .iter()
        .filter(|r| r.spec.kind.is_clamp())
        .map(|r| adaptation_index(r, alpha_true))
        .collect()
}

/// Every intra and inter curve the indices support, raw and (when
/// baselines exist) baseline-corrected. Curves with missing entries are
/// skipped.
pub fn available_curves(indices: &[AdaptationIndex]) -> Vec<GeneralizationCurve> {
    let baseline = baseline_means(indices);
    let mut raw = Vec::new();
    for d in crate::baselines::STANDARD_DIRECTIONS {
        if let Ok(c) = intra_curve(indices, d) {
            raw.push(c);
        }
    }
    for d in crate::baselines::STANDARD_DIRECTIONS {
        if let Ok(c) = inter_curve(indices, d) {
            raw.push(c);
        }
    }
    let corrected: Vec<GeneralizationCurve> = raw
        .iter()
        .filter_map(|c| baseline_correct(c, &baseline).ok())
        .collect();
    raw.extend(corrected);
    raw
}

/// Which neighbour is subtracted from which when measuring asymmetry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsymmetryConvention {
    /// `index(+45) - index(-45)`.
    #[default]
    PlusMinusMinus,
    /// `index(-45) - index(+45)`.
    MinusMinusPlus,
}

pub fn asymmetry(curve: &GeneralizationCurve) -> Option<f64> {
    asymmetry_with(curve, AsymmetryConvention::default())
}

pub fn asymmetry_with(curve: &GeneralizationCurve, convention: AsymmetryConvention) -> Option<f64> {
    let plus = curve.at(45.0)?.mean;
    let minus = curve.at(-45.0)?.mean;
    Some(match convention {
        AsymmetryConvention::PlusMinusMinus => plus - minus,
        AsymmetryConvention::MinusMinusPlus => minus - plus,
    })
}

/// Mean baseline-phase index per direction, pooled across groups.
pub fn baseline_means(indices: &[AdaptationIndex]) -> BTreeMap<i64, f64> {
    let mut acc: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for i in indices.iter().filter(|i| i.phase == Phase::Baseline) {
        acc.entry(direction_key(i.direction_deg)).or_default().push(i.value);
    }
    acc.into_iter()
        .map(|(k, v)| (k, mean_sem(&v).0))
        .collect()
}

/// Subtracts the baseline of each entry's direction from its mean.
pub fn baseline_correct(
    curve: &GeneralizationCurve,
    baseline: &BTreeMap<i64, f64>,
) -> Result<GeneralizationCurve, AnalysisError> {
    let points = curve
        .points
        .iter()
        .map(|p| {
            let b = baseline
                .get(&direction_key(p.direction_deg))
                .ok_or(AnalysisError::MissingBaseline(p.direction_deg))?;
            Ok(CurvePoint { mean: p.mean - b, ..*p })
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    Ok(GeneralizationCurve {
        baseline_corrected: true,
        points,
        ..curve.clone()
    })
}

/// Per-index baseline subtraction for non-baseline phases.
pub fn correct_indices(
    indices: &[AdaptationIndex],
    baseline: &BTreeMap<i64, f64>,
) -> Result<Vec<AdaptationIndex>, AnalysisError> {
    indices
        .iter()
        .filter(|i| i.phase != Phase::Baseline)
        .map(|i| {
            let b = baseline
                .get(&direction_key(i.direction_deg))
                .ok_or(AnalysisError::MissingBaseline(i.direction_deg))?;
            Ok(AdaptationIndex {
                value: i.value - b,
                ..*i
            })
        })
        .collect()
}

/// Directions present in a baseline map, for error reporting.
pub fn baseline_directions(baseline: &BTreeMap<i64, f64>) -> Vec<f64> {
    baseline.keys().map(|k| key_to_deg(*k)).collect()
}

/// Offset of `direction` relative to `reference`, wrapped to (-180, 180].
pub fn angular_offset(direction_deg: f64, reference_deg: f64) -> f64 {
    wrap_deg(direction_deg - reference_deg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn index(group: f64, dir: f64, phase: Phase, value: f64) -> AdaptationIndex {
        AdaptationIndex {
            value,
            direction_deg: dir,
            phase,
            group_deg: group,
        }
    }

    #[test]
    fn constant_position_has_zero_velocity() {
        let p = vec![Vector2::new(0.02, -0.01); 200];
        for v in filtered_velocity(&p, 1000.0).unwrap() {
            assert!(v.norm() < 1e-12);
        }
    }

    #[test]
    fn too_short_or_slow_sampling_rejected() {
        let p = vec![Vector2::zeros(); 10];
        assert_eq!(filtered_velocity(&p, 1000.0), Err(AnalysisError::TooShort(10)));
        let p = vec![Vector2::zeros(); 50];
        assert!(matches!(filtered_velocity(&p, 80.0), Err(AnalysisError::InvalidSampling(_))));
    }

    #[test]
    fn window_ordering_and_no_movement() {
        let t: Vec<f64> = (0..100).map(|i| i as f64 * 1e-3).collect();
        let still = vec![Vector2::new(0.01, 0.0); 100];
        assert_eq!(movement_window(&t, &still), Err(AnalysisError::NoMovement));
        let moving: Vec<_> = (0..100)
            .map(|i| Vector2::new((i as f64 * 0.03).sin() * 0.3, 0.0))
            .collect();
        let w = movement_window(&t, &moving).unwrap();
        assert!(w.t_start < w.t_stop);
    }

    #[test]
    fn ols_slope_examples() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.2).sin() * 5.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.7 * v + 0.3).collect();
        assert_relative_eq!(ols_slope(&x, &y).unwrap(), 0.7, epsilon = 1e-12);
        assert!(matches!(
            ols_slope(&[1.0; 10], &[2.0; 10]),
            Err(AnalysisError::DegenerateRegression(_))
        ));
    }

    fn grid_indices(f: impl Fn(f64, f64) -> f64) -> Vec<AdaptationIndex> {
        let mut out = Vec::new();
        for g in 0..8 {
            for d in 0..8 {
                let (g, d) = (45.0 * g as f64, 45.0 * d as f64);
                out.push(index(g, d, Phase::Test, f(g, d)));
                out.push(index(g, d, Phase::Test, f(g, d) + 0.02));
                out.push(index(g, d, Phase::Baseline, 0.1 * d / 315.0));
            }
        }
        out
    }

    #[test]
    fn curves_from_grid() {
        let data = grid_indices(|g, d| (-(wrap_deg(d - g) / 40.0).powi(2)).exp());
        let c = intra_curve(&data, 90.0).unwrap();
        assert_eq!(c.points.len(), 8);
        assert_relative_eq!(c.at(0.0).unwrap().mean, 1.01, epsilon = 1e-12);
        assert_relative_eq!(c.at(0.0).unwrap().sem, 0.01, epsilon = 1e-12);
        assert_eq!(c.at(0.0).unwrap().n, 2);
        let i = inter_curve(&data, 90.0).unwrap();
        assert_relative_eq!(i.at(0.0).unwrap().mean, c.at(0.0).unwrap().mean, epsilon = 1e-15);
        // symmetric tuning gives mirrored entries and zero asymmetry
        assert_relative_eq!(asymmetry(&c).unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(i.at(45.0).unwrap().mean, c.at(-45.0).unwrap().mean, epsilon = 1e-12);
    }

    #[test]
    fn zero_data_gives_flat_curves() {
        let data = grid_indices(|_, _| -0.02);
        for p in intra_curve(&data, 0.0).unwrap().points {
            assert_relative_eq!(p.mean, -0.01, epsilon = 1e-15);
        }
        for p in inter_curve(&data, 315.0).unwrap().points {
            assert_relative_eq!(p.mean, -0.01, epsilon = 1e-15);
        }
    }

    #[test]
    fn missing_entries_are_reported() {
        let data: Vec<_> = grid_indices(|_, _| 0.5)
            .into_iter()
            .filter(|i| !(i.direction_deg == 180.0 && i.group_deg == 45.0))
            .collect();
        assert_eq!(intra_curve(&data, 45.0), Err(AnalysisError::MissingDirection(180.0)));
        assert_eq!(inter_curve(&data, 180.0), Err(AnalysisError::MissingGroup(45.0)));
    }

    #[test]
    fn asymmetry_examples() {
        let mut c = intra_curve(&grid_indices(|_, _| 0.0), 0.0).unwrap();
        c.points[4].mean = 0.4; // +45
        c.points[2].mean = 0.3; // -45
        assert_relative_eq!(asymmetry(&c).unwrap(), 0.1, epsilon = 1e-12);
        assert_relative_eq!(
            asymmetry_with(&c, AsymmetryConvention::MinusMinusPlus).unwrap(),
            -0.1,
            epsilon = 1e-12
        );
        for p in &mut c.points {
            p.mean = -p.mean;
        }
        assert_relative_eq!(asymmetry(&c).unwrap(), -0.1, epsilon = 1e-12);
    }

    #[test]
    fn baseline_correction() {
        let data = grid_indices(|g, d| 0.3 + 0.01 * (g - d) / 45.0);
        let base = baseline_means(&data);
        assert_eq!(base.len(), 8);
        let curve = intra_curve(&data, 135.0).unwrap();
        let corrected = baseline_correct(&curve, &base).unwrap();
        assert!(corrected.baseline_corrected);
        for (p, c) in curve.points.iter().zip(&corrected.points) {
            let b = base[&direction_key(p.direction_deg)];
            assert_relative_eq!(c.mean, p.mean - b, epsilon = 1e-15);
        }
        // subtract-then-mean equals mean-then-subtract
        let per_index = correct_indices(&data, &base).unwrap();
        let via_indices = intra_curve(&per_index, 135.0).unwrap();
        for (a, b) in via_indices.points.iter().zip(&corrected.points) {
            assert_relative_eq!(a.mean, b.mean, epsilon = 1e-12);
        }
        let zero: BTreeMap<i64, f64> = base.keys().map(|k| (*k, 0.0)).collect();
        assert_eq!(baseline_correct(&curve, &zero).unwrap().points, curve.points);
        let mut partial = base.clone();
        partial.remove(&direction_key(90.0));
        assert_eq!(
            baseline_correct(&curve, &partial),
            Err(AnalysisError::MissingBaseline(90.0))
        );
    }
}
