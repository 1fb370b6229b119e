use std::f64::consts::PI;

use nalgebra::Vector2;

use fieldgen::analysis::perpendicular_error;
use fieldgen::arm::ArmParams;
use fieldgen::baselines::{BaselineSet, STANDARD_DIRECTIONS};
use fieldgen::controllers::{direction_vector, min_jerk_progress, ControllerSpec, ImpedanceScaling, Representation};
use fieldgen::error::IoError;
use fieldgen::io::{import_baselines, write_paths};
use fieldgen::trial::{SimSettings, Simulator, TrialKind};

/// Recorded-style reach: min-jerk along the direction plus a half-sine
/// sideways bump, sampled at 1 kHz until the end of the movement.
fn reach(settings: &SimSettings, d: f64, bump_m: f64, origin: Vector2<f64>) -> (f64, Vec<f64>, Vec<Vector2<f64>>) {
    let u = direction_vector(d);
    let n = Vector2::new(-u.y, u.x);
    let t: Vec<f64> = (0..=375).map(|i| i as f64 / 1000.0).collect();
    let p = t
        .iter()
        .map(|t| {
            let (s, _, _) = min_jerk_progress(settings.movement_time, *t);
            origin + u * (settings.reach_distance * s) + n * (bump_m * (PI * s).sin())
        })
        .collect();
    (d, t, p)
}

fn import(paths: &[(f64, Vec<f64>, Vec<Vector2<f64>>)]) -> Result<BaselineSet, IoError> {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("paths.csv");
    write_paths(&file, paths).unwrap();
    import_baselines(&file, &ArmParams::default(), &SimSettings::default())
}

#[test]
fn straight_paths_import_as_straight_plans() {
    let s = SimSettings::default();
    let arm = ArmParams::default();
    // Recorded in another frame: translation must not matter.
    let paths: Vec<_> = STANDARD_DIRECTIONS.iter().map(|d| reach(&s, *d, 0.0, Vector2::new(0.3, -0.2))).collect();
    let set = import(&paths).unwrap();
    let home = s.home();
    for d in STANDARD_DIRECTIONS {
        let imported = set.plan(&arm, home, d, s.reach_distance, s.movement_time, s.step).unwrap();
        let straight = BaselineSet::straight()
            .plan(&arm, home, d, s.reach_distance, s.movement_time, s.step)
            .unwrap();
        for (a, b) in imported.samples().iter().zip(straight.samples()) {
            assert!((a.p - b.p).norm() < 1e-4, "{d} deg");
        }
    }
}

#[test]
fn bumped_paths_reproduce_their_perpendicular_error() {
    let s = SimSettings::default();
    let paths: Vec<_> = STANDARD_DIRECTIONS.iter().map(|d| reach(&s, *d, 0.004, Vector2::zeros())).collect();
    let set = import(&paths).unwrap();
    let sim = Simulator::new(ArmParams::default(), s, set).unwrap();
    for d in STANDARD_DIRECTIONS {
        // Only the impedance controller tracks the recorded baseline path.
        let c = ControllerSpec::Impedance {
            representation: Representation::centered(0.0, 30.0, d),
            scaling: ImpedanceScaling::BASELINE,
        };
        let spec = s.trial(0, d, d, TrialKind::BaselineNull, c);
        let pe = perpendicular_error(&sim.simulate(&spec).unwrap()).unwrap();
        assert!((pe - 4.0).abs() < 0.1, "{d} deg: {pe} mm");
    }
}

#[test]
fn missing_direction_is_reported() {
    let s = SimSettings::default();
    let paths: Vec<_> = STANDARD_DIRECTIONS[..7].iter().map(|d| reach(&s, *d, 0.0, Vector2::zeros())).collect();
    let err = import(&paths).unwrap_err().to_string();
    assert!(err.contains("315"), "{err}");
}

#[test]
fn short_movements_are_rejected() {
    let s = SimSettings::default();
    let mut paths: Vec<_> = STANDARD_DIRECTIONS.iter().map(|d| reach(&s, *d, 0.0, Vector2::zeros())).collect();
    paths[2].1.truncate(10);
    paths[2].2.truncate(10);
    assert!(import(&paths).is_err());
}
