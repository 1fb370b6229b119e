//! Simulate a group, analyze it, and push the results through the file formats.

use std::fs;

use fieldgen::analysis::{indices_from_records, intra_curve, Phase};
use fieldgen::arm::ArmParams;
use fieldgen::controllers::ControllerSpec;
use fieldgen::environment::ChannelWalls;
use fieldgen::fitting::IndexDataset;
use fieldgen::io;
use fieldgen::plot::{emit_plots, PlotStyle};
use fieldgen::protocol::build_protocol;
use fieldgen::synthetic::World;
use fieldgen::trial::{SimSettings, TrialKind};

fn stiff() -> SimSettings {
    SimSettings {
        channel: ChannelWalls {
            half_width: 1e-7,
            k_wall: 1e6,
            b_wall: 1000.0,
        },
        ..SimSettings::default()
    }
}

#[test]
fn simulated_group_recovers_its_representation() {
    let world = World::standard_default();
    let sim = world.simulator(ArmParams::default(), stiff()).unwrap();
    let group = world.group(90.0).unwrap();
    let protocol = build_protocol(90.0, 3).unwrap();
    let specs = group.protocol_specs(&protocol, sim.settings());
    assert_eq!(specs.len(), 548);

    let records: Vec<_> = sim.simulate_all(&specs).into_iter().map(Result::unwrap).collect();
    let indices = indices_from_records(&records, 15.0).unwrap();
    let clamps = specs.iter().filter(|s| s.kind.is_clamp()).count();
    assert_eq!(indices.len(), clamps);

    let ControllerSpec::Standard { representation } = group.adapted() else {
        panic!("standard world")
    };
    let curve = intra_curve(&indices, 90.0).unwrap();
    assert!(!curve.points.is_empty());
    for p in &curve.points {
        let want = representation.gain_fraction(p.direction_deg);
        assert!((p.mean - want).abs() < 0.03, "{} deg: {} vs {want}", p.direction_deg, p.mean);
        assert!(p.sem < 0.01);
    }
    let baseline: Vec<f64> = indices.iter().filter(|i| i.phase == Phase::Baseline).map(|i| i.value).collect();
    assert!(baseline.iter().all(|v| v.abs() < 0.02));

    // Files round-trip.
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    io::write_trial_records(&a, &records[..12]).unwrap();
    let back = io::read_trial_records(&a).unwrap();
    assert_eq!(back.len(), 12);
    assert_eq!(back[3].spec, records[3].spec);
    io::write_trial_records(&b, &back).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    io::write_indices(&a, &indices).unwrap();
    let back = io::read_indices(&a).unwrap();
    assert_eq!(back, indices);

    let data = IndexDataset::from_indices(&indices).unwrap();
    io::write_dataset(&b, &data).unwrap();
    assert_eq!(io::read_dataset(&b).unwrap().fingerprint(), data.fingerprint());

    let curves = vec![curve];
    io::write_curves(&a, &curves).unwrap();
    assert_eq!(io::read_curves(&a).unwrap(), curves);
}

#[test]
fn schedule_round_trips() {
    let p = build_protocol(225.0, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("schedule.csv");
    io::write_schedule(&path, 225.0, 11, &p.trials).unwrap();
    assert_eq!(io::read_schedule(&path).unwrap(), p.trials);
}

#[test]
fn impedance_world_plots_are_deterministic() {
    let world = World::impedance_default();
    let sim = world.simulator(ArmParams::default(), SimSettings::default()).unwrap();
    let indices = world.clean_indices(&sim).unwrap();
    let curves = fieldgen::analysis::available_curves(&indices);
    let baseline = fieldgen::analysis::baseline_means(&indices);
    let a = emit_plots(&curves, &[], &baseline, &PlotStyle::default());
    let b = emit_plots(&curves, &[], &baseline, &PlotStyle::default());
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert!(a.iter().all(|f| f.svg.starts_with("<svg") && f.svg.trim_end().ends_with("</svg>")));
    assert!(a.iter().any(|f| f.name == "baseline_indices.svg"));
}

#[test]
fn baseline_null_trials_follow_the_baseline_path() {
    let world = World::impedance_default();
    let sim = world.simulator(ArmParams::default(), SimSettings::default()).unwrap();
    let group = world.group(0.0).unwrap();
    let protocol = build_protocol(0.0, 1).unwrap();
    let controller = group.controller_for(protocol.block(1).next().unwrap(), 0);
    for (i, d) in [0.0, 45.0, 90.0].into_iter().enumerate() {
        let spec = sim.settings().trial(0, 0.0, d, TrialKind::BaselineNull, controller);
        let pe = fieldgen::analysis::perpendicular_error(&sim.simulate(&spec).unwrap()).unwrap();
        let want = fieldgen::baselines::DEFAULT_BASELINE_PE_MM[i];
        assert!((pe - want).abs() < 0.1, "{d} deg: {pe} vs {want}");
    }
}
