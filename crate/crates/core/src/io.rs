//! Experiment configuration, CSV/JSON artifacts, baseline import and the
//! output manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{AdaptationIndex, CurveKind, GeneralizationCurve, Phase};
use crate::arm::ArmParams;
use crate::baselines::{direction_key, key_to_deg, BaselinePath, BaselineSet, STANDARD_DIRECTIONS};
use crate::controllers::{FeedforwardPlan, ModelKind};
use crate::environment::ChannelWalls;
use crate::error::IoError;
use crate::fitting::{FitOptions, FitResult, IndexDataset, Observation};
use crate::protocol::ScheduledTrial;
use crate::synthetic::LearningCurve;
use crate::trial::{SimSettings, TrialKind, TrialRecord, TrialSpec};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn io_err(p: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path_str(p),
        source,
    }
}

fn schema(p: &Path, message: impl Into<String>) -> IoError {
    IoError::Schema {
        path: path_str(p),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmSection {
    pub m1_kg: f64,
    pub m2_kg: f64,
    pub l1_m: f64,
    pub l2_m: f64,
    pub r1_m: f64,
    pub r2_m: f64,
    pub i1_kg_m2: f64,
    pub i2_kg_m2: f64,
}

impl Default for ArmSection {
    fn default() -> Self {
        let a = ArmParams::default();
        ArmSection {
            m1_kg: a.m1,
            m2_kg: a.m2,
            l1_m: a.l1,
            l2_m: a.l2,
            r1_m: a.r1,
            r2_m: a.r2,
            i1_kg_m2: a.i1,
            i2_kg_m2: a.i2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSection {
    /// Curl gain; positive is the clockwise field.
    pub gain_ns_per_m: f64,
}

impl Default for FieldSection {
    fn default() -> Self {
        FieldSection {
            gain_ns_per_m: SimSettings::default().field_gain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub half_width_m: f64,
    pub stiffness_n_per_m: f64,
    pub damping_ns_per_m: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let w = ChannelWalls::default();
        ChannelSection {
            half_width_m: w.half_width,
            stiffness_n_per_m: w.k_wall,
            damping_ns_per_m: w.b_wall,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySection {
    pub movement_time_s: f64,
    pub reach_distance_m: f64,
    pub settle_time_s: f64,
    pub home_m: [f64; 2],
}

impl Default for TrajectorySection {
    fn default() -> Self {
        let s = SimSettings::default();
        TrajectorySection {
            movement_time_s: s.movement_time,
            reach_distance_m: s.reach_distance,
            settle_time_s: s.settle_time,
            home_m: s.home,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub step_s: f64,
    pub log_rate_hz: f64,
    pub impedance_feedforward: FeedforwardPlan,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let s = SimSettings::default();
        SimulationSection {
            step_s: s.step,
            log_rate_hz: s.log_rate,
            impedance_feedforward: s.impedance_feedforward,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    /// Signed peak perpendicular error per direction 0, 45, ..., 315 deg;
    /// positive is counter-clockwise.
    pub pe_mm: [f64; 8],
    /// Straight baselines instead of `pe_mm`.
    pub straight: bool,
    /// Measured baseline movements to use instead (relative to the config).
    pub import: Option<PathBuf>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            pe_mm: crate::baselines::DEFAULT_BASELINE_PE_MM,
            straight: false,
            import: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSection {
    /// Protocol seed of the group trained at 0 deg; group `i` uses `protocol + i`.
    pub protocol: u64,
    pub noise: Vec<u64>,
}

impl Default for SeedSection {
    fn default() -> Self {
        SeedSection {
            protocol: 1,
            noise: (1..=20).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    /// Model that generates simulated participants.
    pub model: ModelKind,
    /// Sd of the noise added to group-mean indices in recovery studies.
    pub noise_sd: f64,
    pub learning: LearningCurve,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            model: ModelKind::Standard,
            noise_sd: 0.05,
            learning: LearningCurve::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialFileLayout {
    /// One file per group with a trial-index column.
    #[default]
    Concatenated,
    PerTrial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub trial_files: TrialFileLayout,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            trial_files: TrialFileLayout::Concatenated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub arm: ArmSection,
    #[serde(default)]
    pub field: FieldSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub trajectory: TrajectorySection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub baselines: BaselineSection,
    #[serde(default)]
    pub seeds: SeedSection,
    #[serde(default)]
    pub fitting: FitOptions,
    #[serde(default)]
    pub synthetic: SyntheticSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            arm: ArmSection::default(),
            field: FieldSection::default(),
            channel: ChannelSection::default(),
            trajectory: TrajectorySection::default(),
            simulation: SimulationSection::default(),
            baselines: BaselineSection::default(),
            seeds: SeedSection::default(),
            fitting: FitOptions::default(),
            synthetic: SyntheticSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, IoError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| IoError::Config {
            path: path_str(path),
            message: e.to_string().trim_end().replace('\n', " | "),
        })?;
        cfg.validate(path)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml(&text, path)?;
        // Imported baselines are resolved relative to the config file.
        if let (Some(import), Some(dir)) = (&cfg.baselines.import, path.parent()) {
            if import.is_relative() {
                cfg.baselines.import = Some(dir.join(import));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn validate(&self, path: &Path) -> Result<(), IoError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(schema(
                path,
                format!(
                    "schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        self.arm().validate().map_err(|e| schema(path, format!("arm: {e}")))?;
        let s = self.settings();
        let probe = s.trial(
            0,
            0.0,
            0.0,
            TrialKind::BaselineClamp,
            crate::controllers::ControllerSpec::Standard {
                representation: crate::controllers::Representation::naive(ModelKind::Standard, 0.0),
            },
        );
        probe.validate().map_err(|e| schema(path, e.to_string()))?;
        if !(s.field_gain.is_finite()) {
            return Err(schema(path, "field.gain_ns_per_m must be finite"));
        }
        if self.baselines.pe_mm.iter().any(|v| !v.is_finite()) {
            return Err(schema(path, "baselines.pe_mm must be finite"));
        }
        if !(self.synthetic.noise_sd >= 0.0) {
            return Err(schema(path, "synthetic.noise_sd must be non-negative"));
        }
        let b = &self.fitting.bounds;
        for (name, r) in [
            ("amplitude", b.amplitude),
            ("sigma_deg", b.sigma_deg),
            ("offset_deg", b.offset_deg),
            ("alpha_k", b.alpha_k),
            ("alpha_b", b.alpha_b),
        ] {
            if !(r[0] <= r[1]) {
                return Err(schema(path, format!("fitting.bounds.{name}: lower exceeds upper")));
            }
        }
        if b.sigma_deg[0] <= 0.0 {
            return Err(schema(path, "fitting.bounds.sigma_deg must be positive"));
        }
        if self.fitting.restarts == 0 || !(self.fitting.table_step > 0.0) {
            return Err(schema(path, "fitting.restarts and fitting.table_step must be positive"));
        }
        Ok(())
    }

    pub fn arm(&self) -> ArmParams {
        let a = &self.arm;
        ArmParams {
            m1: a.m1_kg,
            m2: a.m2_kg,
            l1: a.l1_m,
            l2: a.l2_m,
            r1: a.r1_m,
            r2: a.r2_m,
            i1: a.i1_kg_m2,
            i2: a.i2_kg_m2,
            base: [0.0, 0.0],
        }
        .with_home(Vector2::new(self.trajectory.home_m[0], self.trajectory.home_m[1]))
    }

    pub fn settings(&self) -> SimSettings {
        SimSettings {
            step: self.simulation.step_s,
            log_rate: self.simulation.log_rate_hz,
            movement_time: self.trajectory.movement_time_s,
            settle_time: self.trajectory.settle_time_s,
            reach_distance: self.trajectory.reach_distance_m,
            home: self.trajectory.home_m,
            field_gain: self.field.gain_ns_per_m,
            channel: ChannelWalls {
                half_width: self.channel.half_width_m,
                k_wall: self.channel.stiffness_n_per_m,
                b_wall: self.channel.damping_ns_per_m,
            },
            impedance_feedforward: self.simulation.impedance_feedforward,
        }
    }

    /// Baselines from the PE table or from the imported movements.
    pub fn baseline_set(&self) -> Result<BaselineSet, IoError> {
        if let Some(path) = &self.baselines.import {
            return import_baselines(path, &self.arm(), &self.settings());
        }
        Ok(if self.baselines.straight {
            BaselineSet::straight()
        } else {
            BaselineSet::curved(&self.baselines.pe_mm)
        })
    }

    pub fn protocol_seed(&self, group_deg: f64) -> u64 {
        self.seeds.protocol + (direction_key(group_deg) / 45_000) as u64
    }
}

fn csv_err(path: &Path, e: csv::Error) -> IoError {
    let line = e.position().map_or(0, |p| p.line());
    IoError::Csv {
        path: path_str(path),
        line,
        message: e.to_string(),
    }
}

fn write_rows<T: Serialize>(path: &Path, preamble: &[String], rows: &[T]) -> Result<(), IoError> {
    let mut buf = Vec::new();
    for line in preamble {
        writeln!(buf, "# {line}").expect("write to memory");
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in rows {
            w.serialize(r).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(io_err(path))?;
    }
    write_bytes(path, &buf)
}

/// Writes a file, creating parent directories as needed.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

/// Rows of a CSV file plus its `# ` preamble lines.
fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<(Vec<String>, Vec<T>), IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let preamble: Vec<String> = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.trim_start_matches('#').trim_start().to_string())
        .collect();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let rows = r
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| csv_err(path, e))?;
    Ok((preamble, rows))
}

fn read_headers(path: &Path) -> Result<Vec<String>, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    Ok(r.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScheduleRow {
    index: usize,
    block: u8,
    target_deg: f64,
    kind: TrialKind,
    field: String,
    feedback: bool,
}

pub fn write_schedule(path: &Path, group_deg: f64, seed: u64, trials: &[ScheduledTrial]) -> Result<(), IoError> {
    let rows: Vec<ScheduleRow> = trials
        .iter()
        .map(|t| ScheduleRow {
            index: t.index,
            block: t.block,
            target_deg: t.target_deg,
            kind: t.kind,
            field: t.field_name().to_string(),
            feedback: t.feedback,
        })
        .collect();
    write_rows(path, &[format!("group_deg={group_deg} seed={seed}")], &rows)
}

pub fn read_schedule(path: &Path) -> Result<Vec<ScheduledTrial>, IoError> {
    let (_, rows): (_, Vec<ScheduleRow>) = read_rows(path)?;
    Ok(rows
        .into_iter()
        .map(|r| ScheduledTrial {
            index: r.index,
            block: r.block,
            target_deg: r.target_deg,
            kind: r.kind,
            feedback: r.feedback,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct SampleRow {
    trial: usize,
    t: f64,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    fx: f64,
    fy: f64,
    q1: f64,
    q2: f64,
}

const SPEC_PREFIX: &str = "spec ";

/// Trial records in one file: a `# spec {json}` header line per trial,
/// then samples keyed by trial index.
pub fn write_trial_records(path: &Path, records: &[TrialRecord]) -> Result<(), IoError> {
    let preamble: Vec<String> = records
        .iter()
        .map(|r| format!("{SPEC_PREFIX}{}", serde_json::to_string(&r.spec).expect("spec serializes")))
        .collect();
    let mut rows = Vec::new();
    for r in records {
        for i in 0..r.len() {
            rows.push(SampleRow {
                trial: r.spec.index,
                t: r.t[i],
                x: r.position[i].x,
                y: r.position[i].y,
                vx: r.velocity[i].x,
                vy: r.velocity[i].y,
                fx: r.force[i].x,
                fy: r.force[i].y,
                q1: r.joints[i].x,
                q2: r.joints[i].y,
            });
        }
    }
    write_rows(path, &preamble, &rows)
}

pub fn read_trial_records(path: &Path) -> Result<Vec<TrialRecord>, IoError> {
    let (preamble, rows): (_, Vec<SampleRow>) = read_rows(path)?;
    let mut records: BTreeMap<usize, TrialRecord> = BTreeMap::new();
    let mut order = Vec::new();
    for line in preamble.iter().filter_map(|l| l.strip_prefix(SPEC_PREFIX)) {
        let spec: TrialSpec = serde_json::from_str(line).map_err(|source| IoError::Json {
            path: path_str(path),
            source,
        })?;
        order.push(spec.index);
        records.insert(
            spec.index,
            TrialRecord {
                spec,
                t: vec![],
                position: vec![],
                velocity: vec![],
                force: vec![],
                joints: vec![],
            },
        );
    }
    if records.is_empty() {
        return Err(schema(path, "no '# spec' header lines; not a trial record file"));
    }
    for (line, s) in rows.iter().enumerate() {
        let r = records.get_mut(&s.trial).ok_or_else(|| IoError::Csv {
            path: path_str(path),
            line: (preamble.len() + line + 2) as u64,
            message: format!("trial {} has no spec header", s.trial),
        })?;
        r.t.push(s.t);
        r.position.push(Vector2::new(s.x, s.y));
        r.velocity.push(Vector2::new(s.vx, s.vy));
        r.force.push(Vector2::new(s.fx, s.fy));
        r.joints.push(Vector2::new(s.q1, s.q2));
    }
    Ok(order.into_iter().map(|i| records.remove(&i).expect("indexed")).collect())
}

/// One line per trial of a simulated protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub block: u8,
    pub group_deg: f64,
    pub target_deg: f64,
    pub kind: TrialKind,
    pub feedback: bool,
    /// Signed perpendicular error (mm), empty when undefined.
    pub pe_mm: Option<f64>,
    /// Adaptation index of clamp trials.
    pub index: Option<f64>,
}

pub fn write_trial_summaries(path: &Path, rows: &[TrialSummary]) -> Result<(), IoError> {
    write_rows(path, &[], rows)
}

pub fn read_trial_summaries(path: &Path) -> Result<Vec<TrialSummary>, IoError> {
    Ok(read_rows(path)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct IndexRow {
    group_deg: f64,
    direction_deg: f64,
    phase: Phase,
    value: f64,
}

pub fn write_indices(path: &Path, indices: &[AdaptationIndex]) -> Result<(), IoError> {
    let rows: Vec<IndexRow> = indices
        .iter()
        .map(|i| IndexRow {
            group_deg: i.group_deg,
            direction_deg: i.direction_deg,
            phase: i.phase,
            value: i.value,
        })
        .collect();
    write_rows(path, &[], &rows)
}

pub fn read_indices(path: &Path) -> Result<Vec<AdaptationIndex>, IoError> {
    let (_, rows): (_, Vec<IndexRow>) = read_rows(path)?;
    Ok(rows
        .into_iter()
        .map(|r| AdaptationIndex {
            value: r.value,
            direction_deg: r.direction_deg,
            phase: r.phase,
            group_deg: r.group_deg,
        })
        .collect())
}

pub fn write_dataset(path: &Path, data: &IndexDataset) -> Result<(), IoError> {
    write_rows(path, &[], data.observations())
}

pub fn read_dataset(path: &Path) -> Result<IndexDataset, IoError> {
    let (_, rows): (_, Vec<Observation>) = read_rows(path)?;
    IndexDataset::new(rows).map_err(|e| schema(path, e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct CurveRow {
    kind: CurveKind,
    anchor_deg: f64,
    baseline_corrected: bool,
    offset_deg: f64,
    direction_deg: f64,
    group_deg: f64,
    mean: f64,
    sem: f64,
    n: usize,
}

pub fn write_curves(path: &Path, curves: &[GeneralizationCurve]) -> Result<(), IoError> {
    let rows: Vec<CurveRow> = curves
        .iter()
        .flat_map(|c| {
            c.points.iter().map(move |p| CurveRow {
                kind: c.kind,
                anchor_deg: c.anchor_deg,
                baseline_corrected: c.baseline_corrected,
                offset_deg: p.offset_deg,
                direction_deg: p.direction_deg,
                group_deg: p.group_deg,
                mean: p.mean,
                sem: p.sem,
                n: p.n,
            })
        })
        .collect();
    write_rows(path, &[], &rows)
}

pub fn read_curves(path: &Path) -> Result<Vec<GeneralizationCurve>, IoError> {
    let (_, rows): (_, Vec<CurveRow>) = read_rows(path)?;
    let mut curves: Vec<GeneralizationCurve> = Vec::new();
    for r in rows {
        let point = crate::analysis::CurvePoint {
            offset_deg: r.offset_deg,
            direction_deg: r.direction_deg,
            group_deg: r.group_deg,
            mean: r.mean,
            sem: r.sem,
            n: r.n,
        };
        match curves.last_mut() {
            Some(c) if c.kind == r.kind && c.anchor_deg == r.anchor_deg && c.baseline_corrected == r.baseline_corrected => {
                c.points.push(point)
            }
            _ => curves.push(GeneralizationCurve {
                kind: r.kind,
                anchor_deg: r.anchor_deg,
                baseline_corrected: r.baseline_corrected,
                points: vec![point],
            }),
        }
    }
    Ok(curves)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryRow {
    pub kind: CurveKind,
    pub anchor_deg: f64,
    pub baseline_corrected: bool,
    pub asymmetry: f64,
}

pub fn write_asymmetries(path: &Path, rows: &[AsymmetryRow]) -> Result<(), IoError> {
    write_rows(path, &[], rows)
}

pub fn read_asymmetries(path: &Path) -> Result<Vec<AsymmetryRow>, IoError> {
    Ok(read_rows(path)?.1)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path_str(path),
        source,
    })?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path_str(path),
        source,
    })
}

pub fn read_fit(path: &Path) -> Result<FitResult, IoError> {
    read_json(path)
}

/// One imported movement before resampling.
struct RawPath {
    direction_deg: Option<f64>,
    t: Vec<f64>,
    p: Vec<Vector2<f64>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
struct PathRow {
    #[serde(default)]
    direction_deg: Option<f64>,
    t: f64,
    x: f64,
    y: f64,
}

/// Minimum number of samples of an imported movement.
pub const MIN_IMPORT_SAMPLES: usize = 20;

fn resample(raw: &RawPath, rate: f64) -> Vec<Vector2<f64>> {
    let t0 = raw.t[0];
    let n = ((raw.t[raw.t.len() - 1] - t0) * rate + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let t = t0 + i as f64 / rate;
        while j + 2 < raw.t.len() && raw.t[j + 1] <= t {
            j += 1;
        }
        let (ta, tb) = (raw.t[j], raw.t[j + 1]);
        let w = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        out.push(raw.p[j] + (raw.p[j + 1] - raw.p[j]) * w);
    }
    out
}

/// Direction of a movement from its start and end points, snapped to the
/// 45 degree grid (within 10 degrees).
fn infer_direction(p: &[Vector2<f64>]) -> Option<f64> {
    let d = p[p.len() - 1] - p[0];
    let deg = d.y.atan2(d.x).to_degrees().rem_euclid(360.0);
    let snapped = (deg / 45.0).round() * 45.0 % 360.0;
    ((deg - snapped).abs().min(360.0 - (deg - snapped).abs()) < 10.0).then_some(snapped)
}

/// Reads measured baseline movements and returns the averaged path per
/// direction, resampled at the log rate and translated to start at home.
///
/// Accepts the trial-record CSV (directions from the spec headers) or a
/// path-only CSV with columns `t, x, y` and optionally `direction_deg`.
/// All eight standard directions must be present.
pub fn import_baselines(path: &Path, arm: &ArmParams, settings: &SimSettings) -> Result<BaselineSet, IoError> {
    let headers = read_headers(path)?;
    let raws: Vec<RawPath> = if headers.iter().any(|h| h == "trial") {
        read_trial_records(path)?
            .into_iter()
            .map(|r| RawPath {
                direction_deg: Some(r.spec.direction_deg),
                t: r.t,
                p: r.position,
            })
            .collect()
    } else {
        for col in ["t", "x", "y"] {
            if !headers.iter().any(|h| h == col) {
                return Err(schema(path, format!("missing column '{col}' (expected t, x, y)")));
            }
        }
        let (_, rows): (_, Vec<PathRow>) = read_rows(path)?;
        let mut paths: Vec<RawPath> = Vec::new();
        for r in rows {
            // A new movement starts when the direction changes or time restarts.
            let new = match paths.last() {
                None => true,
                Some(last) => last.direction_deg != r.direction_deg || r.t <= *last.t.last().expect("non-empty"),
            };
            if new {
                paths.push(RawPath {
                    direction_deg: r.direction_deg,
                    t: vec![],
                    p: vec![],
                });
            }
            let last = paths.last_mut().expect("pushed");
            last.t.push(r.t);
            last.p.push(Vector2::new(r.x, r.y));
        }
        paths
    };

    let home = settings.home();
    let mut by_dir: BTreeMap<i64, Vec<Vec<Vector2<f64>>>> = BTreeMap::new();
    for raw in &raws {
        if raw.t.len() < MIN_IMPORT_SAMPLES {
            return Err(IoError::Analysis(crate::error::AnalysisError::TooShort(raw.t.len())));
        }
        if raw.t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(schema(path, "time stamps must be strictly increasing within a movement"));
        }
        let direction = match raw.direction_deg {
            Some(d) => d,
            None => infer_direction(&raw.p).ok_or_else(|| {
                schema(path, "cannot infer a movement's direction; add a direction_deg column")
            })?,
        };
        let start = raw.p[0];
        let samples: Vec<Vector2<f64>> = resample(raw, settings.log_rate)
            .into_iter()
            .map(|p| p - start + home)
            .collect();
        by_dir.entry(direction_key(direction)).or_default().push(samples);
    }

    let mut set = BaselineSet::new();
    for (k, paths) in &by_dir {
        let n = paths.iter().map(Vec::len).min().expect("non-empty group");
        let mean: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let s = paths.iter().map(|p| p[i]).sum::<Vector2<f64>>() / paths.len() as f64;
                [s.x, s.y]
            })
            .collect();
        set.insert(
            key_to_deg(*k),
            BaselinePath::Sampled {
                rate: settings.log_rate,
                positions: mean,
            },
        );
    }
    for d in STANDARD_DIRECTIONS {
        if set.get(d).is_none() {
            return Err(schema(path, format!("no baseline movement for direction {d} deg")));
        }
        set.plan(arm, home, d, settings.reach_distance, settings.movement_time, settings.step)
            .map_err(|e| schema(path, format!("direction {d} deg: {e}")))?;
    }
    Ok(set)
}

/// Path-only CSV of hand positions, one block of rows per direction.
pub fn write_paths(path: &Path, paths: &[(f64, Vec<f64>, Vec<Vector2<f64>>)]) -> Result<(), IoError> {
    #[derive(Serialize)]
    struct Row {
        direction_deg: f64,
        t: f64,
        x: f64,
        y: f64,
    }
    let rows: Vec<Row> = paths
        .iter()
        .flat_map(|(d, t, p)| {
            t.iter().zip(p).map(move |(t, p)| Row {
                direction_deg: *d,
                t: *t,
                x: p.x,
                y: p.y,
            })
        })
        .collect();
    write_rows(path, &[], &rows)
}

pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

/// Inputs, seeds and content hashes of a command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Option<ManifestEntry>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<ManifestEntry>,
    pub outputs: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            tool: "fieldgen".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: None,
            seeds: vec![],
            inputs: vec![],
            outputs: vec![],
        }
    }

    fn entry(path: &Path, base: &Path) -> Result<ManifestEntry, IoError> {
        Ok(ManifestEntry {
            path: path.strip_prefix(base).unwrap_or(path).display().to_string(),
            sha256: sha256_file(path)?,
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), IoError> {
        self.inputs.push(Self::entry(path, Path::new(""))?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path, out_dir: &Path) -> Result<(), IoError> {
        self.outputs.push(Self::entry(path, out_dir)?);
        Ok(())
    }

    pub fn set_config(&mut self, path: &Path) -> Result<(), IoError> {
        self.config = Some(Self::entry(path, Path::new(""))?);
        Ok(())
    }

    /// Writes `manifest_<command>.json` into `out_dir`.
    pub fn write(&mut self, out_dir: &Path) -> Result<PathBuf, IoError> {
        self.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let path = out_dir.join(format!("manifest_{}.json", self.command));
        write_json(&path, self)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("fieldgen-io-{}-{name}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn default_config_round_trips() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&text, Path::new("x.toml")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.settings(), SimSettings::default());
        assert_eq!(back.arm(), ArmParams::default());
    }

    #[test]
    fn unknown_keys_and_versions_rejected() {
        let e = ExperimentConfig::from_toml("schema_version = 1\n[arm]\nmass = 2.0\n", Path::new("c.toml")).unwrap_err();
        assert!(matches!(e, IoError::Config { .. }), "{e}");
        assert!(e.to_string().contains("c.toml") && e.to_string().contains("line"), "{e}");
        let e = ExperimentConfig::from_toml("schema_version = 9\n", Path::new("c.toml")).unwrap_err();
        assert!(matches!(e, IoError::Schema { .. }));
        let e = ExperimentConfig::from_toml("schema_version = 1\n[simulation]\nstep_s = -1.0\n", Path::new("c.toml"))
            .unwrap_err();
        assert!(matches!(e, IoError::Schema { .. }));
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_toml("schema_version = 1\n", Path::new("c.toml")).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn direction_inference() {
        let p = vec![Vector2::new(0.0, 0.0), Vector2::new(-0.07, 0.072)];
        assert_eq!(infer_direction(&p), Some(135.0));
        let p = vec![Vector2::new(0.0, 0.0), Vector2::new(0.1, 0.04)];
        assert_eq!(infer_direction(&p), None);
        let p = vec![Vector2::new(0.0, 0.0), Vector2::new(0.1, -0.001)];
        assert_eq!(infer_direction(&p), Some(0.0));
    }

    #[test]
    fn indices_round_trip_bytes() {
        let dir = tmp("idx");
        let idx = vec![
            AdaptationIndex {
                value: 0.123456789012345,
                direction_deg: 45.0,
                phase: Phase::Test,
                group_deg: 90.0,
            },
            AdaptationIndex {
                value: -1e-17,
                direction_deg: 0.0,
                phase: Phase::Baseline,
                group_deg: 0.0,
            },
        ];
        let a = dir.join("a.csv");
        let b = dir.join("b.csv");
        write_indices(&a, &idx).unwrap();
        let back = read_indices(&a).unwrap();
        assert_eq!(back, idx);
        write_indices(&b, &back).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn csv_errors_carry_line() {
        let dir = tmp("bad");
        let p = dir.join("bad.csv");
        fs::write(&p, "group_deg,direction_deg,phase,value\n0,0,baseline,0.1\n0,45,nonsense,0.2\n").unwrap();
        let e = read_indices(&p).unwrap_err();
        match e {
            IoError::Csv { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
    }
}
