//! Maximum-likelihood fits of the two representation models to
//! adaptation-index data, and their comparison by AICc and RMSE.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{adaptation_index, angular_offset, mean_sem, AdaptationIndex, Phase};
use crate::baselines::{direction_key, key_to_deg, STANDARD_DIRECTIONS};
use crate::controllers::{ControllerSpec, ImpedanceScaling, ModelKind, Representation};
use crate::error::FitError;
use crate::optimizer::{latin_hypercube, multi_start, nelder_mead, Bounds, MultiStartSummary, SimplexOptions};
use crate::trial::{Simulator, TrialKind};

/// Floor on the residual sum of squares inside the log-likelihood.
pub const SSE_FLOOR: f64 = 1e-12;

/// One group-mean adaptation index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub group_deg: f64,
    pub direction_deg: f64,
    pub phase: Phase,
    pub mean: f64,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexDataset {
    observations: Vec<Observation>,
}

fn on_grid(deg: f64) -> bool {
    deg.is_finite() && direction_key(deg) % 45_000 == 0 && (deg / 45.0 - (deg / 45.0).round()).abs() < 1e-9
}

impl IndexDataset {
    pub fn new(mut observations: Vec<Observation>) -> Result<Self, FitError> {
        let mut seen = std::collections::BTreeSet::new();
        for o in &observations {
            if !on_grid(o.direction_deg) || !on_grid(o.group_deg) {
                return Err(FitError::InvalidDataset(format!(
                    "group {} / direction {} deg is off the 45 degree grid",
                    o.group_deg, o.direction_deg
                )));
            }
            if !o.mean.is_finite() || !(o.weight > 0.0) {
                return Err(FitError::InvalidDataset(format!(
                    "non-finite mean or non-positive weight at group {} direction {}",
                    o.group_deg, o.direction_deg
                )));
            }
            if !seen.insert((direction_key(o.group_deg), direction_key(o.direction_deg), o.phase)) {
                return Err(FitError::InvalidDataset(format!(
                    "duplicate observation for group {} direction {} phase {}",
                    o.group_deg,
                    o.direction_deg,
                    o.phase.name()
                )));
            }
        }
        observations.sort_by_key(|o| (o.phase, direction_key(o.group_deg), direction_key(o.direction_deg)));
        Ok(IndexDataset { observations })
    }

    /// Group means of per-trial indices. Adaptation-phase indices (the
    /// learning curve) are left out.
    pub fn from_indices(indices: &[AdaptationIndex]) -> Result<Self, FitError> {
        let mut acc: BTreeMap<(Phase, i64, i64), Vec<f64>> = BTreeMap::new();
        for i in indices.iter().filter(|i| i.phase != Phase::Adaptation) {
            acc.entry((i.phase, direction_key(i.group_deg), direction_key(i.direction_deg)))
                .or_default()
                .push(i.value);
        }
        Self::new(
            acc.into_iter()
                .map(|((phase, g, d), v)| Observation {
                    group_deg: key_to_deg(g),
                    direction_deg: key_to_deg(d),
                    phase,
                    mean: mean_sem(&v).0,
                    weight: 1.0,
                })
                .collect(),
        )
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &Observation> {
        self.observations.iter().filter(move |o| o.phase == phase)
    }

    pub fn groups(&self, phase: Phase) -> Vec<f64> {
        let keys: std::collections::BTreeSet<i64> = self.phase(phase).map(|o| direction_key(o.group_deg)).collect();
        keys.into_iter().map(key_to_deg).collect()
    }

    /// Baseline means per direction, pooled across groups.
    pub fn baseline_by_direction(&self) -> BTreeMap<i64, f64> {
        let mut acc: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
        for o in self.phase(Phase::Baseline) {
            let e = acc.entry(direction_key(o.direction_deg)).or_default();
            e.0 += o.weight * o.mean;
            e.1 += o.weight;
        }
        acc.into_iter().map(|(k, (s, w))| (k, s / w)).collect()
    }

    /// Same data with every mean shifted by `f(observation)`.
    pub fn map_means<F: Fn(&Observation) -> f64>(&self, f: F) -> IndexDataset {
        IndexDataset {
            observations: self.observations.iter().map(|o| Observation { mean: f(o), ..*o }).collect(),
        }
    }

    /// Content hash used to check that fits share their data.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(&self.observations).expect("observations serialize");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Parameters of one group's representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupParams {
    pub group_deg: f64,
    pub amplitude: f64,
    pub sigma_deg: f64,
    /// Present for the standard model only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_deg: Option<f64>,
}

impl GroupParams {
    pub fn representation(&self) -> Representation {
        Representation {
            amplitude: self.amplitude,
            sigma_deg: self.sigma_deg,
            offset_deg: self.offset_deg,
            train_deg: self.group_deg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub groups: Vec<GroupParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ImpedanceScaling>,
}

impl ModelParams {
    pub fn group(&self, group_deg: f64) -> Option<&GroupParams> {
        self.groups.iter().find(|g| direction_key(g.group_deg) == direction_key(group_deg))
    }

    /// Number of free parameters.
    pub fn count(&self) -> usize {
        self.groups
            .iter()
            .map(|g| 2 + usize::from(g.offset_deg.is_some()))
            .sum::<usize>()
            + if self.scaling.is_some() { 2 } else { 0 }
    }

    fn validate(&self, model: ModelKind) -> Result<(), FitError> {
        for g in &self.groups {
            g.representation().validate().map_err(FitError::InvalidParams)?;
            if (model == ModelKind::Standard) != g.offset_deg.is_some() {
                return Err(FitError::InvalidParams(format!(
                    "group {}: offset must be present exactly for the standard model",
                    g.group_deg
                )));
            }
        }
        match (model, &self.scaling) {
            (ModelKind::Impedance, None) => Err(FitError::InvalidParams("impedance model needs alpha_k and alpha_b".into())),
            (ModelKind::Standard, Some(_)) => Err(FitError::InvalidParams("standard model has no impedance scaling".into())),
            _ => Ok(()),
        }
    }
}

/// Box constraints of the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBounds {
    pub amplitude: [f64; 2],
    pub sigma_deg: [f64; 2],
    pub offset_deg: [f64; 2],
    pub alpha_k: [f64; 2],
    pub alpha_b: [f64; 2],
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds {
            amplitude: [0.0, 2.0],
            sigma_deg: [2.0, 120.0],
            offset_deg: [-90.0, 90.0],
            alpha_k: [0.0, 3.0],
            alpha_b: [0.0, 3.0],
        }
    }
}

/// Which `n` enters the AICc small-sample correction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NPolicy {
    /// Number of fitted group-mean observations.
    #[default]
    Observations,
    Fixed { n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub f_tol: f64,
    pub max_iter: usize,
    pub bounds: ParamBounds,
    pub n_policy: NPolicy,
    /// Impedance fits: screened starts of (alpha_k, alpha_b) that are polished.
    pub polish_starts: usize,
    /// Impedance fits: spacing of the tabulated amplitude grid.
    pub table_step: f64,
    /// Impedance fits: tolerance (on the SSE) and iteration cap of the
    /// search over (alpha_k, alpha_b).
    pub scaling_f_tol: f64,
    pub scaling_max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 16,
            seed: 1,
            f_tol: 1e-8,
            max_iter: 5000,
            bounds: ParamBounds::default(),
            n_policy: NPolicy::Observations,
            polish_starts: 2,
            table_step: 0.1,
            scaling_f_tol: 1e-6,
            scaling_max_iter: 50,
        }
    }
}

impl FitOptions {
    fn simplex(&self) -> SimplexOptions {
        SimplexOptions {
            f_tol: self.f_tol,
            max_iter: self.max_iter,
            ..Default::default()
        }
    }
}

/// Observed and predicted index at one (group, direction).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Absent for direction means pooled across groups.
    pub group_deg: Option<f64>,
    pub direction_deg: f64,
    pub observed: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelKind,
    pub phase: Phase,
    pub params: ModelParams,
    pub nll: f64,
    pub sse: f64,
    pub rmse: f64,
    /// Absent when n <= k + 1.
    pub aicc: Option<f64>,
    pub aic: f64,
    pub k: usize,
    pub n: usize,
    pub seed: u64,
    pub converged: bool,
    pub restarts: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub dataset: String,
    pub predictions: Vec<Prediction>,
    #[serde(default)]
    pub flags: Vec<String>,
}

/// Profiled Gaussian negative log-likelihood for `n` residuals with sum of
/// squares `sse`.
pub fn nll_from_sse(sse: f64, n: usize) -> f64 {
    let n = n as f64;
    0.5 * n * (1.0 + (2.0 * std::f64::consts::PI * sse.max(SSE_FLOOR) / n).ln())
}

pub fn aic(nll: f64, k: usize) -> f64 {
    2.0 * nll + 2.0 * k as f64
}

/// Small-sample corrected AIC. Requires `n > k + 1`.
pub fn aicc(nll: f64, k: usize, n: usize) -> Result<f64, FitError> {
    if n <= k + 1 {
        return Err(FitError::SmallSample { n, k, aic: aic(nll, k) });
    }
    let kf = k as f64;
    Ok(aic(nll, k) + 2.0 * kf * (kf + 1.0) / (n as f64 - kf - 1.0))
}

fn weighted_sse(preds: &[Prediction], weights: &[f64]) -> f64 {
    preds
        .iter()
        .zip(weights)
        .map(|(p, w)| w * (p.observed - p.predicted).powi(2))
        .sum()
}

/// Everything a prediction needs beyond the parameters.
pub struct FitContext<'a> {
    pub sim: &'a Simulator,
    tables: Mutex<HashMap<(u64, u64), Arc<IndexTable>>>,
}

impl<'a> FitContext<'a> {
    pub fn new(sim: &'a Simulator) -> Self {
        FitContext {
            sim,
            tables: Mutex::new(HashMap::new()),
        }
    }

    /// Number of impedance scalings tabulated so far.
    pub fn tables_built(&self) -> usize {
        self.tables.lock().expect("table cache").len()
    }

    fn alpha_true(&self) -> f64 {
        self.sim.settings().field_gain
    }

    /// Index of one simulated impedance-model clamp reach.
    fn impedance_index(
        &self,
        group_deg: f64,
        direction_deg: f64,
        rep: Representation,
        scaling: ImpedanceScaling,
        phase: Phase,
    ) -> Result<f64, FitError> {
        let kind = if phase == Phase::Baseline {
            TrialKind::BaselineClamp
        } else {
            TrialKind::TestClamp
        };
        let spec = self.sim.settings().trial(
            0,
            group_deg,
            direction_deg,
            kind,
            ControllerSpec::Impedance {
                representation: rep,
                scaling,
            },
        );
        let rec = self.sim.simulate(&spec)?;
        Ok(adaptation_index(&rec, self.alpha_true())?.value)
    }

    /// Per-direction index as a function of the estimated-gain fraction,
    /// tabulated on `[0, a_max]` for one impedance scaling. Cached.
    fn table(&self, scaling: ImpedanceScaling, step: f64, a_max: f64) -> Result<Arc<IndexTable>, FitError> {
        let key = (scaling.alpha_k.to_bits(), scaling.alpha_b.to_bits());
        if let Some(t) = self.tables.lock().expect("table cache").get(&key) {
            if t.step == step && t.a_max >= a_max {
                return Ok(t.clone());
            }
        }
        let n = (a_max / step).ceil() as usize + 1;
        let grid: Vec<f64> = (0..n).map(|j| j as f64 * step).collect();
        let jobs: Vec<(f64, f64)> = STANDARD_DIRECTIONS
            .iter()
            .flat_map(|d| grid.iter().map(move |a| (*d, *a)))
            .collect();
        let values: Vec<f64> = jobs
            .par_iter()
            .map(|(d, a)| {
                let rep = Representation::centered(*a, 30.0, *d);
                self.impedance_index(*d, *d, rep, scaling, Phase::Test)
                    .unwrap_or(f64::NAN)
            })
            .collect();
        let mut by_dir = BTreeMap::new();
        for (i, d) in STANDARD_DIRECTIONS.iter().enumerate() {
            by_dir.insert(direction_key(*d), values[i * n..(i + 1) * n].to_vec());
        }
        let table = Arc::new(IndexTable {
            step,
            a_max: grid[n - 1],
            values: by_dir,
        });
        self.tables.lock().expect("table cache").insert(key, table.clone());
        Ok(table)
    }
}

/// Simulated clamp index per direction on a uniform grid of gain fractions.
#[derive(Debug, Clone)]
struct IndexTable {
    step: f64,
    a_max: f64,
    values: BTreeMap<i64, Vec<f64>>,
}

impl IndexTable {
    fn at(&self, direction_deg: f64, a: f64) -> f64 {
        let Some(v) = self.values.get(&direction_key(direction_deg)) else {
            return f64::NAN;
        };
        let x = (a / self.step).clamp(0.0, (v.len() - 1) as f64);
        let i = (x.floor() as usize).min(v.len() - 2);
        let w = x - i as f64;
        v[i] * (1.0 - w) + v[i + 1] * w
    }
}

/// Predicted indices for every observation of `phase` in `data`.
///
/// Standard model: the Gaussian read-out plus the measured baseline of the
/// direction (post phase), or zero (baseline phase). Impedance model: full
/// simulation of each clamp reach. Baseline-phase observations are pooled
/// into direction means.
pub fn predict_indices(
    model: ModelKind,
    params: &ModelParams,
    ctx: &FitContext,
    data: &IndexDataset,
    phase: Phase,
) -> Result<Vec<Prediction>, FitError> {
    params.validate(model)?;
    let targets = fit_targets(data, phase)?;
    let preds: Vec<Result<Prediction, FitError>> = match model {
        ModelKind::Standard => {
            let baseline = data.baseline_by_direction();
            targets
                .iter()
                .map(|(group, dir, observed)| {
                    let predicted = match group {
                        None => 0.0,
                        Some(g) => {
                            let gp = params.group(*g).ok_or_else(|| missing_group(*g))?;
                            gp.representation().gain_fraction(*dir)
                                + baseline.get(&direction_key(*dir)).copied().unwrap_or(0.0)
                        }
                    };
                    Ok(Prediction {
                        group_deg: *group,
                        direction_deg: *dir,
                        observed: *observed,
                        predicted,
                    })
                })
                .collect()
        }
        ModelKind::Impedance => {
            let scaling = params.scaling.expect("validated");
            targets
                .par_iter()
                .map(|(group, dir, observed)| {
                    let (g, rep) = match group {
                        None => (*dir, Representation::centered(0.0, 30.0, *dir)),
                        Some(g) => (*g, params.group(*g).ok_or_else(|| missing_group(*g))?.representation()),
                    };
                    let predicted = ctx.impedance_index(g, *dir, rep, scaling, phase)?;
                    Ok(Prediction {
                        group_deg: *group,
                        direction_deg: *dir,
                        observed: *observed,
                        predicted,
                    })
                })
                .collect()
        }
    };
    let preds = preds.into_iter().collect::<Result<Vec<_>, _>>()?;
    if let Some(p) = preds.iter().find(|p| !p.predicted.is_finite()) {
        return Err(FitError::NonFinitePrediction {
            group: p.group_deg.unwrap_or(f64::NAN),
            direction: p.direction_deg,
        });
    }
    Ok(preds)
}

fn missing_group(g: f64) -> FitError {
    FitError::InvalidParams(format!("no parameters for group {g} deg"))
}

/// (group, direction, observed mean) triples a fit of `phase` is scored on.
fn fit_targets(data: &IndexDataset, phase: Phase) -> Result<Vec<(Option<f64>, f64, f64)>, FitError> {
    let targets: Vec<_> = match phase {
        Phase::Baseline => data
            .baseline_by_direction()
            .into_iter()
            .map(|(k, m)| (None, key_to_deg(k), m))
            .collect(),
        Phase::Test => data
            .phase(Phase::Test)
            .map(|o| (Some(o.group_deg), o.direction_deg, o.mean))
            .collect(),
        Phase::Adaptation => {
            return Err(FitError::InvalidDataset("fits use baseline or post-adaptation data".into()))
        }
    };
    if targets.is_empty() {
        return Err(FitError::InvalidDataset(format!("no {} observations", phase.name())));
    }
    Ok(targets)
}

fn target_weights(data: &IndexDataset, phase: Phase) -> Vec<f64> {
    match phase {
        Phase::Test => data.phase(Phase::Test).map(|o| o.weight).collect(),
        _ => vec![1.0; data.baseline_by_direction().len()],
    }
}

/// Negative log-likelihood of the data under the model.
pub fn nll(
    model: ModelKind,
    params: &ModelParams,
    ctx: &FitContext,
    data: &IndexDataset,
    phase: Phase,
) -> Result<f64, FitError> {
    let preds = predict_indices(model, params, ctx, data, phase)?;
    Ok(nll_from_sse(weighted_sse(&preds, &target_weights(data, phase)), preds.len()))
}

struct Search {
    params: ModelParams,
    summary: MultiStartSummary,
    flags: Vec<String>,
}

/// Fits `model` to the `phase` observations of `data`.
pub fn fit_model(
    model: ModelKind,
    data: &IndexDataset,
    phase: Phase,
    ctx: &FitContext,
    options: &FitOptions,
) -> Result<FitResult, FitError> {
    let targets = fit_targets(data, phase)?;
    let search = match (model, phase) {
        (ModelKind::Standard, Phase::Baseline) => Search {
            params: ModelParams {
                groups: vec![],
                scaling: None,
            },
            summary: MultiStartSummary {
                restarts: 0,
                iterations: 0,
                evaluations: 0,
                converged: true,
            },
            flags: vec!["standard model predicts zero baseline indices; nothing to fit".into()],
        },
        (ModelKind::Standard, _) => fit_standard(data, options),
        (ModelKind::Impedance, Phase::Baseline) => fit_impedance_baseline(data, ctx, options)?,
        (ModelKind::Impedance, _) => fit_impedance_post(data, ctx, options)?,
    };
    let mut flags = search.flags;
    let preds = predict_indices(model, &search.params, ctx, data, phase)?;
    let sse = weighted_sse(&preds, &target_weights(data, phase));
    let n_obs = targets.len();
    let n = match options.n_policy {
        NPolicy::Observations => n_obs,
        NPolicy::Fixed { n } => n,
    };
    let k = search.params.count();
    let nll = nll_from_sse(sse, n_obs);
    let aicc = match aicc(nll, k, n) {
        Ok(v) => Some(v),
        Err(e) => {
            flags.push(e.to_string());
            None
        }
    };
    if !search.summary.converged {
        flags.push(format!("simplex hit the iteration cap ({})", options.max_iter));
    }
    Ok(FitResult {
        model,
        phase,
        params: search.params,
        nll,
        sse,
        rmse: (sse / n_obs as f64).sqrt(),
        aicc,
        aic: aic(nll, k),
        k,
        n,
        seed: options.seed,
        converged: search.summary.converged,
        restarts: search.summary.restarts,
        iterations: search.summary.iterations,
        evaluations: search.summary.evaluations,
        dataset: data.fingerprint(),
        predictions: preds,
        flags,
    })
}

/// (direction, observed, weight) per group, with the pooled baseline of
/// each direction removed so the Gaussian is fitted to corrected data.
fn group_targets(data: &IndexDataset, corrected: bool) -> BTreeMap<i64, Vec<(f64, f64, f64)>> {
    let baseline = data.baseline_by_direction();
    let mut out: BTreeMap<i64, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for o in data.phase(Phase::Test) {
        let b = if corrected {
            baseline.get(&direction_key(o.direction_deg)).copied().unwrap_or(0.0)
        } else {
            0.0
        };
        out.entry(direction_key(o.group_deg))
            .or_default()
            .push((o.direction_deg, o.mean - b, o.weight));
    }
    out
}

fn group_seed(seed: u64, group_key: i64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ group_key as u64
}

fn fit_standard(data: &IndexDataset, options: &FitOptions) -> Search {
    let b = &options.bounds;
    let bounds = Bounds::new(
        vec![b.amplitude[0], b.sigma_deg[0], b.offset_deg[0]],
        vec![b.amplitude[1], b.sigma_deg[1], b.offset_deg[1]],
    );
    let mut groups = Vec::new();
    let mut summary = MultiStartSummary {
        restarts: 0,
        iterations: 0,
        evaluations: 0,
        converged: true,
    };
    let mut flags = Vec::new();
    if data.baseline_by_direction().is_empty() {
        flags.push("no baseline observations: baselines taken as zero".into());
    }
    for (gk, obs) in group_targets(data, true) {
        let g = key_to_deg(gk);
        let sse = |x: &[f64]| {
            let rep = Representation::standard(x[0], x[1], x[2], g);
            obs.iter()
                .map(|(d, y, w)| w * (y - rep.gain_fraction(*d)).powi(2))
                .sum::<f64>()
        };
        let (best, s) = multi_start(sse, &bounds, options.restarts, &[], group_seed(options.seed, gk), &options.simplex());
        accumulate(&mut summary, &s);
        if best.x[0] < 1e-3 {
            flags.push(format!("group {g} deg: amplitude ~0, width and offset unidentifiable"));
        }
        groups.push(GroupParams {
            group_deg: g,
            amplitude: best.x[0],
            sigma_deg: best.x[1],
            offset_deg: Some(best.x[2]),
        });
    }
    Search {
        params: ModelParams { groups, scaling: None },
        summary,
        flags,
    }
}

fn accumulate(total: &mut MultiStartSummary, s: &MultiStartSummary) {
    total.restarts += s.restarts;
    total.iterations += s.iterations;
    total.evaluations += s.evaluations;
    total.converged &= s.converged;
}

fn scaling_bounds(options: &FitOptions) -> Bounds {
    let b = &options.bounds;
    Bounds::new(vec![b.alpha_k[0], b.alpha_b[0]], vec![b.alpha_k[1], b.alpha_b[1]])
}

/// Screens Latin-hypercube starts of (alpha_k, alpha_b) and polishes the
/// best few with the simplex. `profile` returns the objective at a scaling.
/// Grid the outer search works on. Scalings are only weakly identified at
/// finer resolution, and snapping lets the simplex reuse cached tables once
/// it has shrunk below one cell.
const SCALING_RESOLUTION: f64 = 0.005;

fn snap_scaling(x: &[f64]) -> ImpedanceScaling {
    let snap = |v: f64| (v / SCALING_RESOLUTION).round() * SCALING_RESOLUTION;
    ImpedanceScaling {
        alpha_k: snap(x[0]),
        alpha_b: snap(x[1]),
    }
}

fn search_scaling<F>(profile: F, options: &FitOptions) -> (Vec<f64>, MultiStartSummary)
where
    F: Fn(&[f64]) -> f64,
{
    let bounds = scaling_bounds(options);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(options.seed);
    let starts = latin_hypercube(&bounds, options.restarts.max(1), &mut rng);
    let mut scored: Vec<(f64, Vec<f64>)> = starts.into_iter().map(|x| (profile(&x), x)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut summary = MultiStartSummary {
        restarts: scored.len(),
        iterations: 0,
        evaluations: scored.len(),
        converged: false,
    };
    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    for (_, x0) in scored.iter().take(options.polish_starts.max(1)) {
        let opts = SimplexOptions {
            f_tol: options.scaling_f_tol,
            max_iter: options.scaling_max_iter,
            ..Default::default()
        };
        let m = nelder_mead(&profile, x0, &bounds, &opts);
        summary.iterations += m.iterations;
        summary.evaluations += m.evaluations;
        if best.as_ref().is_none_or(|b| m.f < b.0) {
            best = Some((m.f, m.x, m.converged));
        }
    }
    let (_, x, converged) = best.expect("at least one polish start");
    summary.converged = converged;
    (x, summary)
}

fn fit_impedance_baseline(data: &IndexDataset, ctx: &FitContext, options: &FitOptions) -> Result<Search, FitError> {
    let targets = fit_targets(data, Phase::Baseline)?;
    let profile = |x: &[f64]| {
        let scaling = snap_scaling(x);
        match ctx.table(scaling, options.table_step, 0.0) {
            Ok(t) => targets.iter().map(|(_, d, y)| (y - t.at(*d, 0.0)).powi(2)).sum(),
            Err(_) => f64::INFINITY,
        }
    };
    let (x, summary) = search_scaling(profile, options);
    Ok(Search {
        params: ModelParams {
            groups: vec![],
            scaling: Some(snap_scaling(&x)),
        },
        summary,
        flags: vec![],
    })
}

/// Best (A, sigma) per group against a tabulated scaling, and the total SSE.
fn inner_groups(
    table: &IndexTable,
    groups: &BTreeMap<i64, Vec<(f64, f64, f64)>>,
    options: &FitOptions,
) -> (f64, Vec<GroupParams>, MultiStartSummary) {
    let b = &options.bounds;
    let bounds = Bounds::new(vec![b.amplitude[0], b.sigma_deg[0]], vec![b.amplitude[1], b.sigma_deg[1]]);
    let mut total = 0.0;
    let mut params = Vec::new();
    let mut summary = MultiStartSummary {
        restarts: 0,
        iterations: 0,
        evaluations: 0,
        converged: true,
    };
    for (gk, obs) in groups {
        let g = key_to_deg(*gk);
        let sse = |x: &[f64]| {
            let rep = Representation::centered(x[0], x[1], g);
            obs.iter()
                .map(|(d, y, w)| w * (y - table.at(*d, rep.gain_fraction(*d))).powi(2))
                .sum::<f64>()
        };
        let (best, s) = multi_start(sse, &bounds, options.restarts, &[], group_seed(options.seed, *gk), &options.simplex());
        accumulate(&mut summary, &s);
        total += best.f;
        params.push(GroupParams {
            group_deg: g,
            amplitude: best.x[0],
            sigma_deg: best.x[1],
            offset_deg: None,
        });
    }
    (total, params, summary)
}

/// Joint fit of per-group (A, sigma) and shared (alpha_k, alpha_b).
///
/// For a fixed scaling the simulated index of a reach depends only on its
/// direction and on the estimated-gain fraction, so it is tabulated once per
/// scaling and interpolated while the per-group parameters are profiled
/// out. The returned parameters are re-scored by full simulation in
/// `fit_model`.
fn fit_impedance_post(data: &IndexDataset, ctx: &FitContext, options: &FitOptions) -> Result<Search, FitError> {
    let groups = group_targets(data, false);
    let a_max = options.bounds.amplitude[1].max(0.0);
    let inner_opts = FitOptions {
        // The inner problems are cheap but run for every outer evaluation.
        restarts: options.restarts.clamp(1, 4),
        ..*options
    };
    let profile = |x: &[f64]| {
        let scaling = snap_scaling(x);
        match ctx.table(scaling, options.table_step, a_max) {
            Ok(t) => inner_groups(&t, &groups, &inner_opts).0,
            Err(_) => f64::INFINITY,
        }
    };
    let (x, mut summary) = search_scaling(profile, options);
    let scaling = snap_scaling(&x);
    let table = ctx.table(scaling, options.table_step, a_max)?;
    // Final per-group fits with the full number of starts.
    let (_, params, s) = inner_groups(&table, &groups, options);
    accumulate(&mut summary, &s);
    let mut flags = vec![format!(
        "per-group parameters profiled against simulated indices tabulated every {} in amplitude",
        options.table_step
    )];
    flags.extend(
        params
            .iter()
            .filter(|g| g.amplitude < 1e-3)
            .map(|g| format!("group {} deg: amplitude ~0, width unidentifiable", g.group_deg)),
    );
    Ok(Search {
        params: ModelParams {
            groups: params,
            scaling: Some(scaling),
        },
        summary,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: ModelKind,
    pub nll: f64,
    pub rmse: f64,
    pub aicc: Option<f64>,
    pub delta_aicc: Option<f64>,
    pub k: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub model: ModelKind,
    pub group_deg: f64,
    pub amplitude: f64,
    pub sigma_deg: f64,
    pub offset_deg: Option<f64>,
    /// Predicted index at +45 deg minus that at -45 deg from the group.
    pub predicted_asymmetry: Option<f64>,
    pub observed_asymmetry: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ModelRow>,
    /// Model with the lowest AICc (or NLL when AICc is unavailable).
    pub best: ModelKind,
    pub groups: Vec<GroupRow>,
}

impl ComparisonReport {
    pub fn delta_aicc(&self) -> Option<f64> {
        if self.rows.len() != 2 {
            return None;
        }
        Some(self.rows[1].aicc? - self.rows[0].aicc?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("model      k   n        NLL     RMSE       AICc     dAICc\n");
        for r in &self.rows {
            s += &format!(
                "{:<9} {:>3} {:>3} {:>10.4} {:>8.4} {:>10} {:>9}\n",
                r.model.name(),
                r.k,
                r.n,
                r.nll,
                r.rmse,
                r.aicc.map_or("n/a".into(), |v| format!("{v:.3}")),
                r.delta_aicc.map_or("n/a".into(), |v| format!("{v:.3}")),
            );
        }
        s += &format!("best by AICc: {}\n", self.best.name());
        s += "\nmodel      group        A    sigma   offset  asym(pred)  asym(obs)\n";
        let opt = |v: Option<f64>, w: usize| v.map_or(format!("{:>w$}", "-"), |x| format!("{x:>w$.3}"));
        for g in &self.groups {
            s += &format!(
                "{:<9} {:>6} {:>8.3} {:>8.2} {} {} {}\n",
                g.model.name(),
                g.group_deg,
                g.amplitude,
                g.sigma_deg,
                opt(g.offset_deg, 8),
                opt(g.predicted_asymmetry, 11),
                opt(g.observed_asymmetry, 10),
            );
        }
        s
    }
}

fn neighbour_asymmetry(preds: &[Prediction], group_deg: f64, pick: impl Fn(&Prediction) -> f64) -> Option<f64> {
    let at = |offset: f64| {
        preds
            .iter()
            .find(|p| {
                p.group_deg.map(direction_key) == Some(direction_key(group_deg))
                    && (angular_offset(p.direction_deg, group_deg) - offset).abs() < 1e-6
            })
            .map(&pick)
    };
    Some(at(45.0)? - at(-45.0)?)
}

/// Tabulates fits computed on the same dataset.
pub fn compare_models(fits: &[FitResult]) -> Result<ComparisonReport, FitError> {
    let first = fits
        .first()
        .ok_or_else(|| FitError::InvalidDataset("no fits to compare".into()))?;
    if fits.iter().any(|f| f.dataset != first.dataset || f.phase != first.phase) {
        return Err(FitError::MismatchedDatasets);
    }
    let best_aicc = fits.iter().filter_map(|f| f.aicc).fold(f64::INFINITY, f64::min);
    let best = fits
        .iter()
        .min_by(|a, b| match (a.aicc, b.aicc) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            _ => a.nll.total_cmp(&b.nll),
        })
        .expect("non-empty")
        .model;
    let rows = fits
        .iter()
        .map(|f| ModelRow {
            model: f.model,
            nll: f.nll,
            rmse: f.rmse,
            aicc: f.aicc,
            delta_aicc: f.aicc.map(|a| a - best_aicc).filter(|d| d.is_finite()),
            k: f.k,
            n: f.n,
        })
        .collect();
    let mut groups = Vec::new();
    for f in fits {
        for g in &f.params.groups {
            groups.push(GroupRow {
                model: f.model,
                group_deg: g.group_deg,
                amplitude: g.amplitude,
                sigma_deg: g.sigma_deg,
                offset_deg: g.offset_deg,
                predicted_asymmetry: neighbour_asymmetry(&f.predictions, g.group_deg, |p| p.predicted),
                observed_asymmetry: neighbour_asymmetry(&f.predictions, g.group_deg, |p| p.observed),
            });
        }
    }
    Ok(ComparisonReport { rows, best, groups })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::ArmParams;
    use crate::baselines::BaselineSet;
    use crate::trial::SimSettings;
    use approx::assert_relative_eq;

    fn gaussian_dataset(a: f64, sigma: f64, mu: f64) -> IndexDataset {
        let mut obs = Vec::new();
        for g in STANDARD_DIRECTIONS {
            let rep = Representation::standard(a, sigma, mu, g);
            for d in STANDARD_DIRECTIONS {
                obs.push(Observation {
                    group_deg: g,
                    direction_deg: d,
                    phase: Phase::Test,
                    mean: rep.gain_fraction(d),
                    weight: 1.0,
                });
                obs.push(Observation {
                    group_deg: g,
                    direction_deg: d,
                    phase: Phase::Baseline,
                    mean: 0.0,
                    weight: 1.0,
                });
            }
        }
        IndexDataset::new(obs).unwrap()
    }

    fn straight_sim() -> Simulator {
        Simulator::new(ArmParams::default(), SimSettings::default(), BaselineSet::straight()).unwrap()
    }

    #[test]
    fn profiled_nll_algebra() {
        let n = 8;
        let a = nll_from_sse(0.08, n);
        assert!(a.is_finite());
        let doubled = nll_from_sse(0.32, n);
        assert_relative_eq!(doubled - a, n as f64 * 2f64.ln(), epsilon = 1e-12);
        assert_eq!(nll_from_sse(0.0, n), nll_from_sse(SSE_FLOOR, n));
    }

    #[test]
    fn aicc_values() {
        assert_relative_eq!(aicc(-10.0, 0, 20).unwrap(), -20.0);
        assert_relative_eq!(aicc(3.5, 2, 8).unwrap(), 7.0 + 4.0 + 12.0 / 5.0, epsilon = 1e-12);
        assert!(aicc(1.0, 18, 64).unwrap() < aicc(1.0, 24, 64).unwrap());
        assert!(matches!(aicc(1.0, 7, 8), Err(FitError::SmallSample { .. })));
        let big = aicc(1.0, 3, 1_000_000_000).unwrap();
        assert_relative_eq!(big, aic(1.0, 3), epsilon = 1e-6);
    }

    #[test]
    fn dataset_rejects_duplicates_and_off_grid() {
        let o = Observation {
            group_deg: 45.0,
            direction_deg: 90.0,
            phase: Phase::Test,
            mean: 0.3,
            weight: 1.0,
        };
        assert!(IndexDataset::new(vec![o, o]).is_err());
        assert!(IndexDataset::new(vec![Observation { direction_deg: 30.0, ..o }]).is_err());
        assert!(IndexDataset::new(vec![o]).is_ok());
    }

    #[test]
    fn standard_predictions_are_closed_form() {
        let sim = straight_sim();
        let ctx = FitContext::new(&sim);
        let data = gaussian_dataset(1.0, 30.0, 0.0);
        let params = ModelParams {
            groups: STANDARD_DIRECTIONS
                .iter()
                .map(|g| GroupParams {
                    group_deg: *g,
                    amplitude: 1.0,
                    sigma_deg: 30.0,
                    offset_deg: Some(0.0),
                })
                .collect(),
            scaling: None,
        };
        let preds = predict_indices(ModelKind::Standard, &params, &ctx, &data, Phase::Test).unwrap();
        assert_eq!(preds.len(), 64);
        for p in &preds {
            let off = angular_offset(p.direction_deg, p.group_deg.unwrap()).abs();
            if off == 0.0 {
                assert_eq!(p.predicted, 1.0);
            }
            if off == 180.0 {
                assert!(p.predicted < 1e-7);
            }
        }
    }

    #[test]
    fn standard_fit_recovers_noiseless_gaussian() {
        let sim = straight_sim();
        let ctx = FitContext::new(&sim);
        let data = gaussian_dataset(0.9, 35.0, 10.0);
        let fit = fit_model(ModelKind::Standard, &data, Phase::Test, &ctx, &FitOptions::default()).unwrap();
        assert_eq!(fit.k, 24);
        assert_eq!(fit.n, 64);
        for g in &fit.params.groups {
            assert!((g.amplitude - 0.9).abs() < 0.01, "{g:?}");
            assert!((g.sigma_deg - 35.0).abs() < 1.0, "{g:?}");
            assert!((g.offset_deg.unwrap() - 10.0).abs() < 1.0, "{g:?}");
        }
        assert_relative_eq!(fit.aicc.unwrap(), aicc(fit.nll, 24, 64).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn zero_data_flags_unidentifiable() {
        let sim = straight_sim();
        let ctx = FitContext::new(&sim);
        let data = gaussian_dataset(0.0, 30.0, 0.0);
        let fit = fit_model(ModelKind::Standard, &data, Phase::Test, &ctx, &FitOptions::default()).unwrap();
        assert!(fit.params.groups.iter().all(|g| g.amplitude < 1e-3));
        assert!(fit.flags.iter().any(|f| f.contains("unidentifiable")));
    }

    #[test]
    fn comparison_dominance_and_mismatch() {
        let sim = straight_sim();
        let ctx = FitContext::new(&sim);
        let data = gaussian_dataset(0.9, 35.0, 10.0);
        let fit = fit_model(ModelKind::Standard, &data, Phase::Test, &ctx, &FitOptions::default()).unwrap();
        let report = compare_models(&[fit.clone(), fit.clone()]).unwrap();
        assert_eq!(report.delta_aicc(), Some(0.0));
        let mut worse = fit.clone();
        worse.model = ModelKind::Impedance;
        worse.nll += 5.0;
        worse.k = 18;
        worse.aicc = aicc(worse.nll - 10.0, 18, 64).ok();
        let report = compare_models(&[fit.clone(), worse.clone()]).unwrap();
        assert_eq!(report.best, ModelKind::Impedance);
        let mut other = fit.clone();
        other.dataset = "different".into();
        assert_eq!(compare_models(&[fit, other]), Err(FitError::MismatchedDatasets));
    }

    #[test]
    fn impedance_straight_zero_amplitude_predicts_zero() {
        let sim = straight_sim();
        let ctx = FitContext::new(&sim);
        let data = gaussian_dataset(0.0, 30.0, 0.0);
        let params = ModelParams {
            groups: STANDARD_DIRECTIONS
                .iter()
                .map(|g| GroupParams {
                    group_deg: *g,
                    amplitude: 0.0,
                    sigma_deg: 30.0,
                    offset_deg: None,
                })
                .collect(),
            scaling: Some(ImpedanceScaling::BASELINE),
        };
        let preds = predict_indices(ModelKind::Impedance, &params, &ctx, &data, Phase::Test).unwrap();
        assert!(preds.iter().all(|p| p.predicted.abs() < 0.02), "{preds:?}");
    }
}
