//! Synthetic participants and worlds with known ground truth, used for
//! parameter- and model-recovery studies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{adaptation_index, AdaptationIndex, Phase};
use crate::arm::ArmParams;
use crate::baselines::{BaselineSet, DEFAULT_BASELINE_PE_MM, STANDARD_DIRECTIONS};
use crate::controllers::{ControllerSpec, ImpedanceScaling, ModelKind, Representation};
use crate::error::FitError;
use crate::fitting::{fit_model, FitContext, FitOptions, FitResult, GroupParams, IndexDataset, Observation};
use crate::protocol::{Protocol, ScheduledTrial};
use crate::trial::{SimSettings, Simulator, TrialKind, TrialSpec};

/// How the representation grows over the adaptation blocks: the amplitude
/// after `n` field trials is `A (1 - exp(-n / tau))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningCurve {
    pub tau_trials: f64,
}

impl Default for LearningCurve {
    fn default() -> Self {
        LearningCurve { tau_trials: 20.0 }
    }
}

impl LearningCurve {
    pub fn progress(&self, field_trials: usize) -> f64 {
        if self.tau_trials <= 0.0 {
            return 1.0;
        }
        1.0 - (-(field_trials as f64) / self.tau_trials).exp()
    }
}

/// Simulated participant group: a final representation plus, for the
/// impedance model, the gain scaling before and after adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatedGroup {
    pub model: ModelKind,
    pub params: GroupParams,
    pub baseline_scaling: ImpedanceScaling,
    pub post_scaling: ImpedanceScaling,
    pub learning: LearningCurve,
}

impl SimulatedGroup {
    fn controller(&self, progress: f64) -> ControllerSpec {
        let mut rep = self.params.representation();
        rep.amplitude *= progress;
        match self.model {
            ModelKind::Standard => ControllerSpec::Standard { representation: rep },
            ModelKind::Impedance => {
                let lerp = |a: f64, b: f64| a + (b - a) * progress;
                ControllerSpec::Impedance {
                    representation: rep,
                    scaling: ImpedanceScaling {
                        alpha_k: lerp(self.baseline_scaling.alpha_k, self.post_scaling.alpha_k),
                        alpha_b: lerp(self.baseline_scaling.alpha_b, self.post_scaling.alpha_b),
                    },
                }
            }
        }
    }

    /// Controller for a trial preceded by `field_trials` curl-field trials.
    pub fn controller_for(&self, trial: &ScheduledTrial, field_trials: usize) -> ControllerSpec {
        if trial.block == 1 {
            self.controller(0.0)
        } else {
            self.controller(self.learning.progress(field_trials))
        }
    }

    /// Fully adapted controller.
    pub fn adapted(&self) -> ControllerSpec {
        self.controller(1.0)
    }

    /// Trial specs for a whole protocol.
    pub fn protocol_specs(&self, protocol: &Protocol, settings: &SimSettings) -> Vec<TrialSpec> {
        let mut field_trials = 0;
        protocol.specs(settings, |t| {
            let c = self.controller_for(t, field_trials);
            if matches!(t.kind, TrialKind::AdaptField | TrialKind::TrainField) {
                field_trials += 1;
            }
            c
        })
    }
}

/// Ground truth for all eight groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub model: ModelKind,
    pub groups: Vec<GroupParams>,
    pub baseline_scaling: ImpedanceScaling,
    pub post_scaling: ImpedanceScaling,
    pub baselines: BaselineSet,
}

const AMPLITUDES: [f64; 8] = [0.90, 0.85, 0.95, 0.88, 0.92, 0.86, 0.94, 0.90];
const WIDTHS: [f64; 8] = [35.0, 30.0, 40.0, 33.0, 37.0, 31.0, 38.0, 34.0];
const OFFSETS: [f64; 8] = [10.0, -8.0, 12.0, -5.0, 7.0, -11.0, 6.0, -9.0];

impl World {
    /// Standard-model world: straight baselines, offset Gaussians.
    pub fn standard_default() -> World {
        World {
            model: ModelKind::Standard,
            groups: STANDARD_DIRECTIONS
                .iter()
                .enumerate()
                .map(|(i, g)| GroupParams {
                    group_deg: *g,
                    amplitude: AMPLITUDES[i],
                    sigma_deg: WIDTHS[i],
                    offset_deg: Some(OFFSETS[i]),
                })
                .collect(),
            baseline_scaling: ImpedanceScaling::BASELINE,
            post_scaling: ImpedanceScaling::POST_ADAPTATION,
            baselines: BaselineSet::straight(),
        }
    }

    /// Impedance-model world: curved baselines, centred Gaussians.
    pub fn impedance_default() -> World {
        World {
            model: ModelKind::Impedance,
            groups: STANDARD_DIRECTIONS
                .iter()
                .enumerate()
                .map(|(i, g)| GroupParams {
                    group_deg: *g,
                    amplitude: AMPLITUDES[i],
                    sigma_deg: WIDTHS[i] - 5.0 + 2.0 * (i % 3) as f64,
                    offset_deg: None,
                })
                .collect(),
            baseline_scaling: ImpedanceScaling::BASELINE,
            post_scaling: ImpedanceScaling::POST_ADAPTATION,
            baselines: BaselineSet::curved(&DEFAULT_BASELINE_PE_MM),
        }
    }

    pub fn default_for(model: ModelKind) -> World {
        match model {
            ModelKind::Standard => Self::standard_default(),
            ModelKind::Impedance => Self::impedance_default(),
        }
    }

    pub fn group(&self, group_deg: f64) -> Option<SimulatedGroup> {
        let params = *self
            .groups
            .iter()
            .find(|g| crate::baselines::direction_key(g.group_deg) == crate::baselines::direction_key(group_deg))?;
        Some(SimulatedGroup {
            model: self.model,
            params,
            baseline_scaling: self.baseline_scaling,
            post_scaling: self.post_scaling,
            learning: LearningCurve::default(),
        })
    }

    pub fn simulator(&self, arm: ArmParams, settings: SimSettings) -> Result<Simulator, FitError> {
        Ok(Simulator::new(arm, settings, self.baselines.clone())?)
    }

    /// Noise-free indices: one baseline and one post-adaptation clamp per
    /// (group, direction).
    pub fn clean_indices(&self, sim: &Simulator) -> Result<Vec<AdaptationIndex>, FitError> {
        let settings = sim.settings();
        let mut specs = Vec::new();
        for (gi, g) in self.groups.iter().enumerate() {
            let group = self.group(g.group_deg).expect("own group");
            for (di, d) in STANDARD_DIRECTIONS.iter().enumerate() {
                let idx = 2 * (gi * STANDARD_DIRECTIONS.len() + di);
                specs.push(settings.trial(idx, g.group_deg, *d, TrialKind::BaselineClamp, group.controller(0.0)));
                specs.push(settings.trial(idx + 1, g.group_deg, *d, TrialKind::TestClamp, group.adapted()));
            }
        }
        specs
            .par_iter()
            .map(|s| Ok(adaptation_index(&sim.simulate(s)?, settings.field_gain)?))
            .collect()
    }

    pub fn clean_dataset(&self, sim: &Simulator) -> Result<IndexDataset, FitError> {
        IndexDataset::from_indices(&self.clean_indices(sim)?)
    }
}

/// Adds independent Gaussian noise with standard deviation `sd` to every
/// group-mean observation.
pub fn add_noise(data: &IndexDataset, sd: f64, seed: u64) -> IndexDataset {
    if sd <= 0.0 {
        return data.clone();
    }
    let normal = Normal::new(0.0, sd).expect("positive sd");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy: Vec<Observation> = data
        .observations()
        .iter()
        .map(|o| Observation {
            mean: o.mean + normal.sample(&mut rng),
            ..*o
        })
        .collect();
    IndexDataset::new(noisy).expect("noise keeps the dataset valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub seed: u64,
    pub group_deg: f64,
    pub true_amplitude: f64,
    pub fit_amplitude: f64,
    pub true_sigma_deg: f64,
    pub fit_sigma_deg: f64,
    pub true_offset_deg: Option<f64>,
    pub fit_offset_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub model: ModelKind,
    pub noise_sd: f64,
    pub rows: Vec<RecoveryRow>,
    pub median_amplitude_error: f64,
    pub median_sigma_error_deg: f64,
    pub median_offset_error_deg: Option<f64>,
    /// Fitted impedance scalings, one per seed.
    pub scalings: Vec<ImpedanceScaling>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fits the world's own model to `seeds` noisy replicates of its clean
/// dataset and summarizes the absolute parameter errors.
pub fn parameter_recovery(
    world: &World,
    sim: &Simulator,
    noise_sd: f64,
    seeds: &[u64],
    options: &FitOptions,
) -> Result<RecoveryReport, FitError> {
    let clean = world.clean_dataset(sim)?;
    let ctx = FitContext::new(sim);
    let fits: Vec<(u64, FitResult)> = seeds
        .iter()
        .map(|s| {
            let data = add_noise(&clean, noise_sd, *s);
            let opts = FitOptions { seed: *s, ..*options };
            Ok((*s, fit_model(world.model, &data, Phase::Test, &ctx, &opts)?))
        })
        .collect::<Result<_, FitError>>()?;
    let mut rows = Vec::new();
    let mut scalings = Vec::new();
    for (seed, fit) in &fits {
        scalings.extend(fit.params.scaling);
        for truth in &world.groups {
            let f = fit.params.group(truth.group_deg).ok_or_else(|| {
                FitError::InvalidParams(format!("fit lacks group {}", truth.group_deg))
            })?;
            rows.push(RecoveryRow {
                seed: *seed,
                group_deg: truth.group_deg,
                true_amplitude: truth.amplitude,
                fit_amplitude: f.amplitude,
                true_sigma_deg: truth.sigma_deg,
                fit_sigma_deg: f.sigma_deg,
                true_offset_deg: truth.offset_deg,
                fit_offset_deg: f.offset_deg,
            });
        }
    }
    let offsets: Vec<f64> = rows
        .iter()
        .filter_map(|r| Some((r.fit_offset_deg? - r.true_offset_deg?).abs()))
        .collect();
    Ok(RecoveryReport {
        model: world.model,
        noise_sd,
        median_amplitude_error: median(rows.iter().map(|r| (r.fit_amplitude - r.true_amplitude).abs()).collect()),
        median_sigma_error_deg: median(rows.iter().map(|r| (r.fit_sigma_deg - r.true_sigma_deg).abs()).collect()),
        median_offset_error_deg: (!offsets.is_empty()).then(|| median(offsets)),
        rows,
        scalings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecoveryReport {
    pub noise_sd: f64,
    pub datasets_per_model: usize,
    /// `confusion[i][j]`: datasets generated by model `i` for which model
    /// `j` had the lower AICc (0 = standard, 1 = impedance).
    pub confusion: [[usize; 2]; 2],
}

impl ModelRecoveryReport {
    pub fn accuracy(&self, generating: ModelKind) -> f64 {
        let i = model_slot(generating);
        let row = self.confusion[i];
        row[i] as f64 / (row[0] + row[1]).max(1) as f64
    }
}

fn model_slot(m: ModelKind) -> usize {
    match m {
        ModelKind::Standard => 0,
        ModelKind::Impedance => 1,
    }
}

/// Fits both models to noisy datasets from each world and counts which
/// model AICc selects.
pub fn model_recovery(
    worlds: &[(World, Simulator)],
    noise_sd: f64,
    datasets_per_model: usize,
    seed: u64,
    options: &FitOptions,
) -> Result<ModelRecoveryReport, FitError> {
    let mut confusion = [[0usize; 2]; 2];
    for (world, sim) in worlds {
        let clean = world.clean_dataset(sim)?;
        let ctx = FitContext::new(sim);
        for r in 0..datasets_per_model {
            let s = seed.wrapping_add(r as u64);
            let data = add_noise(&clean, noise_sd, s);
            let opts = FitOptions { seed: s, ..*options };
            let std_fit = fit_model(ModelKind::Standard, &data, Phase::Test, &ctx, &opts)?;
            let imp_fit = fit_model(ModelKind::Impedance, &data, Phase::Test, &ctx, &opts)?;
            let pick = match (std_fit.aicc, imp_fit.aicc) {
                (Some(a), Some(b)) if b < a => ModelKind::Impedance,
                (Some(_), Some(_)) => ModelKind::Standard,
                _ if imp_fit.nll < std_fit.nll => ModelKind::Impedance,
                _ => ModelKind::Standard,
            };
            confusion[model_slot(world.model)][model_slot(pick)] += 1;
        }
    }
    Ok(ModelRecoveryReport {
        noise_sd,
        datasets_per_model,
        confusion,
    })
}

/// Representation used by a world's group, for reporting.
pub fn truth_representation(world: &World, group_deg: f64) -> Option<Representation> {
    world.group(group_deg).map(|g| g.params.representation())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::build_protocol;

    #[test]
    fn learning_curve_saturates() {
        let c = LearningCurve::default();
        assert_eq!(c.progress(0), 0.0);
        assert!(c.progress(20) > 0.6 && c.progress(20) < 0.65);
        assert!(c.progress(130) > 0.99);
        assert_eq!(LearningCurve { tau_trials: 0.0 }.progress(0), 1.0);
    }

    #[test]
    fn noise_is_seeded() {
        let data = IndexDataset::new(vec![Observation {
            group_deg: 0.0,
            direction_deg: 45.0,
            phase: Phase::Test,
            mean: 0.5,
            weight: 1.0,
        }])
        .unwrap();
        assert_eq!(add_noise(&data, 0.05, 3), add_noise(&data, 0.05, 3));
        assert_ne!(add_noise(&data, 0.05, 3), add_noise(&data, 0.05, 4));
        assert_eq!(add_noise(&data, 0.0, 3), data);
    }

    #[test]
    fn protocol_controllers_follow_learning() {
        let world = World::standard_default();
        let group = world.group(90.0).unwrap();
        let p = build_protocol(90.0, 5).unwrap();
        let specs = group.protocol_specs(&p, &SimSettings::default());
        assert_eq!(specs.len(), p.len());
        let amp = |s: &TrialSpec| s.controller.representation().amplitude;
        assert!(specs.iter().filter(|s| s.kind == TrialKind::BaselineNull).all(|s| amp(s) == 0.0));
        let last = specs.last().unwrap();
        assert!((amp(last) - group.params.amplitude).abs() < 0.01);
        let adapt: Vec<f64> = specs
            .iter()
            .filter(|s| s.kind == TrialKind::AdaptField)
            .map(amp)
            .collect();
        assert!(adapt.windows(2).all(|w| w[1] >= w[0]));
    }
}
