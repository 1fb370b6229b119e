use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use fieldgen::analysis::{
    adaptation_index, asymmetry, available_curves, baseline_means, indices_from_records, perpendicular_error, Phase,
};
use fieldgen::baselines::{direction_key, STANDARD_DIRECTIONS};
use fieldgen::controllers::ModelKind;
use fieldgen::error::{FitError, IoError, ProtocolError, SimError};
use fieldgen::fitting::{compare_models, fit_model, FitContext, FitResult, IndexDataset};
use fieldgen::io::{self, AsymmetryRow, ExperimentConfig, Manifest, TrialFileLayout, TrialSummary};
use fieldgen::plot::{emit_plots, PlotStyle};
use fieldgen::protocol::{audit_protocol, build_protocol};
use fieldgen::synthetic::{model_recovery, parameter_recovery, World};
use fieldgen::trial::{Simulator, TrialRecord};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Audit(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Io(IoError::Config { .. }) => "config",
            CliError::Io(IoError::Schema { .. }) => "schema",
            CliError::Io(IoError::Csv { .. }) => "csv",
            CliError::Io(IoError::Json { .. }) => "json",
            CliError::Io(_) => "io",
            CliError::Sim(_) => "simulation",
            CliError::Fit(_) => "fit",
            CliError::Protocol(_) => "protocol",
            CliError::Usage(_) => "usage",
            CliError::Audit(_) => "audit",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(IoError::Config { .. } | IoError::Schema { .. }) | CliError::Usage(_) => 2,
            CliError::Audit(_) => 3,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Standard,
    Impedance,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Standard => ModelKind::Standard,
            ModelArg::Impedance => ModelKind::Impedance,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PhaseArg {
    Baseline,
    Post,
}

impl From<PhaseArg> for Phase {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::Baseline => Phase::Baseline,
            PhaseArg::Post => Phase::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RecoveryKind {
    Parameter,
    Model,
}

/// Force-field generalization experiments on a simulated two-link arm.
#[derive(Debug, Parser)]
#[command(name = "fieldgen", version)]
struct Cli {
    /// Experiment configuration (TOML). Defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "FIELDGEN_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment protocol for one or all training groups.
    Simulate {
        #[arg(long)]
        group: Option<f64>,
        /// Protocol seed (default: from the config, per group).
        #[arg(long)]
        seed: Option<u64>,
        /// Model of the simulated participants (default: from the config).
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
    },
    /// Trial records -> indices, curves and asymmetries.
    Analyze {
        #[arg(long)]
        group: Option<f64>,
    },
    /// Fit a representation model to the analyzed indices.
    Fit {
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long, value_enum, default_value = "post")]
        phase: PhaseArg,
        /// Index or dataset CSV (default: indices.csv in the output directory).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare fit results computed on the same data.
    Compare {
        /// FitResult JSON files (default: both post-adaptation fits).
        fits: Vec<PathBuf>,
    },
    /// Parameter- or model-recovery study on synthetic data.
    Recover {
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        #[arg(long, value_enum, default_value = "parameter")]
        kind: RecoveryKind,
        /// Number of noisy datasets (default: the configured noise seeds).
        #[arg(long)]
        datasets: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render SVG figures from curves and fits.
    Plot,
    /// Check protocol invariants of a generated or saved schedule.
    Audit {
        #[arg(long)]
        group: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Schedule CSV to audit instead of a generated protocol.
        #[arg(long)]
        schedule: Option<PathBuf>,
    },
}

struct Ctx {
    cfg: ExperimentConfig,
    config_path: Option<PathBuf>,
    out: PathBuf,
}

impl Ctx {
    fn manifest(&self, command: &str) -> Result<Manifest> {
        let mut m = Manifest::new(command);
        if let Some(p) = &self.config_path {
            m.set_config(p)?;
        }
        Ok(m)
    }

    fn simulator(&self) -> Result<Simulator> {
        Ok(Simulator::new(self.cfg.arm(), self.cfg.settings(), self.cfg.baseline_set()?)?)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn groups(group: Option<f64>) -> Result<Vec<f64>> {
    match group {
        None => Ok(STANDARD_DIRECTIONS.to_vec()),
        Some(g) => {
            if STANDARD_DIRECTIONS.iter().any(|d| direction_key(*d) == direction_key(g)) {
                Ok(vec![g.rem_euclid(360.0)])
            } else {
                Err(ProtocolError::InvalidDirection(g).into())
            }
        }
    }
}

fn tag(g: f64) -> String {
    format!("{:03}", g.round() as i64)
}

fn simulate(ctx: &Ctx, group: Option<f64>, seed: Option<u64>, model: Option<ModelArg>) -> Result<()> {
    let sim = ctx.simulator()?;
    let model: ModelKind = model.map(Into::into).unwrap_or(ctx.cfg.synthetic.model);
    let mut world = World::default_for(model);
    world.baselines = sim.baselines().clone();
    let mut manifest = ctx.manifest("simulate")?;
    let alpha = ctx.cfg.settings().field_gain;
    for g in groups(group)? {
        let seed = seed.unwrap_or_else(|| ctx.cfg.protocol_seed(g));
        manifest.seeds.push(seed);
        let protocol = build_protocol(g, seed)?;
        let mut participant = world.group(g).expect("standard group");
        participant.learning = ctx.cfg.synthetic.learning;
        let specs = participant.protocol_specs(&protocol, sim.settings());
        let records: Vec<TrialRecord> = specs
            .par_iter()
            .map(|s| sim.simulate(s))
            .collect::<std::result::Result<_, _>>()?;
        let summaries: Vec<TrialSummary> = protocol
            .trials
            .iter()
            .zip(&records)
            .map(|(t, r)| TrialSummary {
                trial: t.index,
                block: t.block,
                group_deg: g,
                target_deg: t.target_deg,
                kind: t.kind,
                feedback: t.feedback,
                pe_mm: perpendicular_error(r).ok(),
                index: if t.kind.is_clamp() {
                    adaptation_index(r, alpha).ok().map(|i| i.value)
                } else {
                    None
                },
            })
            .collect();

        let schedule = ctx.path(&format!("schedule_g{}.csv", tag(g)));
        io::write_schedule(&schedule, g, seed, &protocol.trials)?;
        let trials = ctx.path(&format!("trials_g{}.csv", tag(g)));
        io::write_trial_summaries(&trials, &summaries)?;
        let mut outputs = vec![schedule, trials];
        match ctx.cfg.output.trial_files {
            TrialFileLayout::Concatenated => {
                let p = ctx.path(&format!("samples_g{}.csv", tag(g)));
                io::write_trial_records(&p, &records)?;
                outputs.push(p);
            }
            TrialFileLayout::PerTrial => {
                for r in &records {
                    let p = ctx.path(&format!("samples_g{}/trial_{:03}.csv", tag(g), r.spec.index));
                    io::write_trial_records(&p, std::slice::from_ref(r))?;
                    outputs.push(p);
                }
            }
        }
        for p in &outputs {
            manifest.add_output(p, &ctx.out)?;
        }
        println!("group {g}: {} trials simulated (seed {seed})", records.len());
    }
    manifest.write(&ctx.out)?;
    Ok(())
}

/// Trial-record files in the output directory, optionally for one group.
fn record_files(ctx: &Ctx, group: Option<f64>) -> Result<Vec<PathBuf>> {
    let wanted: Option<String> = group.map(|g| tag(g.rem_euclid(360.0)));
    let mut files = Vec::new();
    let entries = std::fs::read_dir(&ctx.out).map_err(|source| IoError::Io {
        path: ctx.out.display().to_string(),
        source,
    })?;
    for e in entries.flatten() {
        let name = e.file_name().to_string_lossy().to_string();
        let Some(rest) = name.strip_prefix("samples_g") else { continue };
        let g = &rest[..rest.len().min(3)];
        if wanted.as_deref().is_some_and(|w| w != g) {
            continue;
        }
        let p = e.path();
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = std::fs::read_dir(&p)
                .map_err(|source| IoError::Io {
                    path: p.display().to_string(),
                    source,
                })?
                .flatten()
                .map(|e| e.path())
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn analyze(ctx: &Ctx, group: Option<f64>) -> Result<()> {
    let files = record_files(ctx, group)?;
    if files.is_empty() {
        return Err(CliError::Usage(format!(
            "no trial record files (samples_g*.csv) in {}",
            ctx.out.display()
        )));
    }
    let alpha = ctx.cfg.settings().field_gain;
    let mut manifest = ctx.manifest("analyze")?;
    let per_file: Vec<Vec<fieldgen::analysis::AdaptationIndex>> = files
        .par_iter()
        .map(|f| -> Result<_> {
            let records = io::read_trial_records(f)?;
            Ok(indices_from_records(&records, alpha).map_err(IoError::from)?)
        })
        .collect::<Result<_>>()?;
    for f in &files {
        manifest.add_input(f)?;
    }
    let indices: Vec<_> = per_file.into_iter().flatten().collect();
    let curves = available_curves(&indices);
    let asym: Vec<AsymmetryRow> = curves
        .iter()
        .filter_map(|c| {
            Some(AsymmetryRow {
                kind: c.kind,
                anchor_deg: c.anchor_deg,
                baseline_corrected: c.baseline_corrected,
                asymmetry: asymmetry(c)?,
            })
        })
        .collect();
    let dataset = IndexDataset::from_indices(&indices)?;
    let outputs = [
        ("indices.csv", ctx.path("indices.csv")),
        ("curves.csv", ctx.path("curves.csv")),
        ("asymmetries.csv", ctx.path("asymmetries.csv")),
        ("dataset.csv", ctx.path("dataset.csv")),
    ];
    io::write_indices(&outputs[0].1, &indices)?;
    io::write_curves(&outputs[1].1, &curves)?;
    io::write_asymmetries(&outputs[2].1, &asym)?;
    io::write_dataset(&outputs[3].1, &dataset)?;
    for (_, p) in &outputs {
        manifest.add_output(p, &ctx.out)?;
    }
    manifest.write(&ctx.out)?;
    println!(
        "{} clamp indices, {} curves, {} asymmetries",
        indices.len(),
        curves.len(),
        asym.len()
    );
    for a in asym.iter().filter(|a| !a.baseline_corrected) {
        println!("  {:?} {:>5} deg: asymmetry {:+.4}", a.kind, a.anchor_deg, a.asymmetry);
    }
    Ok(())
}

fn load_dataset(path: &Path) -> Result<IndexDataset> {
    let headers_are_dataset = std::fs::read_to_string(path)
        .map_err(|source| IoError::Io {
            path: path.display().to_string(),
            source,
        })?
        .lines()
        .find(|l| !l.starts_with('#'))
        .is_some_and(|h| h.split(',').any(|c| c == "mean"));
    if headers_are_dataset {
        Ok(io::read_dataset(path)?)
    } else {
        Ok(IndexDataset::from_indices(&io::read_indices(path)?)?)
    }
}

fn fit_file(model: ModelKind, phase: Phase) -> String {
    let p = if phase == Phase::Baseline { "baseline" } else { "post" };
    format!("fit_{}_{p}.json", model.name())
}

fn fit(ctx: &Ctx, model: ModelArg, phase: PhaseArg, input: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let input = input.unwrap_or_else(|| ctx.path("indices.csv"));
    let data = load_dataset(&input)?;
    let sim = ctx.simulator()?;
    let fctx = FitContext::new(&sim);
    let mut options = ctx.cfg.fitting;
    if let Some(s) = seed {
        options.seed = s;
    }
    let (model, phase): (ModelKind, Phase) = (model.into(), phase.into());
    let result = fit_model(model, &data, phase, &fctx, &options)?;
    let out = ctx.path(&fit_file(model, phase));
    io::write_json(&out, &result)?;
    let mut manifest = ctx.manifest(&format!("fit_{}", model.name()))?;
    manifest.seeds.push(options.seed);
    manifest.add_input(&input)?;
    manifest.add_output(&out, &ctx.out)?;
    manifest.write(&ctx.out)?;
    println!(
        "{} ({}) k={} n={} NLL={:.4} RMSE={:.4} AICc={}",
        model.name(),
        phase.name(),
        result.k,
        result.n,
        result.nll,
        result.rmse,
        result.aicc.map_or("n/a".into(), |a| format!("{a:.3}"))
    );
    for f in &result.flags {
        println!("  note: {f}");
    }
    Ok(())
}

fn compare(ctx: &Ctx, files: Vec<PathBuf>) -> Result<()> {
    let files = if files.is_empty() {
        vec![
            ctx.path(&fit_file(ModelKind::Standard, Phase::Test)),
            ctx.path(&fit_file(ModelKind::Impedance, Phase::Test)),
        ]
    } else {
        files
    };
    let fits: Vec<FitResult> = files.iter().map(|f| io::read_fit(f)).collect::<std::result::Result<_, _>>()?;
    let report = compare_models(&fits)?;
    let text = report.to_text();
    let txt = ctx.path("comparison.txt");
    let csv = ctx.path("comparison.csv");
    io::write_bytes(&txt, text.as_bytes())?;
    let mut rows = String::from("model,k,n,nll,rmse,aicc,delta_aicc\n");
    for r in &report.rows {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        rows += &format!(
            "{},{},{},{},{},{},{}\n",
            r.model.name(),
            r.k,
            r.n,
            r.nll,
            r.rmse,
            opt(r.aicc),
            opt(r.delta_aicc)
        );
    }
    io::write_bytes(&csv, rows.as_bytes())?;
    let mut manifest = ctx.manifest("compare")?;
    for f in &files {
        manifest.add_input(f)?;
    }
    manifest.add_output(&txt, &ctx.out)?;
    manifest.add_output(&csv, &ctx.out)?;
    manifest.write(&ctx.out)?;
    print!("{text}");
    Ok(())
}

fn recover(
    ctx: &Ctx,
    model: Option<ModelArg>,
    kind: RecoveryKind,
    datasets: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut seeds = cfg.seeds.noise.clone();
    if let Some(n) = datasets {
        let start = seed.unwrap_or(1);
        seeds = (start..start + n as u64).collect();
    }
    if seeds.is_empty() {
        return Err(CliError::Usage("no noise seeds configured".into()));
    }
    let mut manifest = ctx.manifest("recover")?;
    manifest.seeds = seeds.clone();
    let world_sim = |m: ModelKind| -> Result<(World, Simulator)> {
        let w = World::default_for(m);
        let sim = w.simulator(cfg.arm(), cfg.settings())?;
        Ok((w, sim))
    };
    match kind {
        RecoveryKind::Parameter => {
            let m: ModelKind = model.map(Into::into).unwrap_or(cfg.synthetic.model);
            let (world, sim) = world_sim(m)?;
            let report = parameter_recovery(&world, &sim, cfg.synthetic.noise_sd, &seeds, &cfg.fitting)?;
            let mut table = String::from(
                "seed,group_deg,true_amplitude,fit_amplitude,true_sigma_deg,fit_sigma_deg,true_offset_deg,fit_offset_deg\n",
            );
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            for r in &report.rows {
                table += &format!(
                    "{},{},{},{},{},{},{},{}\n",
                    r.seed,
                    r.group_deg,
                    r.true_amplitude,
                    r.fit_amplitude,
                    r.true_sigma_deg,
                    r.fit_sigma_deg,
                    opt(r.true_offset_deg),
                    opt(r.fit_offset_deg)
                );
            }
            let csv = ctx.path(&format!("recovery_{}.csv", m.name()));
            let json = ctx.path(&format!("recovery_{}.json", m.name()));
            io::write_bytes(&csv, table.as_bytes())?;
            io::write_json(&json, &report)?;
            manifest.add_output(&csv, &ctx.out)?;
            manifest.add_output(&json, &ctx.out)?;
            println!(
                "{} model, noise sd {}: median |dA| {:.4}, |dsigma| {:.2} deg{}",
                m.name(),
                report.noise_sd,
                report.median_amplitude_error,
                report.median_sigma_error_deg,
                report
                    .median_offset_error_deg
                    .map_or(String::new(), |o| format!(", |dmu| {o:.2} deg"))
            );
        }
        RecoveryKind::Model => {
            let worlds = vec![world_sim(ModelKind::Standard)?, world_sim(ModelKind::Impedance)?];
            let report = model_recovery(
                &worlds,
                cfg.synthetic.noise_sd,
                seeds.len(),
                seeds[0],
                &cfg.fitting,
            )?;
            let json = ctx.path("model_recovery.json");
            io::write_json(&json, &report)?;
            manifest.add_output(&json, &ctx.out)?;
            println!("generated \\ selected   standard  impedance");
            for (name, row) in ["standard", "impedance"].iter().zip(report.confusion) {
                println!("{name:<20} {:>9} {:>10}", row[0], row[1]);
            }
        }
    }
    manifest.write(&ctx.out)?;
    Ok(())
}

fn plot(ctx: &Ctx) -> Result<()> {
    let curves_path = ctx.path("curves.csv");
    let curves = if curves_path.exists() {
        io::read_curves(&curves_path)?
    } else {
        vec![]
    };
    if curves.is_empty() {
        return Err(CliError::Usage(format!(
            "no curves to plot in {}; run analyze first",
            curves_path.display()
        )));
    }
    let mut fits = Vec::new();
    for m in [ModelKind::Standard, ModelKind::Impedance] {
        let p = ctx.path(&fit_file(m, Phase::Test));
        if p.exists() {
            fits.push(io::read_fit(&p)?);
        }
    }
    let idx_path = ctx.path("indices.csv");
    let baseline = if idx_path.exists() {
        baseline_means(&io::read_indices(&idx_path)?)
    } else {
        BTreeMap::new()
    };
    let figs = emit_plots(&curves, &fits, &baseline, &PlotStyle::default());
    let mut manifest = ctx.manifest("plot")?;
    manifest.add_input(&curves_path)?;
    for f in &figs {
        let p = ctx.path(&format!("plots/{}", f.name));
        io::write_bytes(&p, f.svg.as_bytes())?;
        manifest.add_output(&p, &ctx.out)?;
    }
    manifest.write(&ctx.out)?;
    println!("{} figures written to {}", figs.len(), ctx.path("plots").display());
    Ok(())
}

fn audit(ctx: &Ctx, group: Option<f64>, seed: Option<u64>, schedule: Option<PathBuf>) -> Result<()> {
    let mut failures = Vec::new();
    let protocols = match schedule {
        Some(path) => {
            let trials = io::read_schedule(&path)?;
            let g = group.ok_or_else(|| CliError::Usage("--group is required with --schedule".into()))?;
            vec![fieldgen::protocol::Protocol {
                group_deg: g,
                seed: seed.unwrap_or(0),
                trials,
            }]
        }
        None => groups(group)?
            .into_iter()
            .map(|g| build_protocol(g, seed.unwrap_or_else(|| ctx.cfg.protocol_seed(g))))
            .collect::<std::result::Result<_, _>>()?,
    };
    for p in &protocols {
        let report = audit_protocol(p);
        println!(
            "group {} seed {}: {} trials, {} violations",
            p.group_deg,
            p.seed,
            p.len(),
            report.violations.len()
        );
        for v in &report.violations {
            println!("  {v}");
            failures.push(format!("group {}: {v}", p.group_deg));
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Audit(format!("{} protocol violation(s)", failures.len())))
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        // Only fails if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let ctx = Ctx {
        cfg,
        config_path: cli.config.clone(),
        out,
    };
    match cli.command {
        Command::Simulate { group, seed, model } => simulate(&ctx, group, seed, model),
        Command::Analyze { group } => analyze(&ctx, group),
        Command::Fit {
            model,
            phase,
            input,
            seed,
        } => fit(&ctx, model, phase, input, seed),
        Command::Compare { fits } => compare(&ctx, fits),
        Command::Recover {
            model,
            kind,
            datasets,
            seed,
        } => recover(&ctx, model, kind, datasets, seed),
        Command::Plot => plot(&ctx),
        Command::Audit { group, seed, schedule } => audit(&ctx, group, seed, schedule),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": {"kind": e.kind(), "message": e.to_string()}}));
            ExitCode::from(e.exit_code())
        }
    }
}
