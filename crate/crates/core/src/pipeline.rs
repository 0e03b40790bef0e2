//! End-to-end commands: generate → train → evaluate → plan → identify →
//! compare-ep → report. Each reads a [`RunConfig`] and writes into `out`.

use crate::hybrid::HybridModel;
use crate::io::svg::{self, Mark, Series};
use crate::io::{self, IoError, Manifest, SCHEMA_VERSION};
use crate::planner::{self, DesiredProfile, EpFit, MassBounds, PlanOptions, PlanResult};
use crate::plant::{generate_grid, GridSpec, NoiseSpec, SyntheticPlant, TrajectoryDataset};
use crate::sysid::{self, EventTiming, PerturbationEvent, PerturbationSpec, SmdOptions, StiffnessComparison, TrackingMetrics};
use crate::training::{self, TrainConfig, TrainLog};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl PipelineError {
    /// Process exit status: 2 for bad input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Numerical(_) => 3,
            _ => 2,
        }
    }
}

fn num<E: std::fmt::Display>(e: E) -> PipelineError {
    PipelineError::Numerical(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    pub grid: GridSpec,
    pub duration_s: f64,
    pub noise: NoiseSpec,
    pub plant: SyntheticPlant,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self { grid: GridSpec::desk(), duration_s: 4.0, noise: NoiseSpec::NONE, plant: SyntheticPlant::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResumeSection {
    pub checkpoint: PathBuf,
    pub start_stage: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    /// Solver step for the full-length evaluation runs.
    pub step_s: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self { step_s: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    SteppedSinusoid { amplitude_mm: f64, frequency_hz: f64, center_mm: f64, levels_n_mm: Vec<f64>, cycles_per_level: usize, dt_s: f64 },
    HeldPose { x_mm: f64, levels_n_mm: Vec<f64>, hold_s: f64, dt_s: f64 },
}

impl Default for ProfileSpec {
    fn default() -> Self {
        ProfileSpec::SteppedSinusoid { amplitude_mm: 1.0, frequency_hz: 0.1, center_mm: 0.0, levels_n_mm: vec![140.0, 150.0, 160.0], cycles_per_level: 5, dt_s: 0.01 }
    }
}

impl ProfileSpec {
    pub fn build(&self) -> Result<DesiredProfile, PipelineError> {
        let p = match self {
            ProfileSpec::SteppedSinusoid { amplitude_mm, frequency_hz, center_mm, levels_n_mm, cycles_per_level, dt_s } => {
                if !(*frequency_hz > 0.0 && *dt_s > 0.0 && *cycles_per_level > 0 && !levels_n_mm.is_empty()) {
                    return Err(PipelineError::Config("profile needs frequency_hz > 0, dt_s > 0, cycles_per_level > 0 and levels".into()));
                }
                DesiredProfile::stepped_sinusoid(*amplitude_mm, *frequency_hz, *center_mm, levels_n_mm, *cycles_per_level, *dt_s)
            }
            ProfileSpec::HeldPose { x_mm, levels_n_mm, hold_s, dt_s } => {
                if !(*hold_s > 0.0 && *dt_s > 0.0 && !levels_n_mm.is_empty()) {
                    return Err(PipelineError::Config("profile needs hold_s > 0, dt_s > 0 and levels".into()));
                }
                DesiredProfile::held_pose(*x_mm, levels_n_mm, *hold_s, *dt_s)
            }
        };
        p.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(p)
    }

    /// A held pose is treated as one "cycle" per level with all four phases at rest.
    pub fn timing(&self) -> EventTiming {
        match self {
            ProfileSpec::SteppedSinusoid { frequency_hz, cycles_per_level, levels_n_mm, .. } => {
                EventTiming { period_s: 1.0 / frequency_hz, cycles_per_level: *cycles_per_level, n_levels: levels_n_mm.len() }
            }
            ProfileSpec::HeldPose { levels_n_mm, hold_s, .. } => EventTiming { period_s: *hold_s, cycles_per_level: 1, n_levels: levels_n_mm.len() },
        }
    }

    pub fn period_s(&self) -> f64 {
        self.timing().period_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerSection {
    /// Mass box = hull of the training masses widened by this fraction.
    pub mass_margin: f64,
    pub h_mm: f64,
}

impl Default for PlannerSection {
    fn default() -> Self {
        Self { mass_margin: 0.1, h_mm: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpSection {
    pub pressure_min_kpa: f64,
    pub pressure_max_kpa: f64,
    /// Search half-width for model equilibria, mm.
    pub equilibrium_limit_mm: f64,
}

impl Default for EpSection {
    fn default() -> Self {
        Self { pressure_min_kpa: 0.0, pressure_max_kpa: 600.0, equilibrium_limit_mm: 20.0 }
    }
}

/// One JSON document configures every command; each reads its own sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub generate: GenerateSection,
    /// Empty `stage_datasets` means the stage plan of the loaded grid.
    pub train: TrainConfig,
    pub resume: Option<ResumeSection>,
    pub evaluate: EvaluateSection,
    pub profile: ProfileSpec,
    pub planner: PlannerSection,
    pub perturbation: PerturbationSpec,
    pub ep: EpSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: SCHEMA_VERSION,
            seed: 0,
            data_dir: PathBuf::from("data"),
            checkpoint: PathBuf::from("run/model.json"),
            generate: GenerateSection::default(),
            train: TrainConfig::default(),
            resume: None,
            evaluate: EvaluateSection::default(),
            profile: ProfileSpec::default(),
            planner: PlannerSection::default(),
            perturbation: PerturbationSpec::default(),
            ep: EpSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self, PipelineError> {
        let c: RunConfig = serde_json::from_str(s).map_err(|e| PipelineError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_json(&io::read_string(path)?).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.version != SCHEMA_VERSION {
            return Err(PipelineError::Config(format!("schema version {}, expected {SCHEMA_VERSION}", self.version)));
        }
        self.train.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.profile.build()?;
        if !(self.generate.duration_s > 0.0) || self.generate.grid.levels_psi.is_empty() {
            return Err(PipelineError::Config("generate needs duration_s > 0 and at least one level".into()));
        }
        if !(self.evaluate.step_s > 0.0 && self.planner.h_mm > 0.0 && self.planner.mass_margin >= 0.0) {
            return Err(PipelineError::Config("evaluate.step_s and planner.h_mm must be positive".into()));
        }
        if !(self.ep.pressure_max_kpa > self.ep.pressure_min_kpa) {
            return Err(PipelineError::Config("ep pressure range is empty".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- generate

pub fn generate(cfg: &RunConfig, out: &Path) -> Result<Manifest, PipelineError> {
    let g = &cfg.generate;
    let ds = generate_grid(&g.plant, &g.grid, g.duration_s, cfg.seed, g.noise).map_err(num)?;
    let trials = ds.iter().map(|d| io::write_dataset(out, d)).collect::<Result<Vec<_>, _>>()?;
    let m = Manifest {
        version: SCHEMA_VERSION,
        plant: g.plant.clone(),
        plant_hash: g.plant.hash(),
        grid: g.grid.clone(),
        duration_s: g.duration_s,
        seed: cfg.seed,
        noise: g.noise,
        trials,
    };
    io::write_json(&out.join(io::MANIFEST_FILE), &m)?;
    Ok(m)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub epochs: usize,
    pub best_loss: f64,
    pub best_epoch: Option<usize>,
    pub final_loss: f64,
    pub stage_best: Vec<f64>,
    pub train_datasets: Vec<String>,
}

/// Training groups: the configured ones, or the stage plan of the grid.
pub fn stage_groups(cfg: &RunConfig, datasets: &[TrajectoryDataset]) -> Result<Vec<Vec<String>>, PipelineError> {
    if cfg.train.stage_datasets.is_empty() {
        training::stage_plan(datasets).map_err(|e| PipelineError::Config(e.to_string()))
    } else {
        Ok(cfg.train.stage_datasets.clone())
    }
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<(HybridModel, TrainLog), PipelineError> {
    let (_, ds) = io::load_datasets(&cfg.data_dir)?;
    let groups = stage_groups(cfg, &ds)?;
    let tc = TrainConfig { stage_datasets: groups.clone(), ..cfg.train.clone() };
    let (model, log) = match &cfg.resume {
        Some(r) => training::train_from(io::read_checkpoint(&r.checkpoint)?, &ds, &tc, r.start_stage),
        None => training::train(&ds, &tc, cfg.seed),
    }
    .map_err(|e| match e {
        training::TrainError::Config(m) => PipelineError::Config(m),
        training::TrainError::UnknownDataset(n) => PipelineError::Config(format!("unknown dataset {n}")),
        other => PipelineError::Numerical(other.to_string()),
    })?;
    io::write_checkpoint(&out.join("model.json"), &model)?;
    io::write_atomic(&out.join("train_log.jsonl"), log.to_json_lines().as_bytes())?;
    let summary = TrainSummary {
        seed: cfg.seed,
        epochs: log.records.len(),
        best_loss: log.best_loss,
        best_epoch: log.best_epoch,
        final_loss: log.records.last().map(|r| r.loss_total).unwrap_or(f64::NAN),
        stage_best: log.stage_best.clone(),
        train_datasets: groups.last().cloned().unwrap_or_default(),
    };
    io::write_json(&out.join("train_summary.json"), &summary)?;
    Ok((model, log))
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Row {
    pub name: String,
    pub pf_psi: f64,
    pub pe_psi: f64,
    pub mf_g: f64,
    pub me_g: f64,
    pub held_out: bool,
    pub r2_x: f64,
    pub r2_xdot: f64,
    pub r2_pf: f64,
    pub r2_pe: f64,
    pub r2_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Summary {
    pub grid_mean: f64,
    pub held_out_mean: f64,
    pub train_mean: f64,
    pub n_held_out: usize,
    pub n_train: usize,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn evaluate(cfg: &RunConfig, out: &Path) -> Result<(Vec<R2Row>, R2Summary), PipelineError> {
    let (_, ds) = io::load_datasets(&cfg.data_dir)?;
    let model = io::read_checkpoint(&cfg.checkpoint)?;
    let train_set = stage_groups(cfg, &ds)?.last().cloned().unwrap_or_default();
    let scores = crate::par::map(&ds, |d| sysid::channel_r2(&model, d, cfg.evaluate.step_s));
    let mut rows = Vec::with_capacity(ds.len());
    for (d, r) in ds.iter().zip(scores) {
        let r = r.map_err(|e| PipelineError::Numerical(format!("{}: {e}", d.name())))?;
        rows.push(R2Row {
            name: d.name(),
            pf_psi: d.meta.pf_psi,
            pe_psi: d.meta.pe_psi,
            mf_g: d.meta.mf_g,
            me_g: d.meta.me_g,
            held_out: !train_set.contains(&d.name()),
            r2_x: r[0],
            r2_xdot: r[1],
            r2_pf: r[2],
            r2_pe: r[3],
            r2_mean: r.iter().sum::<f64>() / 4.0,
        });
    }
    let summary = R2Summary {
        grid_mean: mean(rows.iter().map(|r| r.r2_mean)),
        held_out_mean: mean(rows.iter().filter(|r| r.held_out).map(|r| r.r2_mean)),
        train_mean: mean(rows.iter().filter(|r| !r.held_out).map(|r| r.r2_mean)),
        n_held_out: rows.iter().filter(|r| r.held_out).count(),
        n_train: rows.iter().filter(|r| !r.held_out).count(),
    };
    io::write_csv(&out.join("r2.csv"), &rows)?;
    io::write_json(&out.join("r2_summary.json"), &summary)?;
    let levels = |f: fn(&R2Row) -> f64| {
        let mut v: Vec<f64> = rows.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let (pf, pe) = (levels(|r| r.pf_psi), levels(|r| r.pe_psi));
    let grid: Vec<Vec<f64>> = pe
        .iter()
        .map(|&e| pf.iter().map(|&f| rows.iter().find(|r| r.pf_psi == f && r.pe_psi == e).map_or(f64::NAN, |r| r.r2_mean)).collect())
        .collect();
    let label_of = |vals: &[f64], key: fn(&R2Row) -> f64, mass: fn(&R2Row) -> f64, in_mass: bool| -> Vec<String> {
        vals.iter()
            .map(|v| {
                if in_mass {
                    rows.iter().find(|r| key(r) == *v).map(|r| format!("{:.4}", mass(r))).unwrap_or_default()
                } else {
                    format!("{v}")
                }
            })
            .collect()
    };
    for (file, in_mass, xl, yl) in [
        ("r2_pressure.svg", false, "flexor pressure (psi)", "extensor pressure (psi)"),
        ("r2_mass.svg", true, "flexor air mass (g)", "extensor air mass (g)"),
    ] {
        let cols = label_of(&pf, |r| r.pf_psi, |r| r.mf_g, in_mass);
        let rws = label_of(&pe, |r| r.pe_psi, |r| r.me_g, in_mass);
        let s = svg::heatmap(&format!("mean R² (grid {:.2})", summary.grid_mean), xl, yl, &cols, &rws, &grid, (0.0, 1.0));
        io::write_atomic(&out.join(file), s.as_bytes())?;
    }
    Ok((rows, summary))
}

// ---------------------------------------------------------------- plan

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub n_steps: usize,
    pub n_infeasible: usize,
    pub max_residual_n: f64,
    pub max_stiffness_miss_n_mm: f64,
    /// Planned masses replayed on the learned model.
    pub model_tracking: TrackingMetrics,
}

/// `(m_f, m_e)` in grams of every trial in the dataset directory.
fn trial_masses(cfg: &RunConfig) -> Result<Vec<(f64, f64)>, PipelineError> {
    let m = io::read_manifest(&cfg.data_dir)?;
    let mut pairs = Vec::with_capacity(m.trials.len());
    for e in &m.trials {
        let side: io::DatasetSidecar = io::read_json(&cfg.data_dir.join(&e.json))?;
        pairs.push((side.meta.mf_g, side.meta.me_g));
    }
    if pairs.is_empty() {
        return Err(PipelineError::Config("manifest lists no trials".into()));
    }
    Ok(pairs)
}

fn mass_bounds(cfg: &RunConfig) -> Result<MassBounds, PipelineError> {
    Ok(MassBounds::from_pairs(&trial_masses(cfg)?, cfg.planner.mass_margin))
}

fn plan_options(cfg: &RunConfig) -> PlanOptions {
    PlanOptions { h_mm: cfg.planner.h_mm, ..PlanOptions::default() }
}

/// Desired position at each 1 kHz sample time, by nearest profile sample.
fn desired_at(profile: &DesiredProfile, times: &[f64]) -> Vec<f64> {
    let (t0, dt) = (profile.t_s[0], profile.dt());
    times.iter().map(|&t| profile.x_mm[(((t - t0) / dt).round().max(0.0) as usize).min(profile.len() - 1)]).collect()
}

pub fn plan(cfg: &RunConfig, out: &Path) -> Result<(PlanResult, PlanSummary), PipelineError> {
    let model = io::read_checkpoint(&cfg.checkpoint)?;
    let profile = cfg.profile.build()?;
    let bounds = mass_bounds(cfg)?;
    let result = planner::synthesize_profile(&model, &profile, &bounds, &plan_options(cfg)).map_err(num)?;
    let (times, states) = sysid::execute_on_model(&model, &result).map_err(num)?;
    let x: Vec<f64> = states.iter().map(|s| s[0]).collect();
    let tracking = sysid::tracking_metrics(&times, &desired_at(&profile, &times), &x, cfg.profile.period_s()).map_err(num)?;
    let summary = PlanSummary {
        n_steps: result.rows.len(),
        n_infeasible: result.n_infeasible(),
        max_residual_n: result.rows.iter().fold(0.0, |a, r| a.max(r.residual_n)),
        max_stiffness_miss_n_mm: result.rows.iter().fold(0.0, |a, r| a.max((r.khat_n_mm - r.kd_n_mm).abs())),
        model_tracking: tracking,
    };
    io::write_atomic(&out.join("plan.csv"), result.to_csv().map_err(num)?.as_bytes())?;
    io::write_json(&out.join("plan_summary.json"), &summary)?;
    Ok((result, summary))
}

/// Reuses `out/plan.csv` when present, otherwise plans from scratch.
fn load_or_plan(cfg: &RunConfig, out: &Path) -> Result<PlanResult, PipelineError> {
    let p = out.join("plan.csv");
    if p.exists() {
        return PlanResult::from_csv(&io::read_string(&p)?).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())));
    }
    Ok(plan(cfg, out)?.0)
}

// ---------------------------------------------------------------- identify

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub index: usize,
    pub level: usize,
    pub cycle: usize,
    pub phase: sysid::Phase,
    pub direction: i8,
    pub t_s: f64,
    #[serde(rename = "Kd_N_mm")]
    pub kd_n_mm: f64,
    pub x_mm: f64,
    pub xdot_mm_s: f64,
    #[serde(rename = "K_N_mm")]
    pub k_n_mm: f64,
    #[serde(rename = "B_N_s_mm")]
    pub b_n_s_mm: f64,
    #[serde(rename = "M_kg")]
    pub m_kg: f64,
    pub rms_mm: f64,
    pub poor_fit: bool,
}

impl From<&PerturbationEvent> for EventRow {
    fn from(e: &PerturbationEvent) -> Self {
        Self {
            index: e.index,
            level: e.level,
            cycle: e.cycle,
            phase: e.phase,
            direction: e.direction,
            t_s: e.t_s,
            kd_n_mm: e.k_d,
            x_mm: e.x_mm,
            xdot_mm_s: e.xdot_mm_s,
            k_n_mm: e.fit.k_n_mm,
            b_n_s_mm: e.fit.b_n_s_mm,
            m_kg: e.fit.m_kg,
            rms_mm: e.fit.rms_mm,
            poor_fit: e.fit.poor_fit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifySummary {
    pub plant_tracking: TrackingMetrics,
    pub comparison: StiffnessComparison,
    /// Largest |mean identified K − K_d| / K_d over levels.
    pub max_relative_error: f64,
}

fn run_events(cfg: &RunConfig, plan: &PlanResult, m_kg: f64) -> Result<Vec<PerturbationEvent>, PipelineError> {
    let profile = cfg.profile.build()?;
    sysid::run_perturbation_protocol(&cfg.generate.plant, plan, &profile, &cfg.profile.timing(), m_kg, &cfg.perturbation, &SmdOptions::default()).map_err(num)
}

fn plant_tracking(cfg: &RunConfig, plan: &PlanResult) -> Result<(Vec<f64>, Vec<f64>, TrackingMetrics), PipelineError> {
    let profile = cfg.profile.build()?;
    let (times, states, _) = sysid::execute_on_plant(&cfg.generate.plant, plan).map_err(num)?;
    let x: Vec<f64> = states.iter().map(|s| s[0]).collect();
    let m = sysid::tracking_metrics(&times, &desired_at(&profile, &times), &x, cfg.profile.period_s()).map_err(num)?;
    Ok((times, x, m))
}

fn summarize(tag: &str, cfg: &RunConfig, plan: &PlanResult, events: &[PerturbationEvent]) -> Result<IdentifySummary, PipelineError> {
    let comparison = sysid::compare_velocity(tag, events).map_err(num)?;
    let max_relative_error = comparison.levels.iter().fold(0.0f64, |a, l| a.max(((l.k_all_mean - l.k_d) / l.k_d).abs()));
    Ok(IdentifySummary { plant_tracking: plant_tracking(cfg, plan)?.2, comparison, max_relative_error })
}

/// Perturbation identification of the learned-model plan on the plant.
pub fn identify(cfg: &RunConfig, out: &Path) -> Result<IdentifySummary, PipelineError> {
    let model = io::read_checkpoint(&cfg.checkpoint)?;
    let plan = load_or_plan(cfg, out)?;
    let events = run_events(cfg, &plan, model.params.m())?;
    io::write_csv(&out.join("events_nn.csv"), &events.iter().map(EventRow::from).collect::<Vec<_>>())?;
    let s = summarize("NN", cfg, &plan, &events)?;
    io::write_json(&out.join("identify_summary.json"), &s)?;
    Ok(s)
}

// ---------------------------------------------------------------- compare-ep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpComparison {
    pub ep_fit: EpFit,
    pub nn: IdentifySummary,
    pub ep: IdentifySummary,
    /// NN Δ ≤ EP Δ at every level.
    pub nn_delta_not_worse: bool,
    pub ep_flagged_every_level: bool,
    pub nn_flagged_any_level: bool,
}

pub fn compare_ep(cfg: &RunConfig, out: &Path) -> Result<EpComparison, PipelineError> {
    let model = io::read_checkpoint(&cfg.checkpoint)?;
    let profile = cfg.profile.build()?;
    let pairs = trial_masses(cfg)?;
    let (ep_fit, points) = planner::fit_ep(&model, &pairs, cfg.planner.h_mm, cfg.ep.equilibrium_limit_mm).map_err(num)?;
    io::write_json(&out.join("ep_fit.json"), &(&ep_fit, &points))?;
    let ep_plan = planner::ep_plan(&model, &ep_fit.ep, &profile, (cfg.ep.pressure_min_kpa, cfg.ep.pressure_max_kpa), cfg.planner.h_mm).map_err(num)?;
    io::write_atomic(&out.join("plan_ep.csv"), ep_plan.to_csv().map_err(num)?.as_bytes())?;
    let nn_plan = load_or_plan(cfg, out)?;

    let nn_events = run_events(cfg, &nn_plan, model.params.m())?;
    let ep_events = run_events(cfg, &ep_plan, model.params.m())?;
    io::write_csv(&out.join("events_nn.csv"), &nn_events.iter().map(EventRow::from).collect::<Vec<_>>())?;
    io::write_csv(&out.join("events_ep.csv"), &ep_events.iter().map(EventRow::from).collect::<Vec<_>>())?;
    let nn = summarize("NN", cfg, &nn_plan, &nn_events)?;
    let ep = summarize("EP", cfg, &ep_plan, &ep_events)?;
    let pairs = nn.comparison.levels.iter().zip(&ep.comparison.levels);
    let result = EpComparison {
        ep_fit,
        nn_delta_not_worse: pairs.clone().all(|(a, b)| a.delta_pct <= b.delta_pct),
        ep_flagged_every_level: ep.comparison.levels.iter().all(|l| l.p_value() < 0.05),
        nn_flagged_any_level: nn.comparison.levels.iter().any(|l| l.p_value() < 0.05),
        nn,
        ep,
    };
    io::write_json(&out.join("comparison.json"), &result)?;
    let pts = |c: &StiffnessComparison, zero: bool| -> Vec<(f64, f64)> {
        c.levels.iter().map(|l| (l.k_d, if zero { l.k_zero_mean } else { l.k_vmax_mean })).collect()
    };
    let kd: Vec<(f64, f64)> = result.nn.comparison.levels.iter().map(|l| (l.k_d, l.k_d)).collect();
    let (a, b, c, d) = (pts(&result.nn.comparison, true), pts(&result.nn.comparison, false), pts(&result.ep.comparison, true), pts(&result.ep.comparison, false));
    let s = svg::xy_plot(
        "identified stiffness",
        "desired K (N/mm)",
        "identified K (N/mm)",
        &[
            Series { name: "desired", points: &kd, mark: Mark::Line },
            Series { name: "NN at rest", points: &a, mark: Mark::Dots },
            Series { name: "NN at max speed", points: &b, mark: Mark::Dots },
            Series { name: "EP at rest", points: &c, mark: Mark::Dots },
            Series { name: "EP at max speed", points: &d, mark: Mark::Dots },
        ],
    );
    io::write_atomic(&out.join("stiffness.svg"), s.as_bytes())?;
    Ok(result)
}

// ---------------------------------------------------------------- report

/// Plots from whatever artifacts exist in `out`, plus hysteresis loops of
/// the diagonal trials, and a plain-text index.
pub fn report(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut written = Vec::new();
    let (_, ds) = io::load_datasets(&cfg.data_dir)?;
    let loops: Vec<(String, Vec<(f64, f64)>)> = ds
        .iter()
        .filter(|d| d.meta.pf_psi == d.meta.pe_psi)
        .map(|d| (d.name(), d.channels.x_mm.iter().zip(&d.channels.fe_n).map(|(x, f)| (*x, *f)).collect()))
        .collect();
    let series: Vec<Series> = loops.iter().map(|(n, p)| Series { name: n, points: p, mark: Mark::Line }).collect();
    let p = out.join("hysteresis.svg");
    io::write_atomic(&p, svg::xy_plot("external force against position", "x (mm)", "F_e (N)", &series).as_bytes())?;
    written.push(p);

    let plan_path = out.join("plan.csv");
    if plan_path.exists() {
        let plan = PlanResult::from_csv(&io::read_string(&plan_path)?).map_err(|e| PipelineError::Config(e.to_string()))?;
        let profile = cfg.profile.build()?;
        let (times, x, _) = plant_tracking(cfg, &plan)?;
        let stride = 10;
        let des: Vec<(f64, f64)> = profile.t_s.iter().zip(&profile.x_mm).map(|(t, x)| (*t, *x)).collect();
        let act: Vec<(f64, f64)> = times.iter().zip(&x).step_by(stride).map(|(t, x)| (*t, *x)).collect();
        let p = out.join("tracking.svg");
        let s = svg::xy_plot(
            "plan executed on the plant",
            "t (s)",
            "x (mm)",
            &[Series { name: "desired", points: &des, mark: Mark::Line }, Series { name: "plant", points: &act, mark: Mark::Line }],
        );
        io::write_atomic(&p, s.as_bytes())?;
        written.push(p);
    }

    let mut index = String::new();
    for f in ["train_summary.json", "r2_summary.json", "plan_summary.json", "identify_summary.json", "comparison.json"] {
        let p = out.join(f);
        if p.exists() {
            index.push_str(&format!("## {f}\n\n```json\n{}```\n\n", io::read_string(&p)?));
        }
    }
    let p = out.join("report.md");
    io::write_atomic(&p, index.as_bytes())?;
    written.push(p);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_round_trip() {
        let c = RunConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&s).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        for bad in [
            r#"{"bogus": 1}"#,
            r#"{"train": {"lr": 0.1}}"#,
            r#"{"profile": {"kind": "stepped_sinusoid", "amplitude": 1}}"#,
            r#"{"version": 9}"#,
            r#"{"train": {"damping_schedule_kg_s": [5.0]}}"#,
            r#"{"ep": {"pressure_min_kpa": 10, "pressure_max_kpa": 5}}"#,
        ] {
            let e = RunConfig::from_json(bad).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{bad}: {e}");
        }
    }

    #[test]
    fn held_pose_timing() {
        let p = ProfileSpec::HeldPose { x_mm: 0.0, levels_n_mm: vec![126.0, 136.0], hold_s: 3.0, dt_s: 0.01 };
        assert_eq!(p.timing(), EventTiming { period_s: 3.0, cycles_per_level: 1, n_levels: 2 });
        assert_eq!(p.build().unwrap().len(), 601);
    }
}
