//! Trajectory loss, staged schedule and the training loop.

use crate::force_net::ForceNet;
use crate::hybrid::{ControlInput, HybridModel, N_TRAINABLE};
use crate::numerics::{adam_step, integrate_with_grad, AdamConfig, AdamState, Method, OdeSolveSpec};
use crate::physics::{init_params, sigmoid, Side, P_ATM};
use crate::plant::TrajectoryDataset;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Loss assigned to a dataset whose solve diverged.
pub const PENALTY_LOSS: f64 = 1e6;
/// Weight on the kinematic channels.
pub const KINEMATIC_WEIGHT: f64 = 100.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("unknown dataset {0}")]
    UnknownDataset(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset {0} is shorter than the horizon")]
    ShortDataset(String),
}

/// Mean squared channel errors in mm, mm/s, kPa, kPa.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelLoss {
    pub x: f64,
    pub xdot: f64,
    pub pf: f64,
    pub pe: f64,
}

impl ChannelLoss {
    pub fn total(&self) -> f64 {
        KINEMATIC_WEIGHT * (self.x + self.xdot) + self.pf + self.pe
    }

    fn add_scaled(&mut self, o: &ChannelLoss, w: f64) {
        self.x += w * o.x;
        self.xdot += w * o.xdot;
        self.pf += w * o.pf;
        self.pe += w * o.pe;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub channels: ChannelLoss,
    /// `(name, total)` per dataset, in input order.
    pub per_dataset: Vec<(String, f64)>,
}

/// Channel series in file units: mm, mm/s, kPa gauge, kPa gauge.
#[derive(Debug, Clone, Copy)]
pub struct Series<'a> {
    pub x_mm: &'a [f64],
    pub xdot_mm_s: &'a [f64],
    pub pf_kpa: &'a [f64],
    pub pe_kpa: &'a [f64],
}

impl Series<'_> {
    fn len(&self) -> Result<usize, TrainError> {
        let n = self.x_mm.len();
        for c in [self.xdot_mm_s, self.pf_kpa, self.pe_kpa] {
            if c.len() != n {
                return Err(TrainError::LengthMismatch(n, c.len()));
            }
        }
        Ok(n)
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, m)| (p - m) * (p - m)).sum::<f64>() / a.len() as f64
}

/// `100·(L_x + L_ẋ) + L_Pf + L_Pe` over one pair of equal-length series.
pub fn trajectory_loss(predicted: &Series, measured: &Series) -> Result<LossReport, TrainError> {
    let n = predicted.len()?;
    let m = measured.len()?;
    if n != m || n == 0 {
        return Err(TrainError::LengthMismatch(n, m));
    }
    let channels = ChannelLoss {
        x: mse(predicted.x_mm, measured.x_mm),
        xdot: mse(predicted.xdot_mm_s, measured.xdot_mm_s),
        pf: mse(predicted.pf_kpa, measured.pf_kpa),
        pe: mse(predicted.pe_kpa, measured.pe_kpa),
    };
    Ok(LossReport { total: channels.total(), channels, per_dataset: Vec::new() })
}

/// Cumulative dataset groups on a square grid, as dataset names.
///
/// Group 1 is the diagonal, group 2 adds the anti-diagonal ordered by pressure
/// difference, group 3 adds the two iso-total lines halfway between the
/// anti-diagonal and the corners.
pub fn stage_plan(datasets: &[TrajectoryDataset]) -> Result<Vec<Vec<String>>, TrainError> {
    let mut pf: Vec<f64> = datasets.iter().map(|d| d.meta.pf_psi).collect();
    pf.sort_by(f64::total_cmp);
    pf.dedup();
    let n = pf.len();
    if n == 0 || datasets.len() != n * n {
        return Err(TrainError::Config(format!("{} datasets do not form a square grid", datasets.len())));
    }
    let level = |v: f64| pf.iter().position(|&p| p == v);
    let mut at = vec![None; n * n];
    for d in datasets {
        match (level(d.meta.pf_psi), level(d.meta.pe_psi)) {
            (Some(i), Some(j)) => at[i * n + j] = Some(d.name()),
            _ => return Err(TrainError::Config(format!("{} is off the grid", d.name()))),
        }
    }
    let name = |i: usize, j: usize| at[i * n + j].clone().ok_or_else(|| TrainError::Config(format!("grid hole at ({i}, {j})")));
    let mut groups: Vec<Vec<String>> = Vec::new();
    let mut seen: Vec<String> = Vec::new();
    let mut push_group = |cells: Vec<(usize, usize)>, groups: &mut Vec<Vec<String>>| -> Result<(), TrainError> {
        let mut g = groups.last().cloned().unwrap_or_default();
        for (i, j) in cells {
            let s = name(i, j)?;
            if !seen.contains(&s) {
                seen.push(s.clone());
                g.push(s);
            }
        }
        groups.push(g);
        Ok(())
    };
    push_group((0..n).map(|i| (i, i)).collect(), &mut groups)?;
    let mut anti: Vec<(usize, usize)> = (0..n).map(|i| (i, n - 1 - i)).collect();
    anti.sort_by_key(|&(i, j)| (i.abs_diff(j), i));
    push_group(anti, &mut groups)?;
    if n >= 3 {
        let (mid, off) = (n - 1, (n - 1) / 2);
        let mut iso = Vec::new();
        for total in [mid - off, mid + off] {
            for i in 0..n {
                if total >= i && total - i < n {
                    iso.push((i, total - i));
                }
            }
        }
        push_group(iso, &mut groups)?;
    }
    groups.dedup();
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Cap on epochs summed over all stages.
    pub max_epochs: usize,
    pub stage_epoch_cap: usize,
    pub lr0: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_rel_tol: f64,
    pub early_stop_patience: usize,
    /// Auxiliary damping per stage, kg/s.
    pub damping_schedule_kg_s: Vec<f64>,
    /// Cumulative dataset groups; stage k trains on group `min(k, last)`.
    /// Empty means every dataset in every stage.
    pub stage_datasets: Vec<Vec<String>>,
    /// Training horizon from the start of each trial; 0 uses the whole trial.
    pub horizon_s: f64,
    pub step_s: f64,
    /// Gradient 2-norm clip; 0 disables.
    pub grad_clip: f64,
    /// Restart Adam moments and the learning rate at every stage instead of
    /// carrying them over.
    pub reset_optimizer_per_stage: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 5000,
            stage_epoch_cap: 300,
            lr0: 1e-2,
            plateau_factor: 0.95,
            plateau_patience: 25,
            plateau_rel_tol: 1e-4,
            early_stop_patience: 100,
            // Drops stay below the plant's own damping; the net learns to cancel B,
            // so a bigger drop leaves the next stage with negative net damping.
            damping_schedule_kg_s: vec![6500.0, 5700.0, 4900.0, 4100.0, 3300.0, 2500.0, 1800.0, 1200.0, 700.0, 300.0, 100.0, 0.0],
            stage_datasets: Vec::new(),
            horizon_s: 2.0,
            step_s: 0.01,
            grad_clip: 0.0,
            reset_optimizer_per_stage: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let d = &self.damping_schedule_kg_s;
        if d.is_empty() || *d.last().unwrap() != 0.0 {
            return Err(TrainError::Config("damping schedule must end at 0".into()));
        }
        if d.windows(2).any(|w| w[1] > w[0]) || d.iter().any(|b| !(*b >= 0.0)) {
            return Err(TrainError::Config("damping schedule must be non-negative and non-increasing".into()));
        }
        if !(self.lr0 > 0.0) || !(self.step_s > 0.0) || !(self.horizon_s >= 0.0) {
            return Err(TrainError::Config("lr0, step_s must be positive and horizon_s non-negative".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return Err(TrainError::Config("plateau_factor must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// One JSON-lines record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: usize,
    #[serde(rename = "B")]
    pub b: f64,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_channels: ChannelLoss,
    pub penalized: usize,
    pub best_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Best loss of each stage, in order.
    pub stage_best: Vec<f64>,
    /// Minimum over every epoch of every stage.
    pub best_loss: f64,
    /// Epoch index at which the returned model was evaluated.
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    pub fn to_json_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }

    /// Running minimum of the stage bests.
    pub fn best_sequence(&self) -> Vec<f64> {
        let mut m = f64::INFINITY;
        self.stage_best.iter().map(|b| {
            m = m.min(*b);
            m
        }).collect()
    }
}

/// One dataset prepared for differentiated solves.
pub struct Prepared {
    pub name: String,
    pub input: ControlInput,
    pub x0: [f64; 2],
    pub spec: OdeSolveSpec,
    /// Measured channels at the solver samples, file units.
    pub x_mm: Vec<f64>,
    pub xdot_mm_s: Vec<f64>,
    pub pf_kpa: Vec<f64>,
    pub pe_kpa: Vec<f64>,
}

impl Prepared {
    pub fn new(d: &TrajectoryDataset, horizon_s: f64, step_s: f64) -> Result<Self, TrainError> {
        let c = &d.channels;
        let dt = 1.0 / d.sample_rate_hz;
        let t_end = c.t_s[c.len() - 1];
        let horizon = if horizon_s == 0.0 { t_end } else { horizon_s };
        if horizon > t_end + 1e-9 {
            return Err(TrainError::ShortDataset(d.name()));
        }
        let stride = (step_s / dt).round() as usize;
        if stride == 0 || ((stride as f64) * dt - step_s).abs() > 1e-9 {
            return Err(TrainError::Config(format!("step {step_s} is not a multiple of the sample interval")));
        }
        let spec = OdeSolveSpec::uniform(0.0, horizon, step_s, step_s, Method::Tsit5).map_err(|e| TrainError::Config(e.to_string()))?;
        let idx: Vec<usize> = spec.sample_times.iter().map(|t| (t / dt).round() as usize).collect();
        let pick = |v: &[f64]| idx.iter().map(|&k| v[k]).collect::<Vec<f64>>();
        let (m_f, m_e) = d.masses_kg();
        Ok(Self {
            name: d.name(),
            input: ControlInput::sealed(m_f, m_e, d.force_signal()),
            x0: [c.x_mm[0] * 1e-3, c.xdot_mm_s[0] * 1e-3],
            x_mm: pick(&c.x_mm),
            xdot_mm_s: pick(&c.xdot_mm_s),
            pf_kpa: pick(&c.pf_kpa),
            pe_kpa: pick(&c.pe_kpa),
            spec,
        })
    }
}

/// Loss and gradient for one dataset; diverged solves give the penalty and no gradient.
pub struct DatasetGrad {
    pub loss: f64,
    pub channels: ChannelLoss,
    pub grad: Option<Vec<f64>>,
}

pub fn dataset_loss_grad(model: &HybridModel, d: &Prepared) -> DatasetGrad {
    let penalty = DatasetGrad { loss: PENALTY_LOSS, channels: ChannelLoss::default(), grad: None };
    let (m_f, m_e) = (d.input.m_f.at(0.0), d.input.m_e.at(0.0));
    let Ok(y0) = model.consistent_state(d.x0[0], d.x0[1], m_f, m_e) else {
        return penalty;
    };
    let field = model.field(&d.input);
    let mut channels = ChannelLoss::default();
    let res = integrate_with_grad(&field, &y0, &d.spec, |samples| {
        let n = samples.len() as f64;
        let mut cot = vec![vec![0.0; 4]; samples.len()];
        for (k, s) in samples.iter().enumerate() {
            let ex = s[0] * 1e3 - d.x_mm[k];
            let ev = s[1] * 1e3 - d.xdot_mm_s[k];
            let ef = (s[2] - P_ATM) * 1e-3 - d.pf_kpa[k];
            let ee = (s[3] - P_ATM) * 1e-3 - d.pe_kpa[k];
            channels.x += ex * ex / n;
            channels.xdot += ev * ev / n;
            channels.pf += ef * ef / n;
            channels.pe += ee * ee / n;
            cot[k][0] = KINEMATIC_WEIGHT * 2.0 * ex / n * 1e3;
            cot[k][1] = KINEMATIC_WEIGHT * 2.0 * ev / n * 1e3;
            cot[k][2] = 2.0 * ef / n * 1e-3;
            cot[k][3] = 2.0 * ee / n * 1e-3;
        }
        (channels.total(), cot)
    });
    match res {
        Ok(out) => {
            // Initial pressures depend on ν through the chamber volumes.
            let mut grad = out.grad_params;
            let p = &model.params;
            let mut g_nu = 0.0;
            for (k, (side, m)) in [(Side::Flexor, m_f), (Side::Extensor, m_e)].into_iter().enumerate() {
                let vt = p.volume_terms(side, d.x0[0]);
                g_nu += out.grad_x0[2 + k] * (-p.c() * m * vt.v_nu / (vt.v * vt.v));
            }
            grad[N_TRAINABLE - 1] += g_nu * sigmoid(p.raw_nu);
            DatasetGrad { loss: out.loss, channels, grad: Some(grad) }
        }
        Err(_) => penalty,
    }
}

/// Mean loss and gradient over a group, reduced in group order.
pub struct BatchGrad {
    pub loss: f64,
    pub channels: ChannelLoss,
    pub grad: Vec<f64>,
    pub penalized: usize,
    pub per_dataset: Vec<f64>,
}

pub fn batch_loss_grad(model: &HybridModel, group: &[&Prepared]) -> BatchGrad {
    let parts = crate::par::map(group, |d| dataset_loss_grad(model, d));
    let w = 1.0 / group.len() as f64;
    let mut out = BatchGrad { loss: 0.0, channels: ChannelLoss::default(), grad: vec![0.0; N_TRAINABLE], penalized: 0, per_dataset: Vec::new() };
    for p in &parts {
        out.loss += w * p.loss;
        out.channels.add_scaled(&p.channels, w);
        out.per_dataset.push(p.loss);
        match &p.grad {
            Some(g) => out.grad.iter_mut().zip(g).for_each(|(a, b)| *a += w * b),
            None => out.penalized += 1,
        }
    }
    out
}

/// Initial model: nominal physics and a seeded network.
pub fn initial_model(seed: u64) -> HybridModel {
    HybridModel::new(init_params(), ForceNet::init(seed))
}

/// Trains from a seeded initial model.
pub fn train(datasets: &[TrajectoryDataset], config: &TrainConfig, seed: u64) -> Result<(HybridModel, TrainLog), TrainError> {
    train_from(initial_model(seed), datasets, config, 0)
}

/// Runs stages `start_stage..` from `model`. Each stage starts from the
/// previous stage's best parameters; the returned model is the best of the
/// last stage with zero auxiliary damping.
pub fn train_from(
    mut model: HybridModel,
    datasets: &[TrajectoryDataset],
    config: &TrainConfig,
    start_stage: usize,
) -> Result<(HybridModel, TrainLog), TrainError> {
    config.validate()?;
    let prepared: Vec<Prepared> = datasets.iter().map(|d| Prepared::new(d, config.horizon_s, config.step_s)).collect::<Result<_, _>>()?;
    let groups: Vec<Vec<&Prepared>> = if config.stage_datasets.is_empty() {
        vec![prepared.iter().collect()]
    } else {
        config
            .stage_datasets
            .iter()
            .map(|g| {
                g.iter()
                    .map(|n| prepared.iter().find(|p| &p.name == n).ok_or_else(|| TrainError::UnknownDataset(n.clone())))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()?
    };
    if groups.iter().any(|g| g.is_empty()) {
        return Err(TrainError::Config("empty dataset group".into()));
    }

    let mut log = TrainLog { best_loss: f64::INFINITY, ..Default::default() };
    let mut epoch = 0usize;
    let n_stages = config.damping_schedule_kg_s.len();
    let mut adam = AdamState::new(N_TRAINABLE);
    let mut lr = config.lr0;
    for stage in start_stage..n_stages {
        let b = config.damping_schedule_kg_s[stage];
        let group = &groups[stage.min(groups.len() - 1)];
        model.aux_damping = b;
        let mut params = model.trainable();
        let mut best_params = params.clone();
        let mut stage_best = f64::INFINITY;
        if config.reset_optimizer_per_stage {
            adam = AdamState::new(N_TRAINABLE);
            lr = config.lr0;
        }
        let mut since_best = 0usize;
        let mut plateau_ref = f64::INFINITY;
        let mut since_plateau = 0usize;
        for _ in 0..config.stage_epoch_cap {
            if epoch >= config.max_epochs {
                break;
            }
            model.set_trainable(&params);
            let bg = batch_loss_grad(&model, group);
            if bg.loss < stage_best {
                stage_best = bg.loss;
                best_params.clone_from(&params);
                since_best = 0;
                if bg.loss < log.best_loss {
                    log.best_loss = bg.loss;
                }
                if stage + 1 == n_stages {
                    log.best_epoch = Some(epoch);
                }
            } else {
                since_best += 1;
            }
            log.records.push(EpochRecord {
                epoch,
                stage,
                b,
                lr,
                loss_total: bg.loss,
                loss_channels: bg.channels,
                penalized: bg.penalized,
                best_loss: log.best_loss,
            });
            epoch += 1;
            if since_best >= config.early_stop_patience {
                break;
            }
            if stage_best < plateau_ref * (1.0 - config.plateau_rel_tol) {
                plateau_ref = stage_best;
                since_plateau = 0;
            } else {
                since_plateau += 1;
                if since_plateau >= config.plateau_patience {
                    lr *= config.plateau_factor;
                    since_plateau = 0;
                }
            }
            let mut grad = bg.grad;
            if config.grad_clip > 0.0 {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > config.grad_clip {
                    grad.iter_mut().for_each(|g| *g *= config.grad_clip / norm);
                }
            }
            adam_step(&mut params, &grad, &mut adam, lr, AdamConfig::default());
        }
        log.stage_best.push(stage_best);
        if stage_best.is_finite() {
            model.set_trainable(&best_params);
        }
    }
    model.aux_damping = 0.0;
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{generate_grid, GridSpec, NoiseSpec, SyntheticPlant};

    fn series(v: &[Vec<f64>; 4]) -> Series<'_> {
        Series { x_mm: &v[0], xdot_mm_s: &v[1], pf_kpa: &v[2], pe_kpa: &v[3] }
    }

    #[test]
    fn loss_formula() {
        let m = [vec![1.0, 2.0, 3.0], vec![0.0; 3], vec![100.0; 3], vec![50.0; 3]];
        assert_eq!(trajectory_loss(&series(&m), &series(&m)).unwrap().total, 0.0);
        let mut p = m.clone();
        p[0].iter_mut().for_each(|v| *v += 1.0);
        assert!((trajectory_loss(&series(&p), &series(&m)).unwrap().total - 100.0).abs() < 1e-12);
        let mut p = m.clone();
        p[2].iter_mut().for_each(|v| *v -= 1.0);
        assert!((trajectory_loss(&series(&p), &series(&m)).unwrap().total - 1.0).abs() < 1e-12);
        let short = [vec![1.0], vec![0.0], vec![0.0], vec![0.0]];
        assert!(trajectory_loss(&series(&short), &series(&m)).is_err());
    }

    fn desk(duration: f64) -> Vec<TrajectoryDataset> {
        generate_grid(&SyntheticPlant::default(), &GridSpec::desk(), duration, 1, NoiseSpec::NONE).unwrap()
    }

    #[test]
    fn stage_plan_on_desk_grid() {
        let ds = desk(0.05);
        let g = stage_plan(&ds).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g[0].len(), 5);
        assert!(g[0].iter().all(|n| n[2..7] == n[10..15]));
        assert!(!g[0].contains(&"pf010.0_pe080.0".to_string()));
        assert!(g[1].contains(&"pf010.0_pe080.0".to_string()));
        assert_eq!(g[1].len(), 9);
        assert_eq!(g[2].len(), 13);
        // Cumulative, no duplicates, inside the grid.
        for w in g.windows(2) {
            assert!(w[0].iter().all(|n| w[1].contains(n)));
        }
        let mut all = g[2].clone();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 13);
        let names: Vec<String> = ds.iter().map(|d| d.name()).collect();
        assert!(all.iter().all(|n| names.contains(n)));
        // Anti-diagonal enters by increasing pressure difference.
        assert_eq!(g[1][5], "pf027.5_pe062.5");
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let ds = desk(0.2);
        let cfg = TrainConfig { max_epochs: 0, horizon_s: 0.1, ..TrainConfig::default() };
        let (m, log) = train(&ds[..2], &cfg, 5).unwrap();
        assert_eq!(m.trainable(), initial_model(5).trainable());
        assert!(log.records.is_empty());
        assert_eq!(m.aux_damping, 0.0);
    }

    #[test]
    fn config_rejects_bad_schedule() {
        let mut c = TrainConfig::default();
        c.damping_schedule_kg_s = vec![100.0, 200.0, 0.0];
        assert!(c.validate().is_err());
        c.damping_schedule_kg_s = vec![100.0, 50.0];
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn default_schedule_drops_stay_under_plant_damping() {
        let d = TrainConfig::default().damping_schedule_kg_s;
        let c_v = crate::plant::SyntheticPlant::default().viscous_n_s_per_m;
        assert_eq!(d[0], 6500.0);
        assert!(d.windows(2).all(|w| w[0] - w[1] < c_v));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let ds = desk(0.3);
        let d = Prepared::new(&ds[7], 0.3, 0.01).unwrap();
        let mut model = initial_model(3);
        model.aux_damping = 2000.0;
        let g = dataset_loss_grad(&model, &d);
        let grad = g.grad.unwrap();
        let p0 = model.trainable();
        for &i in &[0usize, 400, 4000, 9800, N_TRAINABLE - 2, N_TRAINABLE - 1] {
            let h = 1e-5;
            let mut p = p0.clone();
            p[i] += h;
            model.set_trainable(&p);
            let up = dataset_loss_grad(&model, &d).loss;
            p[i] -= 2.0 * h;
            model.set_trainable(&p);
            let dn = dataset_loss_grad(&model, &d).loss;
            let fd = (up - dn) / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs()).max(1e-8);
            assert!((fd - grad[i]).abs() / scale < 1e-4, "param {i}: fd {fd} vs {}", grad[i]);
        }
    }
}
