//! Validation metrics and perturbation-based stiffness identification.

use crate::hybrid::{ControlInput, HybridModel, ModelError, Signal};
use crate::numerics::{direct_search_then_refine_with, Method, OdeError, OdeSolveSpec, SearchOptions};
use crate::physics::{Side, P_ATM};
use crate::planner::{DesiredProfile, PlanResult};
use crate::plant::{PlantError, SyntheticPlant, TrajectoryDataset};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

/// Theoretical stiffness range used as the Δ denominator, N/mm.
pub const K_THEORY_RANGE: (f64, f64) = (126.0, 176.0);

#[derive(Debug, Error)]
pub enum SysidError {
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {0} samples")]
    TooShort(usize),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("{0}")]
    Invalid(String),
}

/// Coefficient of determination `1 − SS_res/SS_tot`.
pub fn r2(predicted: &[f64], measured: &[f64]) -> Result<f64, SysidError> {
    if predicted.len() != measured.len() {
        return Err(SysidError::LengthMismatch(predicted.len(), measured.len()));
    }
    if measured.is_empty() {
        return Err(SysidError::TooShort(1));
    }
    let mean = measured.iter().sum::<f64>() / measured.len() as f64;
    let ss_tot: f64 = measured.iter().map(|m| (m - mean) * (m - mean)).sum();
    if ss_tot == 0.0 {
        return Err(SysidError::ZeroVariance);
    }
    let ss_res: f64 = predicted.iter().zip(measured).map(|(p, m)| (p - m) * (p - m)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// R² of `[x, ẋ, P_f, P_e]` for a full-length simulation of the learned model
/// from the trial's first measured sample, solved at `step_s`.
pub fn channel_r2(model: &HybridModel, d: &TrajectoryDataset, step_s: f64) -> Result<[f64; 4], SysidError> {
    let c = &d.channels;
    if c.len() < 2 {
        return Err(SysidError::TooShort(2));
    }
    let (mf, me) = d.masses_kg();
    let y0 = model.consistent_state(c.x_mm[0] * 1e-3, c.xdot_mm_s[0] * 1e-3, mf, me).map_err(ModelError::from)?;
    let spec = OdeSolveSpec::uniform(c.t_s[0], c.t_s[c.len() - 1], step_s, 1.0 / d.sample_rate_hz, Method::Tsit5)?;
    let tr = model.simulate(&y0, &ControlInput::sealed(mf, me, d.force_signal()), &spec)?;
    if tr.len() != c.len() {
        return Err(SysidError::LengthMismatch(tr.len(), c.len()));
    }
    let col = |k: usize, scale: f64, offset: f64| tr.states.iter().map(|s| (s[k] - offset) * scale).collect::<Vec<f64>>();
    Ok([
        r2(&col(0, 1e3, 0.0), &c.x_mm)?,
        r2(&col(1, 1e3, 0.0), &c.xdot_mm_s)?,
        r2(&col(2, 1e-3, P_ATM), &c.pf_kpa)?,
        r2(&col(3, 1e-3, P_ATM), &c.pe_kpa)?,
    ])
}

/// Stiffness change with velocity as a percentage of the theoretical range.
pub fn delta_metric(k_zero: f64, k_vmax: f64) -> f64 {
    (k_zero - k_vmax).abs() / (K_THEORY_RANGE.1 - K_THEORY_RANGE.0) * 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub n: usize,
}

/// Two-sided paired t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest, SysidError> {
    if a.len() != b.len() {
        return Err(SysidError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(SysidError::TooShort(2));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        if mean == 0.0 {
            return Ok(TTest { t: 0.0, p: 1.0, n });
        }
        return Err(SysidError::ZeroVariance);
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| SysidError::Invalid(e.to_string()))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TTest { t, p, n })
}

/// Lag in ms (positive when `delayed` trails `reference`) maximizing the
/// normalized cross-correlation over integer-sample lags.
pub fn align_delay(reference: &[f64], delayed: &[f64], max_lag_ms: f64, sample_rate_hz: f64) -> f64 {
    let max_lag = (max_lag_ms * 1e-3 * sample_rate_hz).round() as isize;
    let n = reference.len().min(delayed.len()) as isize;
    let mut best = (0isize, f64::NEG_INFINITY);
    for lag in -max_lag..=max_lag {
        let (lo, hi) = (0.max(-lag), n.min(n - lag));
        if hi - lo < 2 {
            continue;
        }
        let a: Vec<f64> = (lo..hi).map(|i| reference[i as usize]).collect();
        let b: Vec<f64> = (lo..hi).map(|i| delayed[(i + lag) as usize]).collect();
        let ma = a.iter().sum::<f64>() / a.len() as f64;
        let mb = b.iter().sum::<f64>() / b.len() as f64;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(&b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        let c = if saa > 0.0 && sbb > 0.0 { sab / (saa * sbb).sqrt() } else { 0.0 };
        if c > best.1 {
            best = (lag, c);
        }
    }
    best.0 as f64 * 1e3 / sample_rate_hz
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    pub rms_mm: f64,
    pub max_mm: f64,
    /// RMS error per cycle of `period_s`.
    pub per_cycle_rms_mm: Vec<f64>,
}

pub fn tracking_metrics(t_s: &[f64], desired_mm: &[f64], actual_mm: &[f64], period_s: f64) -> Result<TrackingMetrics, SysidError> {
    if desired_mm.len() != actual_mm.len() || t_s.len() != actual_mm.len() {
        return Err(SysidError::LengthMismatch(desired_mm.len(), actual_mm.len()));
    }
    if t_s.is_empty() {
        return Err(SysidError::TooShort(1));
    }
    let e: Vec<f64> = desired_mm.iter().zip(actual_mm).map(|(d, a)| a - d).collect();
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let mut per_cycle = Vec::new();
    let t0 = t_s[0];
    let mut start = 0;
    for i in 1..=e.len() {
        let cycle_of = |k: usize| ((t_s[k] - t0) / period_s + 1e-9).floor() as usize;
        if i == e.len() || cycle_of(i) != cycle_of(start) {
            per_cycle.push(rms(&e[start..i]));
            start = i;
        }
    }
    Ok(TrackingMetrics { rms_mm: rms(&e), max_mm: e.iter().fold(0.0f64, |a, v| a.max(v.abs())), per_cycle_rms_mm: per_cycle })
}

/// Operating point the spring-mass-damper is referenced to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmdReference {
    pub x_d_mm: f64,
    pub xdot0_mm_s: f64,
    pub xddot0_mm_s2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmdFit {
    pub k_n_mm: f64,
    pub b_n_s_mm: f64,
    pub m_kg: f64,
    pub rms_mm: f64,
    pub poor_fit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmdOptions {
    pub k_bounds_n_mm: (f64, f64),
    pub b_bounds_n_s_mm: (f64, f64),
    /// Fit RMS above this fraction of the response amplitude is a poor fit.
    pub poor_fit_ratio: f64,
    pub search: SearchOptions,
}

impl Default for SmdOptions {
    fn default() -> Self {
        Self {
            k_bounds_n_mm: (50.0, 300.0),
            b_bounds_n_s_mm: (0.0, 5.0),
            poor_fit_ratio: 0.2,
            search: SearchOptions { grid: 7, starts: 2, max_evals: 1200, ..SearchOptions::default() },
        }
    }
}

/// Response of `M(ẍ−ẍ₀) + B(ẋ−ẋ₀) + K(x−x_d) = F_e` sampled every `dt`, by RK4
/// at the sample interval. Units: mm, N/mm, N·s/mm, kg, N.
#[allow(clippy::too_many_arguments)]
pub fn smd_response(k: f64, b: f64, m_kg: f64, r: &SmdReference, x0: [f64; 2], fe: &Signal, dt: f64, n: usize) -> Vec<f64> {
    let acc = |t: f64, x: f64, v: f64| r.xddot0_mm_s2 + 1e3 * (fe.at(t) - b * (v - r.xdot0_mm_s) - k * (x - r.x_d_mm)) / m_kg;
    let mut out = Vec::with_capacity(n);
    let (mut x, mut v) = (x0[0], x0[1]);
    out.push(x);
    for i in 1..n {
        let t = (i - 1) as f64 * dt;
        let (k1x, k1v) = (v, acc(t, x, v));
        let (k2x, k2v) = (v + 0.5 * dt * k1v, acc(t + 0.5 * dt, x + 0.5 * dt * k1x, v + 0.5 * dt * k1v));
        let (k3x, k3v) = (v + 0.5 * dt * k2v, acc(t + 0.5 * dt, x + 0.5 * dt * k2x, v + 0.5 * dt * k2v));
        let (k4x, k4v) = (v + dt * k3v, acc(t + dt, x + dt * k3x, v + dt * k3v));
        x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        v += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        out.push(x);
    }
    out
}

/// Fits `(K, B)` with `M` fixed by least squares on displacement. `x_mm`
/// starts at pulse onset; `fe` is on the same clock (onset at 0).
pub fn identify_smd(
    x_mm: &[f64],
    xdot0_mm_s: f64,
    fe: &Signal,
    m_kg: f64,
    reference: &SmdReference,
    dt: f64,
    opts: &SmdOptions,
) -> Result<SmdFit, SysidError> {
    if x_mm.len() < 10 {
        return Err(SysidError::TooShort(10));
    }
    let n = x_mm.len();
    let x0 = [x_mm[0], xdot0_mm_s];
    let sse = |p: [f64; 2]| {
        let y = smd_response(p[0], p[1], m_kg, reference, x0, fe, dt, n);
        y.iter().zip(x_mm).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    };
    let found = direct_search_then_refine_with(sse, [opts.k_bounds_n_mm, opts.b_bounds_n_s_mm], None, &opts.search);
    let rms_mm = (found.value / n as f64).sqrt();
    let amplitude = x_mm.iter().fold(0.0f64, |a, v| a.max((v - x_mm[0]).abs()));
    let poor_fit = !(amplitude > 0.0) || rms_mm > opts.poor_fit_ratio * amplitude;
    Ok(SmdFit { k_n_mm: found.point[0], b_n_s_mm: found.point[1], m_kg, rms_mm, poor_fit })
}

/// Where in the cycle a perturbation is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Trough,
    CenterRising,
    Peak,
    CenterFalling,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Trough, Phase::CenterRising, Phase::Peak, Phase::CenterFalling];

    /// Fraction of the period at which the phase occurs for `x_d = c − A·cos(2πft)`.
    pub fn cycle_fraction(self) -> f64 {
        match self {
            Phase::Trough => 0.0,
            Phase::CenterRising => 0.25,
            Phase::Peak => 0.5,
            Phase::CenterFalling => 0.75,
        }
    }

    pub fn at_rest(self) -> bool {
        matches!(self, Phase::Trough | Phase::Peak)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationSpec {
    pub pulse_width_ms: f64,
    /// Pulse magnitude, N·m; applied with both signs.
    pub pulse_torque_nm: f64,
    /// Free response recorded after the pulse ends.
    pub free_window_ms: f64,
    pub sigma_x_mm: f64,
    pub seed: u64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self { pulse_width_ms: 150.0, pulse_torque_nm: 0.5 * crate::plant::TORQUE_PER_AMP, free_window_ms: 600.0, sigma_x_mm: 0.01, seed: 0 }
    }
}

/// When events fall: every cycle of every stiffness level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventTiming {
    pub period_s: f64,
    pub cycles_per_level: usize,
    pub n_levels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationEvent {
    pub index: usize,
    pub level: usize,
    pub cycle: usize,
    pub phase: Phase,
    /// +1 or −1.
    pub direction: i8,
    pub t_s: f64,
    pub k_d: f64,
    pub x_mm: f64,
    pub xdot_mm_s: f64,
    pub fit: SmdFit,
}

/// Executes planned pressure commands on the plant: chambers are refilled to
/// the commanded pressure at the desired pose every plan sample.
pub fn plant_masses(plant: &SyntheticPlant, plan: &PlanResult) -> Result<(Signal, Signal), SysidError> {
    let mut mf = Vec::with_capacity(plan.rows.len());
    let mut me = Vec::with_capacity(plan.rows.len());
    for r in &plan.rows {
        mf.push(plant.physics.mass_from_pressure(Side::Flexor, r.pf_kpa * 1e3 + P_ATM, r.xd_mm * 1e-3).map_err(PlantError::from)?);
        me.push(plant.physics.mass_from_pressure(Side::Extensor, r.pe_kpa * 1e3 + P_ATM, r.xd_mm * 1e-3).map_err(PlantError::from)?);
    }
    let (t0, dt) = (plan.rows[0].t_s, plan.dt());
    Ok((Signal::uniform(t0, dt, mf), Signal::uniform(t0, dt, me)))
}

/// Plant trajectory at 1 kHz under the plan, starting at rest at the first desired pose.
pub fn execute_on_plant(plant: &SyntheticPlant, plan: &PlanResult) -> Result<(Vec<f64>, Vec<[f64; 2]>, (Signal, Signal)), SysidError> {
    let (mf, me) = plant_masses(plant, plan)?;
    let t_end = plan.rows.last().map(|r| r.t_s).unwrap_or(0.0);
    let x0 = plan.rows[0].xd_mm * 1e-3;
    let tr = plant.simulate_uniform([x0, 0.0], &mf, &me, &Signal::constant(0.0), t_end, 1e-3)?;
    let states = tr.states.iter().map(|s| [s[0] * 1e3, s[1] * 1e3]).collect();
    Ok((tr.times, states, (mf, me)))
}

/// Forward simulation of the planned masses on the learned model at 1 kHz,
/// from rest at the first desired pose. Returns times and `[x, ẋ]` in mm.
pub fn execute_on_model(model: &HybridModel, plan: &PlanResult) -> Result<(Vec<f64>, Vec<[f64; 2]>), SysidError> {
    let (mf, me) = plan.mass_signals();
    let first = plan.rows.first().ok_or(SysidError::TooShort(1))?;
    let t_end = plan.rows.last().map(|r| r.t_s).unwrap_or(first.t_s);
    let y0 = model.consistent_state(first.xd_mm * 1e-3, 0.0, mf.at(first.t_s), me.at(first.t_s)).map_err(ModelError::from)?;
    let spec = OdeSolveSpec::uniform(first.t_s, t_end, 1e-3, 1e-3, Method::Tsit5)?;
    let tr = model.simulate(&y0, &ControlInput { m_f: mf, m_e: me, fe: Signal::constant(0.0) }, &spec)?;
    Ok((tr.times, tr.states.iter().map(|s| [s[0] * 1e3, s[1] * 1e3]).collect()))
}

/// Injects ± pulses at trough, rising center, peak and falling center of every
/// cycle with the masses frozen, and identifies `(K, B)` for each event.
pub fn run_perturbation_protocol(
    plant: &SyntheticPlant,
    plan: &PlanResult,
    profile: &DesiredProfile,
    timing: &EventTiming,
    m_kg: f64,
    spec: &PerturbationSpec,
    opts: &SmdOptions,
) -> Result<Vec<PerturbationEvent>, SysidError> {
    let (times, states, (mf, me)) = execute_on_plant(plant, plan)?;
    let period = timing.period_s;
    let dt = 1e-3;
    let mut jobs = Vec::new();
    for level in 0..timing.n_levels {
        for cycle in 0..timing.cycles_per_level {
            for phase in Phase::ALL {
                for direction in [1i8, -1] {
                    let t = ((level * timing.cycles_per_level + cycle) as f64 + phase.cycle_fraction()) * period;
                    jobs.push((jobs.len(), level, cycle, phase, direction, t));
                }
            }
        }
    }
    let n_window = ((spec.pulse_width_ms + spec.free_window_ms) * 1e-3 / dt).round() as usize + 1;
    let pulse_n = (spec.pulse_width_ms * 1e-3 / dt).round() as usize;
    let results = crate::par::map(&jobs, |&(index, level, cycle, phase, direction, t)| -> Result<PerturbationEvent, SysidError> {
        let k = (t / dt).round() as usize;
        if k >= times.len() {
            return Err(SysidError::Invalid(format!("event at {t} s is past the plan")));
        }
        let s = states[k];
        let (m_f, m_e) = (mf.at(times[k]), me.at(times[k]));
        let force = direction as f64 * spec.pulse_torque_nm / plant.physics.rp_m;
        let fe = Signal::uniform(0.0, dt, (0..n_window).map(|i| if i < pulse_n { force } else { 0.0 }).collect());
        let tr = plant.simulate_uniform(
            [s[0] * 1e-3, s[1] * 1e-3],
            &Signal::constant(m_f),
            &Signal::constant(m_e),
            &fe,
            (n_window - 1) as f64 * dt,
            dt,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(crate::plant::trial_seed(spec.seed, index));
        let noise = Normal::new(0.0, spec.sigma_x_mm.max(0.0)).map_err(|e| SysidError::Invalid(e.to_string()))?;
        let x: Vec<f64> = tr.states.iter().map(|st| st[0] * 1e3 + if spec.sigma_x_mm > 0.0 { noise.sample(&mut rng) } else { 0.0 }).collect();
        let j = ((t - profile.t_s[0]) / profile.dt()).round() as usize;
        let reference = SmdReference { x_d_mm: profile.x_mm[j], xdot0_mm_s: profile.xdot_mm_s[j], xddot0_mm_s2: profile.xddot_mm_s2[j] };
        let fit = identify_smd(&x, s[1], &fe, m_kg, &reference, dt, opts)?;
        Ok(PerturbationEvent { index, level, cycle, phase, direction, t_s: t, k_d: profile.k_n_per_mm[j], x_mm: s[0], xdot_mm_s: s[1], fit })
    });
    results.into_iter().collect()
}

/// Per-level summary of zero- versus peak-velocity stiffness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelComparison {
    pub level: usize,
    pub k_d: f64,
    pub k_zero_mean: f64,
    pub k_zero_sd: f64,
    pub k_vmax_mean: f64,
    pub k_vmax_sd: f64,
    pub k_all_mean: f64,
    pub delta_pct: f64,
    /// `None` when fewer than two pairs survive the fit-quality filter.
    pub t_test: Option<TTest>,
    pub n_poor_fit: usize,
}

impl LevelComparison {
    /// Two-sided p of the velocity effect; NaN without a test.
    pub fn p_value(&self) -> f64 {
        self.t_test.map_or(f64::NAN, |t| t.p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StiffnessComparison {
    pub model: String,
    pub levels: Vec<LevelComparison>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (m, sd)
}

/// Pairs each at-rest event with the moving event a quarter cycle later
/// (same cycle and direction) and summarizes each level. Pairs with a poor
/// fit on either side are dropped.
pub fn compare_velocity(model: &str, events: &[PerturbationEvent]) -> Result<StiffnessComparison, SysidError> {
    let mut levels = Vec::new();
    let n_levels = events.iter().map(|e| e.level + 1).max().unwrap_or(0);
    for level in 0..n_levels {
        let ev: Vec<&PerturbationEvent> = events.iter().filter(|e| e.level == level).collect();
        let mut zero = Vec::new();
        let mut vmax = Vec::new();
        for a in ev.iter().filter(|e| e.phase.at_rest()) {
            let partner = match a.phase {
                Phase::Trough => Phase::CenterRising,
                _ => Phase::CenterFalling,
            };
            if let Some(b) = ev.iter().find(|e| e.cycle == a.cycle && e.direction == a.direction && e.phase == partner) {
                if a.fit.poor_fit || b.fit.poor_fit {
                    continue;
                }
                zero.push(a.fit.k_n_mm);
                vmax.push(b.fit.k_n_mm);
            }
        }
        let (zm, zs) = mean_sd(&zero);
        let (vm, vs) = mean_sd(&vmax);
        let all: Vec<f64> = ev.iter().filter(|e| !e.fit.poor_fit).map(|e| e.fit.k_n_mm).collect();
        levels.push(LevelComparison {
            level,
            k_d: ev.first().map(|e| e.k_d).unwrap_or(f64::NAN),
            k_zero_mean: zm,
            k_zero_sd: zs,
            k_vmax_mean: vm,
            k_vmax_sd: vs,
            k_all_mean: mean_sd(&all).0,
            delta_pct: delta_metric(zm, vm),
            t_test: if zero.len() >= 2 { Some(paired_t_test(&zero, &vmax)?) } else { None },
            n_poor_fit: ev.iter().filter(|e| e.fit.poor_fit).count(),
        });
    }
    Ok(StiffnessComparison { model: model.to_string(), levels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_examples() {
        let m = [1.0, 2.0, 4.0, 3.0];
        assert_eq!(r2(&m, &m).unwrap(), 1.0);
        assert!(r2(&[2.5; 4], &m).unwrap().abs() < 1e-15);
        assert!(matches!(r2(&[1.0; 3], &[2.0; 3]), Err(SysidError::ZeroVariance)));
        let p = [1.1, 2.2, 3.7, 3.1];
        let scaled = |v: &[f64]| v.iter().map(|x| 3.0 * x - 7.0).collect::<Vec<f64>>();
        assert!((r2(&p, &m).unwrap() - r2(&scaled(&p), &scaled(&m)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn delta_examples() {
        assert!((delta_metric(139.54, 140.07) - 1.06).abs() < 0.005);
        assert!((delta_metric(149.71, 143.89) - 11.64).abs() < 0.005);
        assert_eq!(delta_metric(150.0, 150.0), 0.0);
    }

    #[test]
    fn t_test_examples() {
        let a = [3.0, 5.0, 7.0, 9.0, 11.0];
        let b = [2.0, 3.0, 4.0, 5.0, 6.0];
        let t = paired_t_test(&a, &b).unwrap();
        assert!((t.t - 4.2426).abs() < 1e-3, "{t:?}");
        assert!((t.p - 0.0132).abs() < 5e-4, "{t:?}");
        let same = paired_t_test(&a, &a).unwrap();
        assert_eq!((same.t, same.p), (0.0, 1.0));
        assert!(matches!(paired_t_test(&a, &[2.0, 4.0, 6.0, 8.0, 10.0]), Err(SysidError::ZeroVariance)));
    }

    #[test]
    fn delay_examples() {
        let s: Vec<f64> = (0..3000).map(|i| (2.0 * std::f64::consts::PI * 1.3 * i as f64 * 1e-3).sin()).collect();
        assert_eq!(align_delay(&s, &s, 100.0, 1000.0), 0.0);
        let mut d = vec![0.0; 40];
        d.extend_from_slice(&s[..s.len() - 40]);
        assert!((align_delay(&s, &d, 100.0, 1000.0) - 40.0).abs() <= 1.0);
    }

    #[test]
    fn tracking_examples() {
        let t: Vec<f64> = (0..200).map(|i| i as f64 * 0.01).collect();
        let d: Vec<f64> = t.iter().map(|v| v.sin()).collect();
        let z = tracking_metrics(&t, &d, &d, 1.0).unwrap();
        assert_eq!((z.rms_mm, z.max_mm), (0.0, 0.0));
        assert_eq!(z.per_cycle_rms_mm.len(), 2);
        let a: Vec<f64> = d.iter().map(|v| v + 0.1).collect();
        let o = tracking_metrics(&t, &d, &a, 1.0).unwrap();
        assert!((o.rms_mm - 0.1).abs() < 1e-12 && (o.max_mm - 0.1).abs() < 1e-12);
    }

    fn pulse(force: f64, n: usize) -> Signal {
        Signal::uniform(0.0, 1e-3, (0..n).map(|i| if i < 150 { force } else { 0.0 }).collect())
    }

    #[test]
    fn smd_self_consistency() {
        let r = SmdReference { x_d_mm: 0.3, xdot0_mm_s: 0.0, xddot0_mm_s2: 0.0 };
        let fe = pulse(66.8, 751);
        let x = smd_response(150.0, 0.3, 253.0, &r, [0.3, 0.0], &fe, 1e-3, 751);
        let fit = identify_smd(&x, 0.0, &fe, 253.0, &r, 1e-3, &SmdOptions::default()).unwrap();
        assert!((fit.k_n_mm - 150.0).abs() < 1.5, "{fit:?}");
        assert!((fit.b_n_s_mm - 0.3).abs() < 0.015, "{fit:?}");
        assert!(!fit.poor_fit);
    }

    #[test]
    fn unexcited_response_is_poor_fit() {
        let r = SmdReference { x_d_mm: 0.0, xdot0_mm_s: 0.0, xddot0_mm_s2: 0.0 };
        let fit = identify_smd(&[0.0; 751], 0.0, &pulse(0.0, 751), 253.0, &r, 1e-3, &SmdOptions::default()).unwrap();
        assert!(fit.poor_fit);
    }
}
