//! Feedforward synthesis of chamber masses for desired motion and stiffness,
//! and the linear equilibrium-point baseline.

use crate::hybrid::{HybridModel, Signal};
use crate::numerics::{direct_search_then_refine_with, lstsq, LstsqError, SearchOptions};
use crate::physics::{PhysicalParams, PhysicsError, Side, P_ATM};
use crate::plant::SyntheticPlant;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("rank deficient fit: {0}")]
    RankDeficient(#[from] LstsqError),
    #[error("singular equilibrium-point coefficients")]
    Singular,
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("no equilibrium for masses ({0} g, {1} g)")]
    NoEquilibrium(f64, f64),
    #[error("csv: {0}")]
    Csv(String),
}

/// Anything that maps state and masses to joint force, in N from mm, mm/s, g.
pub trait ForceMap: Sync {
    fn force_n(&self, x_mm: f64, xdot_mm_s: f64, mf_g: f64, me_g: f64) -> f64;
    /// Geometry and gas law used to turn masses into pressures.
    fn physics(&self) -> &PhysicalParams;
    /// Mass that multiplies the desired acceleration, kg.
    fn inertia_kg(&self) -> f64 {
        self.physics().m()
    }
}

impl ForceMap for HybridModel {
    fn force_n(&self, x_mm: f64, xdot_mm_s: f64, mf_g: f64, me_g: f64) -> f64 {
        self.force(x_mm, xdot_mm_s, mf_g, me_g)
    }

    fn physics(&self) -> &PhysicalParams {
        &self.params
    }
}

/// The plant's own force law, as a planning oracle.
impl ForceMap for SyntheticPlant {
    fn force_n(&self, x_mm: f64, xdot_mm_s: f64, mf_g: f64, me_g: f64) -> f64 {
        self.joint_force(x_mm * 1e-3, xdot_mm_s * 1e-3, mf_g * 1e-3, me_g * 1e-3)
    }

    fn physics(&self) -> &PhysicalParams {
        &self.physics
    }
}

/// `K_q = K·1000·r_p²`: N/mm through a pulley of radius `r_p` (m) to N·m/rad.
pub fn convert_stiffness(k_n_per_mm: f64, rp_m: f64) -> f64 {
    k_n_per_mm * 1000.0 * rp_m * rp_m
}

/// Four-point slope `(f(x+2h) + f(x+h) − f(x−h) − f(x−2h)) / 6h`.
pub fn stencil_slope(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + 2.0 * h) + f(x + h) - f(x - h) - f(x - 2.0 * h)) / (6.0 * h)
}

/// Restoring stiffness `−∂f_θ/∂x` in N/mm from the stencil, inputs in file units.
pub fn stiffness_fd<M: ForceMap + ?Sized>(model: &M, x_mm: f64, xdot_mm_s: f64, mf_g: f64, me_g: f64, h_mm: f64) -> Result<f64, PlanError> {
    if !(h_mm > 0.0) {
        return Err(PlanError::Profile(format!("stencil step must be positive, got {h_mm}")));
    }
    model.physics().check_range((x_mm - 2.0 * h_mm) * 1e-3)?;
    model.physics().check_range((x_mm + 2.0 * h_mm) * 1e-3)?;
    Ok(-stencil_slope(|x| model.force_n(x, xdot_mm_s, mf_g, me_g), x_mm, h_mm))
}

/// Desired trajectory and stiffness on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesiredProfile {
    pub t_s: Vec<f64>,
    pub x_mm: Vec<f64>,
    pub xdot_mm_s: Vec<f64>,
    pub xddot_mm_s2: Vec<f64>,
    pub k_n_per_mm: Vec<f64>,
}

impl DesiredProfile {
    /// `x_d = c − A·cos(2πft)` (starting at rest in the trough) with `K_d` stepping through `levels`, each held
    /// for `cycles_per_level` periods.
    pub fn stepped_sinusoid(amplitude_mm: f64, frequency_hz: f64, center_mm: f64, levels: &[f64], cycles_per_level: usize, dt_s: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI * frequency_hz;
        let hold = cycles_per_level as f64 / frequency_hz;
        let n = (levels.len() as f64 * hold / dt_s).round() as usize;
        let mut p = Self::empty();
        for i in 0..=n {
            let t = i as f64 * dt_s;
            p.t_s.push(t);
            p.x_mm.push(center_mm - amplitude_mm * (w * t).cos());
            p.xdot_mm_s.push(amplitude_mm * w * (w * t).sin());
            p.xddot_mm_s2.push(amplitude_mm * w * w * (w * t).cos());
            let k = ((t / hold + 1e-9).floor() as usize).min(levels.len() - 1);
            p.k_n_per_mm.push(levels[k]);
        }
        p
    }

    /// Stationary pose with `K_d` stepping through `levels`, `hold_s` each.
    pub fn held_pose(x_mm: f64, levels: &[f64], hold_s: f64, dt_s: f64) -> Self {
        let n = (levels.len() as f64 * hold_s / dt_s).round() as usize;
        let mut p = Self::empty();
        for i in 0..=n {
            let t = i as f64 * dt_s;
            p.t_s.push(t);
            p.x_mm.push(x_mm);
            p.xdot_mm_s.push(0.0);
            p.xddot_mm_s2.push(0.0);
            p.k_n_per_mm.push(levels[((t / hold_s + 1e-9).floor() as usize).min(levels.len() - 1)]);
        }
        p
    }

    fn empty() -> Self {
        Self { t_s: Vec::new(), x_mm: Vec::new(), xdot_mm_s: Vec::new(), xddot_mm_s2: Vec::new(), k_n_per_mm: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.t_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_s.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.t_s[1] - self.t_s[0]
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let n = self.len();
        if n < 2 {
            return Err(PlanError::Profile("need at least two samples".into()));
        }
        if [self.x_mm.len(), self.xdot_mm_s.len(), self.xddot_mm_s2.len(), self.k_n_per_mm.len()].iter().any(|&l| l != n) {
            return Err(PlanError::Profile("column lengths differ".into()));
        }
        let dt = self.dt();
        if !(dt > 0.0) || self.t_s.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0)) {
            return Err(PlanError::Profile("time grid must be uniform and increasing".into()));
        }
        let cols = [&self.t_s, &self.x_mm, &self.xdot_mm_s, &self.xddot_mm_s2, &self.k_n_per_mm];
        if cols.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(PlanError::Profile("non-finite sample".into()));
        }
        Ok(())
    }

    /// Largest central-difference mismatch of `ẋ_d` and `ẍ_d`, relative to
    /// each channel's peak magnitude.
    pub fn kinematic_mismatch(&self) -> f64 {
        let dt = self.dt();
        let rel = |v: &[f64], d: &[f64]| {
            let peak = d.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-12);
            (1..v.len() - 1).map(|i| ((v[i + 1] - v[i - 1]) / (2.0 * dt) - d[i]).abs() / peak).fold(0.0, f64::max)
        };
        rel(&self.x_mm, &self.xdot_mm_s).max(rel(&self.xdot_mm_s, &self.xddot_mm_s2))
    }
}

/// Box on the planned masses, grams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassBounds {
    pub mf_g: (f64, f64),
    pub me_g: (f64, f64),
}

impl MassBounds {
    /// Hull of the given mass pairs widened by `margin` (0.1 → ±10%).
    pub fn from_pairs(pairs: &[(f64, f64)], margin: f64) -> Self {
        let hull = |v: &mut dyn Iterator<Item = f64>| {
            v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| (lo.min(m), hi.max(m)))
        };
        let f = hull(&mut pairs.iter().map(|p| p.0));
        let e = hull(&mut pairs.iter().map(|p| p.1));
        Self { mf_g: (f.0 * (1.0 - margin), f.1 * (1.0 + margin)), me_g: (e.0 * (1.0 - margin), e.1 * (1.0 + margin)) }
    }

    fn as_box(&self) -> [(f64, f64); 2] {
        [self.mf_g, self.me_g]
    }

    fn clamp(&self, p: [f64; 2]) -> [f64; 2] {
        [p[0].clamp(self.mf_g.0, self.mf_g.1), p[1].clamp(self.me_g.0, self.me_g.1)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanOptions {
    pub h_mm: f64,
    /// Force-balance tolerance, N.
    pub eps_n: f64,
    pub penalty: f64,
    /// Residual above which a step is infeasible, N.
    pub infeasible_residual_n: f64,
    /// Relative stiffness miss above which a step is infeasible.
    pub stiffness_tol: f64,
    pub cold_search: SearchOptions,
    pub warm_search: SearchOptions,
    pub newton_iters: usize,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            h_mm: 0.1,
            eps_n: 1e-6,
            penalty: 1e6,
            infeasible_residual_n: 0.1,
            stiffness_tol: 0.02,
            cold_search: SearchOptions { grid: 9, starts: 3, max_evals: 3000, ..SearchOptions::default() },
            warm_search: SearchOptions { grid: 0, starts: 1, initial_step: 0.01, max_evals: 200, ..SearchOptions::default() },
            newton_iters: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub mf_g: f64,
    pub me_g: f64,
    pub k_hat: f64,
    pub residual_n: f64,
    pub feasible: bool,
}

/// Minimizes `(K̂ − K_d)² + λ·max(0, |m·ẍ_d − f_θ| − ε)²` over the mass box,
/// then polishes the two-equation system by Newton's method.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_step<M: ForceMap + ?Sized>(
    model: &M,
    x_mm: f64,
    xdot_mm_s: f64,
    xddot_mm_s2: f64,
    k_d: f64,
    bounds: &MassBounds,
    warm: Option<[f64; 2]>,
    opts: &PlanOptions,
) -> Result<StepResult, PlanError> {
    model.physics().check_range((x_mm - 2.0 * opts.h_mm) * 1e-3)?;
    model.physics().check_range((x_mm + 2.0 * opts.h_mm) * 1e-3)?;
    let inertial = model.inertia_kg() * xddot_mm_s2 * 1e-3;
    let eval = |p: [f64; 2]| {
        let k = -stencil_slope(|x| model.force_n(x, xdot_mm_s, p[0], p[1]), x_mm, opts.h_mm);
        let r = inertial - model.force_n(x_mm, xdot_mm_s, p[0], p[1]);
        (k, r)
    };
    let objective = |p: [f64; 2]| {
        let (k, r) = eval(p);
        let v = (r.abs() - opts.eps_n).max(0.0);
        (k - k_d) * (k - k_d) + opts.penalty * v * v
    };
    let warm = warm.or_else(|| balance_scan(&eval, k_d, bounds, opts.cold_search.grid.max(2) * 5));
    let search = if warm.is_some() { &opts.warm_search } else { &opts.cold_search };
    let found = direct_search_then_refine_with(objective, bounds.as_box(), warm, search);
    let mut best = (found.point, found.value);

    // Newton on [r, K − K_d] with a forward-difference Jacobian.
    let mut p = best.0;
    for _ in 0..opts.newton_iters {
        let (k0, r0) = eval(p);
        let g = [r0, k0 - k_d];
        let d = [1e-6 * (bounds.mf_g.1 - bounds.mf_g.0), 1e-6 * (bounds.me_g.1 - bounds.me_g.0)];
        let (k1, r1) = eval([p[0] + d[0], p[1]]);
        let (k2, r2) = eval([p[0], p[1] + d[1]]);
        let j = [[(r1 - r0) / d[0], (r2 - r0) / d[1]], [(k1 - k0) / d[0], (k2 - k0) / d[1]]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if !det.is_finite() || det == 0.0 {
            break;
        }
        let step = [(j[1][1] * g[0] - j[0][1] * g[1]) / det, (-j[1][0] * g[0] + j[0][0] * g[1]) / det];
        let next = bounds.clamp([p[0] - step[0], p[1] - step[1]]);
        let v = objective(next);
        if !(v < best.1) {
            break;
        }
        best = (next, v);
        p = next;
    }
    let (k_hat, r) = eval(best.0);
    let residual_n = r.abs();
    let feasible = residual_n <= opts.infeasible_residual_n && (k_hat - k_d).abs() <= opts.stiffness_tol * k_d.abs();
    Ok(StepResult { mf_g: best.0[0], me_g: best.0[1], k_hat, residual_n, feasible })
}

/// Walks the force-balance curve: for each flexor mass on an `n`-point grid,
/// bisects the extensor mass to zero residual and keeps the point whose
/// stiffness is closest to `k_d`.
fn balance_scan(eval: &impl Fn([f64; 2]) -> (f64, f64), k_d: f64, bounds: &MassBounds, n: usize) -> Option<[f64; 2]> {
    let (lo, hi) = bounds.me_g;
    let mut best: Option<([f64; 2], f64)> = None;
    for i in 0..n {
        let mf = bounds.mf_g.0 + (bounds.mf_g.1 - bounds.mf_g.0) * i as f64 / (n - 1) as f64;
        let r = |me: f64| eval([mf, me]).1;
        let (mut a, mut b) = (lo, hi);
        let (ra, rb) = (r(a), r(b));
        if !(ra * rb <= 0.0) {
            continue;
        }
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if (r(m) <= 0.0) == (ra <= 0.0) {
                a = m;
            } else {
                b = m;
            }
        }
        let p = [mf, 0.5 * (a + b)];
        let miss = (eval(p).0 - k_d).abs();
        if best.map_or(true, |(_, v)| miss < v) {
            best = Some((p, miss));
        }
    }
    best.map(|(p, _)| p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub t_s: f64,
    pub xd_mm: f64,
    #[serde(rename = "Kd_N_mm")]
    pub kd_n_mm: f64,
    pub mf_g: f64,
    pub me_g: f64,
    #[serde(rename = "Khat_N_mm")]
    pub khat_n_mm: f64,
    #[serde(rename = "residual_N")]
    pub residual_n: f64,
    #[serde(rename = "Pf_kPa")]
    pub pf_kpa: f64,
    #[serde(rename = "Pe_kPa")]
    pub pe_kpa: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlanResult {
    pub rows: Vec<PlanRow>,
}

impl PlanResult {
    pub fn n_infeasible(&self) -> usize {
        self.rows.iter().filter(|r| !r.feasible).count()
    }

    pub fn dt(&self) -> f64 {
        self.rows[1].t_s - self.rows[0].t_s
    }

    /// Planned masses as SI signals on the plan's time grid.
    pub fn mass_signals(&self) -> (Signal, Signal) {
        let (t0, dt) = (self.rows[0].t_s, self.dt());
        (
            Signal::uniform(t0, dt, self.rows.iter().map(|r| r.mf_g * 1e-3).collect()),
            Signal::uniform(t0, dt, self.rows.iter().map(|r| r.me_g * 1e-3).collect()),
        )
    }

    pub fn to_csv(&self) -> Result<String, PlanError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| PlanError::Csv(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| PlanError::Csv(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| PlanError::Csv(e.to_string()))
    }

    pub fn from_csv(s: &str) -> Result<Self, PlanError> {
        let mut r = csv::Reader::from_reader(s.as_bytes());
        let rows = r.deserialize().collect::<Result<Vec<PlanRow>, _>>().map_err(|e| PlanError::Csv(e.to_string()))?;
        Ok(Self { rows })
    }
}

/// Gauge pressure in kPa of `m_g` grams sealed at `x_mm` under the model's gas law.
pub fn gauge_kpa<M: ForceMap + ?Sized>(model: &M, side: Side, m_g: f64, x_mm: f64) -> Result<f64, PlanError> {
    Ok((model.physics().pressure_from_mass(side, m_g * 1e-3, x_mm * 1e-3)? - P_ATM) * 1e-3)
}

/// Plans every sample in order, each warm-started from the previous one.
pub fn synthesize_profile<M: ForceMap + ?Sized>(model: &M, profile: &DesiredProfile, bounds: &MassBounds, opts: &PlanOptions) -> Result<PlanResult, PlanError> {
    profile.validate()?;
    let mut rows = Vec::with_capacity(profile.len());
    let mut warm = None;
    for i in 0..profile.len() {
        let s = synthesize_step(model, profile.x_mm[i], profile.xdot_mm_s[i], profile.xddot_mm_s2[i], profile.k_n_per_mm[i], bounds, warm, opts)?;
        warm = Some([s.mf_g, s.me_g]);
        rows.push(PlanRow {
            t_s: profile.t_s[i],
            xd_mm: profile.x_mm[i],
            kd_n_mm: profile.k_n_per_mm[i],
            mf_g: s.mf_g,
            me_g: s.me_g,
            khat_n_mm: s.k_hat,
            residual_n: s.residual_n,
            pf_kpa: gauge_kpa(model, Side::Flexor, s.mf_g, profile.x_mm[i])?,
            pe_kpa: gauge_kpa(model, Side::Extensor, s.me_g, profile.x_mm[i])?,
            feasible: s.feasible,
        });
    }
    Ok(PlanResult { rows })
}

/// Linear equilibrium-point law: `x₀ = α1(P_f − P_e) + α0`, `K = β1(P_f + P_e) + β0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpModel {
    pub alpha1_mm_per_kpa: f64,
    pub alpha0_mm: f64,
    pub beta1_n_mm_per_kpa: f64,
    pub beta0_n_mm: f64,
}

impl EpModel {
    pub fn equilibrium_mm(&self, pf_kpa: f64, pe_kpa: f64) -> f64 {
        self.alpha1_mm_per_kpa * (pf_kpa - pe_kpa) + self.alpha0_mm
    }

    pub fn stiffness(&self, pf_kpa: f64, pe_kpa: f64) -> f64 {
        self.beta1_n_mm_per_kpa * (pf_kpa + pe_kpa) + self.beta0_n_mm
    }
}

/// Equilibrium, stiffness and gauge pressures of one mass pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpPoint {
    pub pf_kpa: f64,
    pub pe_kpa: f64,
    pub x0_mm: f64,
    pub k_n_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpFit {
    pub ep: EpModel,
    pub r2_x0: f64,
    pub r2_k: f64,
    pub rms_x0_mm: f64,
    pub rms_k_n_mm: f64,
}

fn r2_of(pred: impl Iterator<Item = f64>, meas: &[f64]) -> f64 {
    let mean = meas.iter().sum::<f64>() / meas.len() as f64;
    let tot: f64 = meas.iter().map(|v| (v - mean) * (v - mean)).sum();
    let res: f64 = pred.zip(meas).map(|(p, m)| (p - m) * (p - m)).sum();
    1.0 - res / tot
}

/// Least-squares EP law through the given points.
pub fn fit_ep_points(points: &[EpPoint]) -> Result<EpFit, PlanError> {
    let rows_x: Vec<Vec<f64>> = points.iter().map(|p| vec![p.pf_kpa - p.pe_kpa, 1.0]).collect();
    let rows_k: Vec<Vec<f64>> = points.iter().map(|p| vec![p.pf_kpa + p.pe_kpa, 1.0]).collect();
    let x0: Vec<f64> = points.iter().map(|p| p.x0_mm).collect();
    let k: Vec<f64> = points.iter().map(|p| p.k_n_mm).collect();
    let fx = lstsq(&rows_x, &x0)?;
    let fk = lstsq(&rows_k, &k)?;
    let ep = EpModel { alpha1_mm_per_kpa: fx.coef[0], alpha0_mm: fx.coef[1], beta1_n_mm_per_kpa: fk.coef[0], beta0_n_mm: fk.coef[1] };
    Ok(EpFit {
        ep,
        r2_x0: r2_of(points.iter().map(|p| ep.equilibrium_mm(p.pf_kpa, p.pe_kpa)), &x0),
        r2_k: r2_of(points.iter().map(|p| ep.stiffness(p.pf_kpa, p.pe_kpa)), &k),
        rms_x0_mm: fx.rms,
        rms_k_n_mm: fk.rms,
    })
}

/// Rest position of the learned force at the given masses, by bisection over ±`lim_mm`.
pub fn model_equilibrium_mm<M: ForceMap + ?Sized>(model: &M, mf_g: f64, me_g: f64, lim_mm: f64) -> Option<f64> {
    crate::plant::bisect(|x| model.force_n(x, 0.0, mf_g, me_g), lim_mm)
}

/// Samples the trained model's equilibria and stiffnesses at `pairs` (grams)
/// and fits the EP law to them. Pairs without an equilibrium are skipped;
/// at least three points must remain.
pub fn fit_ep<M: ForceMap + ?Sized>(model: &M, pairs: &[(f64, f64)], h_mm: f64, lim_mm: f64) -> Result<(EpFit, Vec<EpPoint>), PlanError> {
    let mut pts = Vec::with_capacity(pairs.len());
    let mut missing = None;
    for &(mf, me) in pairs {
        let Some(x0) = model_equilibrium_mm(model, mf, me, lim_mm) else {
            missing.get_or_insert(PlanError::NoEquilibrium(mf, me));
            continue;
        };
        pts.push(EpPoint {
            pf_kpa: gauge_kpa(model, Side::Flexor, mf, x0)?,
            pe_kpa: gauge_kpa(model, Side::Extensor, me, x0)?,
            x0_mm: x0,
            k_n_mm: stiffness_fd(model, x0, 0.0, mf, me, h_mm)?,
        });
    }
    if pts.len() < 3 {
        return Err(missing.unwrap_or(PlanError::Singular));
    }
    Ok((fit_ep_points(&pts)?, pts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpCommand {
    pub pf_kpa: f64,
    pub pe_kpa: f64,
    pub clamped: bool,
}

/// Inverts the EP law for `(x₀_d, K_d)`, clamping to the gauge range.
pub fn ep_inverse(ep: &EpModel, x0_mm: f64, k_n_mm: f64, range_kpa: (f64, f64)) -> Result<EpCommand, PlanError> {
    if ep.alpha1_mm_per_kpa == 0.0 || ep.beta1_n_mm_per_kpa == 0.0 || !ep.alpha1_mm_per_kpa.is_finite() || !ep.beta1_n_mm_per_kpa.is_finite() {
        return Err(PlanError::Singular);
    }
    let sum = (k_n_mm - ep.beta0_n_mm) / ep.beta1_n_mm_per_kpa;
    let diff = (x0_mm - ep.alpha0_mm) / ep.alpha1_mm_per_kpa;
    let (pf, pe) = (0.5 * (sum + diff), 0.5 * (sum - diff));
    let (cf, ce) = (pf.clamp(range_kpa.0, range_kpa.1), pe.clamp(range_kpa.0, range_kpa.1));
    Ok(EpCommand { pf_kpa: cf, pe_kpa: ce, clamped: cf != pf || ce != pe })
}

/// Pressure plan from the EP law. `K̂` and the residual columns report what
/// `model` predicts for the commanded pressures.
pub fn ep_plan<M: ForceMap + ?Sized>(model: &M, ep: &EpModel, profile: &DesiredProfile, range_kpa: (f64, f64), h_mm: f64) -> Result<PlanResult, PlanError> {
    profile.validate()?;
    let phys = model.physics();
    let mut rows = Vec::with_capacity(profile.len());
    for i in 0..profile.len() {
        let x = profile.x_mm[i];
        let cmd = ep_inverse(ep, x, profile.k_n_per_mm[i], range_kpa)?;
        let mf_g = phys.mass_from_pressure(Side::Flexor, cmd.pf_kpa * 1e3 + P_ATM, x * 1e-3)? * 1e3;
        let me_g = phys.mass_from_pressure(Side::Extensor, cmd.pe_kpa * 1e3 + P_ATM, x * 1e-3)? * 1e3;
        let xdot = profile.xdot_mm_s[i];
        let k_hat = stiffness_fd(model, x, xdot, mf_g, me_g, h_mm)?;
        let residual_n = (model.inertia_kg() * profile.xddot_mm_s2[i] * 1e-3 - model.force_n(x, xdot, mf_g, me_g)).abs();
        rows.push(PlanRow {
            t_s: profile.t_s[i],
            xd_mm: x,
            kd_n_mm: profile.k_n_per_mm[i],
            mf_g,
            me_g,
            khat_n_mm: k_hat,
            residual_n,
            pf_kpa: cmd.pf_kpa,
            pe_kpa: cmd.pe_kpa,
            feasible: !cmd.clamped,
        });
    }
    Ok(PlanResult { rows })
}
