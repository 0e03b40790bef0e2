//! Synthetic ground-truth joint: analytical braided-muscle forces, viscous
//! and tanh hysteresis losses, sealed chambers. Stands in for the rig.

mod dataset;
mod excitation;
mod masses;

pub use dataset::{generate_dataset, generate_grid, trial_seed, Channels, DatasetMeta, GridSpec, NoiseSpec, TrajectoryDataset};
pub use excitation::{Excitation, Pulse, TORQUE_PER_AMP};
pub use masses::{bench_sweep, default_sweep, estimate_masses, fit_force_surfaces, ForceSurfaces, MassEstimate, Poly2, SweepData, SweepPoint};

use crate::hybrid::Signal;
use crate::numerics::{integrate, Method, OdeError, OdeSolveSpec, Trajectory, VectorField};
use crate::physics::{init_params, nominal, PhysicalParams, PhysicsError, Side, P_ATM};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlantError {
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("no equilibrium inside ±{0} m")]
    NoEquilibrium(f64),
    #[error("torque signal never crosses zero")]
    NoCrossings,
    #[error("surface fit failed: {0}")]
    Fit(#[from] crate::numerics::LstsqError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPlant {
    pub physics: PhysicalParams,
    pub braid_deg: f64,
    /// Multiplier on the single-muscle static force (muscle count per side).
    pub force_gain: f64,
    pub viscous_n_s_per_m: f64,
    /// Saturated hysteresis force per muscle, N.
    pub hysteresis_n: f64,
    pub v_ref_m_s: f64,
}

impl Default for SyntheticPlant {
    fn default() -> Self {
        Self {
            physics: init_params(),
            braid_deg: nominal::BRAID_DEG,
            force_gain: 5.0,
            viscous_n_s_per_m: 1000.0,
            hysteresis_n: 8.0,
            v_ref_m_s: 2e-3,
        }
    }
}

impl SyntheticPlant {
    /// `3/tan²θ`.
    pub fn coef_a(&self) -> f64 {
        let t = self.braid_deg.to_radians().tan();
        3.0 / (t * t)
    }

    /// `1/sin²θ`.
    pub fn coef_b(&self) -> f64 {
        let s = self.braid_deg.to_radians().sin();
        1.0 / (s * s)
    }

    /// Force of one muscle along +x: static braided-muscle law at contraction
    /// `ε = ±x/L0` plus its hysteresis loss. Negative gauge pressure exerts no force.
    pub fn plant_force(&self, side: Side, p_gauge: f64, x: f64, xdot: f64) -> f64 {
        let s = side.sign();
        let p = &self.physics;
        let eps = s * x / p.l0_m;
        let stat = std::f64::consts::PI * p.r0_m * p.r0_m * p_gauge.max(0.0) * (self.coef_a() * (1.0 - eps) * (1.0 - eps) - self.coef_b());
        s * self.force_gain * stat - self.hysteresis(xdot)
    }

    fn hysteresis(&self, xdot: f64) -> f64 {
        if self.hysteresis_n == 0.0 {
            0.0
        } else {
            self.hysteresis_n * (xdot / self.v_ref_m_s).tanh()
        }
    }

    /// Gauge pressure of a sealed chamber holding `mass` at `x`.
    pub fn gauge_pressure(&self, side: Side, mass: f64, x: f64) -> f64 {
        let vt = self.physics.volume_terms(side, x);
        self.physics.c() * mass / vt.v - P_ATM
    }

    /// Net joint force of both sealed muscles and the viscous loss, N.
    pub fn joint_force(&self, x: f64, xdot: f64, m_f: f64, m_e: f64) -> f64 {
        self.plant_force(Side::Flexor, self.gauge_pressure(Side::Flexor, m_f, x), x, xdot)
            + self.plant_force(Side::Extensor, self.gauge_pressure(Side::Extensor, m_e, x), x, xdot)
            - self.viscous_n_s_per_m * xdot
    }

    /// Rest position of the sealed joint, by bisection on the static joint
    /// force (which decreases in x).
    pub fn equilibrium_sealed(&self, m_f: f64, m_e: f64) -> Result<f64, PlantError> {
        let lim = 0.9 * self.physics.x_limit();
        bisect(|x| self.joint_force(x, 0.0, m_f, m_e), lim).ok_or(PlantError::NoEquilibrium(lim))
    }

    /// Chambers sealed at the commanded gauge pressures in the centered
    /// configuration; returns the sealed rest position and the masses `(x₀, m_f, m_e)`.
    pub fn masses_for_pressures(&self, pf_gauge: f64, pe_gauge: f64) -> Result<(f64, f64, f64), PlantError> {
        let m_f = self.physics.mass_from_pressure(Side::Flexor, pf_gauge + P_ATM, 0.0)?;
        let m_e = self.physics.mass_from_pressure(Side::Extensor, pe_gauge + P_ATM, 0.0)?;
        Ok((self.equilibrium_sealed(m_f, m_e)?, m_f, m_e))
    }

    /// Local stiffness `−∂F/∂x` at rest, N/m (central difference).
    pub fn stiffness(&self, x: f64, m_f: f64, m_e: f64) -> f64 {
        let h = 1e-6;
        -(self.joint_force(x + h, 0.0, m_f, m_e) - self.joint_force(x - h, 0.0, m_f, m_e)) / (2.0 * h)
    }

    /// Integrates `[x, ẋ]` under the external force signal with constant
    /// (or scheduled) masses.
    pub fn simulate(&self, x0: [f64; 2], m_f: &Signal, m_e: &Signal, fe: &Signal, spec: &OdeSolveSpec) -> Result<Trajectory, PlantError> {
        let field = PlantField { plant: self, m_f, m_e, fe };
        Ok(integrate(&field, &x0, spec)?)
    }

    /// Integrates on a uniform grid of `dt` over `[0, duration]`.
    pub fn simulate_uniform(&self, x0: [f64; 2], m_f: &Signal, m_e: &Signal, fe: &Signal, duration: f64, dt: f64) -> Result<Trajectory, PlantError> {
        let spec = OdeSolveSpec::uniform(0.0, duration, dt, dt, Method::Tsit5)?;
        self.simulate(x0, m_f, m_e, fe, &spec)
    }

    /// Short hex digest of the plant parameters.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("plant serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

struct PlantField<'a> {
    plant: &'a SyntheticPlant,
    m_f: &'a Signal,
    m_e: &'a Signal,
    fe: &'a Signal,
}

impl VectorField for PlantField<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let f = self.plant.joint_force(y[0], y[1], self.m_f.at(t), self.m_e.at(t));
        dy[0] = y[1];
        dy[1] = (self.fe.at(t) + f) / self.plant.physics.m();
    }
}

/// Root of a decreasing function on `[−lim, lim]`.
pub(crate) fn bisect(f: impl Fn(f64) -> f64, lim: f64) -> Option<f64> {
    let (mut lo, mut hi) = (-lim, lim);
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo >= 0.0 && fhi <= 0.0) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}
