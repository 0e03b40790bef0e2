//! Chamber geometry, isothermal gas law and pressure dynamics of the two
//! muscles. SI units throughout; pressures are absolute.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Atmospheric pressure, Pa.
pub const P_ATM: f64 = 101_325.0;
/// Pascals per psi.
pub const PSI: f64 = 6_894.757_293_168;

/// Nominal hardware constants.
pub mod nominal {
    /// Muscle radius at rest, m.
    pub const R0: f64 = 5.0e-3;
    /// Muscle length at rest, m.
    pub const L0: f64 = 0.2;
    /// Pulley radius, m.
    pub const RP: f64 = 6.875e-3;
    /// Joint-side rotational inertia, kg·m².
    pub const INERTIA: f64 = 1.2e-2;
    /// Braid angle, degrees.
    pub const BRAID_DEG: f64 = 25.0;
    /// Universal gas constant, J/(mol·K).
    pub const R_GAS: f64 = 8.314;
    /// Air temperature, K.
    pub const TEMPERATURE: f64 = 295.15;
    /// Molar mass of air, kg/mol.
    pub const M_AIR: f64 = 2.897e-2;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("displacement {x} m outside the valid range |x| < {limit} m")]
    OutOfRange { x: f64, limit: f64 },
    #[error("nonphysical value: {0}")]
    Nonphysical(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Pulls toward +x; shortens as x grows.
    Flexor,
    Extensor,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Flexor => 1.0,
            Side::Extensor => -1.0,
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Positive physics constants stored through their softplus pre-images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    pub raw_m: f64,
    pub raw_c: f64,
    pub raw_nu: f64,
    pub r0_m: f64,
    pub l0_m: f64,
    pub rp_m: f64,
}

/// Volume and its partial derivatives for one chamber at one displacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeTerms {
    pub v: f64,
    pub v_x: f64,
    pub v_xx: f64,
    pub v_nu: f64,
    pub v_xnu: f64,
}

impl PhysicalParams {
    pub fn from_values(m: f64, c: f64, nu: f64, r0: f64, l0: f64, rp: f64) -> Self {
        Self { raw_m: softplus_inv(m), raw_c: softplus_inv(c), raw_nu: softplus_inv(nu), r0_m: r0, l0_m: l0, rp_m: rp }
    }

    /// Equivalent linear mass, kg.
    pub fn m(&self) -> f64 {
        softplus(self.raw_m)
    }

    /// Gas coefficient `R·T/M_air`, m²/s².
    pub fn c(&self) -> f64 {
        softplus(self.raw_c)
    }

    /// Braid deformation coefficient.
    pub fn nu(&self) -> f64 {
        softplus(self.raw_nu)
    }

    /// Largest admissible |x|, where one radius reaches zero.
    pub fn x_limit(&self) -> f64 {
        (self.l0_m / self.nu()).min(self.l0_m)
    }

    pub fn check_range(&self, x: f64) -> Result<(), PhysicsError> {
        let limit = self.x_limit();
        if x.is_finite() && x.abs() < limit {
            Ok(())
        } else {
            Err(PhysicsError::OutOfRange { x, limit })
        }
    }

    pub fn radius(&self, side: Side, x: f64) -> Result<f64, PhysicsError> {
        self.check_range(x)?;
        Ok(self.r0_m * (1.0 + side.sign() * self.nu() * x / self.l0_m))
    }

    pub fn volume(&self, side: Side, x: f64) -> Result<f64, PhysicsError> {
        self.check_range(x)?;
        Ok(self.volume_terms(side, x).v)
    }

    pub fn volume_rate(&self, side: Side, x: f64, xdot: f64) -> Result<f64, PhysicsError> {
        self.check_range(x)?;
        Ok(self.volume_terms(side, x).v_x * xdot)
    }

    /// Unchecked volume terms for the integrator's inner loop.
    pub fn volume_terms(&self, side: Side, x: f64) -> VolumeTerms {
        let s = side.sign();
        let nu = self.nu();
        let l0 = self.l0_m;
        let k = PI * self.r0_m * self.r0_m;
        let g = 1.0 + s * nu * x / l0;
        let len = l0 - s * x;
        let u_nu = s * x / l0;
        VolumeTerms {
            v: k * g * g * len,
            v_x: k * (2.0 * g * s * nu / l0 * len - s * g * g),
            v_xx: k * (2.0 * nu * nu / (l0 * l0) * len - 4.0 * g * nu / l0),
            v_nu: k * 2.0 * g * u_nu * len,
            v_xnu: k * (2.0 * u_nu * s * nu / l0 * len + 2.0 * g * s / l0 * len - 2.0 * s * g * u_nu),
        }
    }

    pub fn pressure_from_mass(&self, side: Side, mass: f64, x: f64) -> Result<f64, PhysicsError> {
        if !(mass > 0.0) {
            return Err(PhysicsError::Nonphysical("chamber mass must be positive"));
        }
        Ok(self.c() * mass / self.volume(side, x)?)
    }

    pub fn mass_from_pressure(&self, side: Side, p: f64, x: f64) -> Result<f64, PhysicsError> {
        if !(p > 0.0) {
            return Err(PhysicsError::Nonphysical("absolute pressure must be positive"));
        }
        Ok(p * self.volume(side, x)? / self.c())
    }

    /// `Ṗ = C(ṁ/V − m·V̇/V²)`.
    pub fn pressure_rate(&self, side: Side, mass: f64, mdot: f64, x: f64, xdot: f64) -> Result<f64, PhysicsError> {
        self.check_range(x)?;
        let vt = self.volume_terms(side, x);
        Ok(self.c() * (mdot / vt.v - mass * vt.v_x * xdot / (vt.v * vt.v)))
    }
}

/// Parameters at their nominal values: `m = I/r_p²`, `C = R·T/M_air`,
/// `ν = cot²(braid angle)`.
pub fn init_params() -> PhysicalParams {
    use nominal::*;
    let cot = 1.0 / BRAID_DEG.to_radians().tan();
    PhysicalParams::from_values(INERTIA / (RP * RP), R_GAS * TEMPERATURE / M_AIR, cot * cot, R0, L0, RP)
}
