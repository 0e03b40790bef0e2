//! External torque programs applied through the pulley.

use crate::hybrid::Signal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pulse {
    pub onset_s: f64,
    pub torque_nm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Excitation {
    Sinusoid { frequency_hz: f64, torque_nm: f64, duration_s: f64 },
    SquarePulse { onset_s: f64, torque_nm: f64, pulse_width_ms: f64, duration_s: f64 },
    PerturbationSchedule { pulses: Vec<Pulse>, pulse_width_ms: f64, duration_s: f64 },
}

/// Training-style frequencies, Hz.
pub const TRAINING_FREQUENCIES_HZ: [f64; 3] = [0.5, 1.0, 2.0];
/// Torques for 1 A and 1.5 A motor current, N·m.
pub const TRAINING_TORQUES_NM: [f64; 2] = [0.918, 1.377];
/// Motor torque per ampere, N·m/A.
pub const TORQUE_PER_AMP: f64 = 0.918;

impl Excitation {
    pub fn duration_s(&self) -> f64 {
        match *self {
            Excitation::Sinusoid { duration_s, .. }
            | Excitation::SquarePulse { duration_s, .. }
            | Excitation::PerturbationSchedule { duration_s, .. } => duration_s,
        }
    }

    /// Torque at time `t`, N·m.
    pub fn torque(&self, t: f64) -> f64 {
        match self {
            Excitation::Sinusoid { frequency_hz, torque_nm, .. } => torque_nm * (2.0 * std::f64::consts::PI * frequency_hz * t).sin(),
            Excitation::SquarePulse { onset_s, torque_nm, pulse_width_ms, .. } => {
                if t >= *onset_s && t < onset_s + pulse_width_ms * 1e-3 {
                    *torque_nm
                } else {
                    0.0
                }
            }
            Excitation::PerturbationSchedule { pulses, pulse_width_ms, .. } => pulses
                .iter()
                .filter(|p| t >= p.onset_s && t < p.onset_s + pulse_width_ms * 1e-3)
                .map(|p| p.torque_nm)
                .sum(),
        }
    }

    /// Joint force `τ/r_p` sampled every `dt` over the duration.
    pub fn force_signal(&self, rp_m: f64, dt: f64) -> Signal {
        let n = (self.duration_s() / dt).round() as usize;
        Signal::uniform(0.0, dt, (0..=n).map(|i| self.torque(i as f64 * dt) / rp_m).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pulse_force_amplitude() {
        // Half-amp pulse through the pulley.
        let e = Excitation::SquarePulse { onset_s: 0.1, torque_nm: 0.5 * TORQUE_PER_AMP, pulse_width_ms: 150.0, duration_s: 1.0 };
        let s = e.force_signal(6.875e-3, 1e-3);
        assert!((s.at(0.15) - 66.76).abs() < 0.01, "{}", s.at(0.15));
        assert_eq!(s.at(0.05), 0.0);
        assert_eq!(s.at(0.2505), 0.0);
    }

    #[test]
    fn sinusoid_starts_at_zero() {
        let e = Excitation::Sinusoid { frequency_hz: 2.0, torque_nm: 0.918, duration_s: 2.0 };
        let s = e.force_signal(6.875e-3, 1e-3);
        assert_eq!(s.values().len(), 2001);
        assert_eq!(s.at(0.0), 0.0);
        assert!((s.at(0.125) - 0.918 / 6.875e-3).abs() < 1e-9);
    }

    #[test]
    fn json_shape() {
        let e = Excitation::Sinusoid { frequency_hz: 1.0, torque_nm: 1.377, duration_s: 4.0 };
        let s = serde_json::to_string(&e).unwrap();
        assert!(s.contains("\"kind\":\"sinusoid\""));
        assert_eq!(serde_json::from_str::<Excitation>(&s).unwrap(), e);
        assert!(serde_json::from_str::<Excitation>(r#"{"kind":"sinusoid","frequency_hz":1,"torque_nm":1,"duration_s":1,"x":2}"#).is_err());
    }
}
