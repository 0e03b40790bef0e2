//! Trial synthesis over the co-contraction grid.

use super::excitation::{TRAINING_FREQUENCIES_HZ, TRAINING_TORQUES_NM};
use super::{Excitation, PlantError, SyntheticPlant};
use crate::hybrid::Signal;
use crate::physics::{Side, PSI};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const SAMPLE_RATE_HZ: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma_x_mm: f64,
    pub sigma_p_kpa: f64,
}

impl NoiseSpec {
    pub const NONE: NoiseSpec = NoiseSpec { sigma_x_mm: 0.0, sigma_p_kpa: 0.0 };
    pub const STANDARD: NoiseSpec = NoiseSpec { sigma_x_mm: 0.01, sigma_p_kpa: 0.5 };

    pub fn is_none(&self) -> bool {
        self.sigma_x_mm == 0.0 && self.sigma_p_kpa == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub pf_psi: f64,
    pub pe_psi: f64,
    pub mf_g: f64,
    pub me_g: f64,
    pub excitation: Excitation,
    pub plant_hash: String,
    pub seed: u64,
    pub noise: NoiseSpec,
}

/// Column store in file units: s, mm, mm/s, kPa gauge, N.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Channels {
    pub t_s: Vec<f64>,
    pub x_mm: Vec<f64>,
    pub xdot_mm_s: Vec<f64>,
    pub pf_kpa: Vec<f64>,
    pub pe_kpa: Vec<f64>,
    pub fe_n: Vec<f64>,
}

impl Channels {
    pub fn len(&self) -> usize {
        self.t_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_s.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        [&self.t_s, &self.x_mm, &self.xdot_mm_s, &self.pf_kpa, &self.pe_kpa, &self.fe_n].iter().all(|c| c.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub sample_rate_hz: f64,
    pub meta: DatasetMeta,
    /// Measured channels (noise added when the noise spec is nonzero).
    pub channels: Channels,
    /// Noise-free channels, kept when noise was added.
    pub clean: Option<Channels>,
}

impl TrajectoryDataset {
    /// File stem, e.g. `pf027.5_pe080.0`.
    pub fn name(&self) -> String {
        format!("pf{:05.1}_pe{:05.1}", self.meta.pf_psi, self.meta.pe_psi)
    }

    /// Noise-free channels when available, else the measured ones.
    pub fn truth(&self) -> &Channels {
        self.clean.as_ref().unwrap_or(&self.channels)
    }

    pub fn masses_kg(&self) -> (f64, f64) {
        (self.meta.mf_g * 1e-3, self.meta.me_g * 1e-3)
    }

    /// External force as a signal in SI.
    pub fn force_signal(&self) -> Signal {
        Signal::uniform(self.channels.t_s[0], 1.0 / self.sample_rate_hz, self.channels.fe_n.clone())
    }
}

/// Co-contraction grid: every (flexor, extensor) pair of gauge levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub levels_psi: Vec<f64>,
}

impl GridSpec {
    /// 5 × 5 desk grid, 10–80 psi in 17.5 psi steps.
    pub fn desk() -> Self {
        Self { levels_psi: (0..5).map(|i| 10.0 + 17.5 * i as f64).collect() }
    }

    /// 15 × 15 grid, 10–80 psi in 5 psi steps.
    pub fn full() -> Self {
        Self { levels_psi: (0..15).map(|i| 10.0 + 5.0 * i as f64).collect() }
    }

    /// `(i, j, pf_psi, pe_psi)` in row-major order.
    pub fn points(&self) -> Vec<(usize, usize, f64, f64)> {
        let l = &self.levels_psi;
        (0..l.len()).flat_map(|i| (0..l.len()).map(move |j| (i, j, l[i], l[j]))).collect()
    }

    /// Excitation of grid point `(i, j)`: frequency cycles along anti-diagonals,
    /// torque alternates by flexor level.
    pub fn excitation(&self, i: usize, j: usize, duration_s: f64) -> Excitation {
        Excitation::Sinusoid {
            frequency_hz: TRAINING_FREQUENCIES_HZ[(i + j) % 3],
            torque_nm: TRAINING_TORQUES_NM[i % 2],
            duration_s,
        }
    }
}

/// Per-trial seed derived from the run seed and the grid index.
pub fn trial_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Simulates one trial from rest at its sealed equilibrium. Masses are those
/// that realize the commanded pressures with the joint centered.
pub fn generate_dataset(
    plant: &SyntheticPlant,
    pf_psi: f64,
    pe_psi: f64,
    excitation: &Excitation,
    seed: u64,
    noise: NoiseSpec,
) -> Result<TrajectoryDataset, PlantError> {
    if !(pf_psi >= 0.0 && pe_psi >= 0.0) {
        return Err(PlantError::Invalid(format!("negative gauge pressure ({pf_psi}, {pe_psi}) psi")));
    }
    let (x0, m_f, m_e) = plant.masses_for_pressures(pf_psi * PSI, pe_psi * PSI)?;
    let dt = 1.0 / SAMPLE_RATE_HZ;
    let fe = excitation.force_signal(plant.physics.rp_m, dt);
    let tr = plant.simulate_uniform([x0, 0.0], &Signal::constant(m_f), &Signal::constant(m_e), &fe, excitation.duration_s(), dt)?;
    let mut clean = Channels::default();
    for (t, s) in tr.times.iter().zip(&tr.states) {
        clean.t_s.push(*t);
        clean.x_mm.push(s[0] * 1e3);
        clean.xdot_mm_s.push(s[1] * 1e3);
        clean.pf_kpa.push(plant.gauge_pressure(Side::Flexor, m_f, s[0]) * 1e-3);
        clean.pe_kpa.push(plant.gauge_pressure(Side::Extensor, m_e, s[0]) * 1e-3);
        clean.fe_n.push(fe.at(*t));
    }
    if !clean.all_finite() {
        return Err(PlantError::Invalid("non-finite channel".into()));
    }
    let meta = DatasetMeta {
        pf_psi,
        pe_psi,
        mf_g: m_f * 1e3,
        me_g: m_e * 1e3,
        excitation: excitation.clone(),
        plant_hash: plant.hash(),
        seed,
        noise,
    };
    if noise.is_none() {
        return Ok(TrajectoryDataset { sample_rate_hz: SAMPLE_RATE_HZ, meta, channels: clean, clean: None });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nx = Normal::new(0.0, noise.sigma_x_mm).map_err(|e| PlantError::Invalid(e.to_string()))?;
    let np = Normal::new(0.0, noise.sigma_p_kpa).map_err(|e| PlantError::Invalid(e.to_string()))?;
    let mut measured = clean.clone();
    for k in 0..measured.len() {
        measured.x_mm[k] += nx.sample(&mut rng);
        measured.pf_kpa[k] += np.sample(&mut rng);
        measured.pe_kpa[k] += np.sample(&mut rng);
    }
    Ok(TrajectoryDataset { sample_rate_hz: SAMPLE_RATE_HZ, meta, channels: measured, clean: Some(clean) })
}

/// One trial per grid point, in grid order.
pub fn generate_grid(
    plant: &SyntheticPlant,
    grid: &GridSpec,
    duration_s: f64,
    seed: u64,
    noise: NoiseSpec,
) -> Result<Vec<TrajectoryDataset>, PlantError> {
    let points = grid.points();
    let indexed: Vec<(usize, (usize, usize, f64, f64))> = points.into_iter().enumerate().collect();
    crate::par::map(&indexed, |&(k, (i, j, pf, pe))| {
        generate_dataset(plant, pf, pe, &grid.excitation(i, j, duration_s), trial_seed(seed, k), noise)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(duration_s: f64) -> Excitation {
        Excitation::Sinusoid { frequency_hz: 1.0, torque_nm: 0.918, duration_s }
    }

    #[test]
    fn grids() {
        assert_eq!(GridSpec::desk().points().len(), 25);
        assert_eq!(GridSpec::desk().levels_psi, vec![10.0, 27.5, 45.0, 62.5, 80.0]);
        assert_eq!(GridSpec::full().points().len(), 225);
        assert_eq!(*GridSpec::full().levels_psi.last().unwrap(), 80.0);
    }

    #[test]
    fn symmetric_trial_starts_at_center() {
        let d = generate_dataset(&SyntheticPlant::default(), 40.0, 40.0, &sine(0.5), 1, NoiseSpec::NONE).unwrap();
        assert!(d.channels.x_mm[0].abs() < 0.01);
        assert_eq!(d.channels.len(), 501);
        assert!((d.channels.pf_kpa[0] - 40.0 * PSI * 1e-3).abs() < 1e-6);
    }

    #[test]
    fn gas_law_bookkeeping_is_exact() {
        let plant = SyntheticPlant::default();
        let d = generate_dataset(&plant, 30.0, 60.0, &sine(1.0), 1, NoiseSpec::NONE).unwrap();
        let (mf, _) = d.masses_kg();
        for k in (0..d.channels.len()).step_by(50) {
            let x = d.channels.x_mm[k] * 1e-3;
            let pf = (plant.physics.pressure_from_mass(Side::Flexor, mf, x).unwrap() - crate::physics::P_ATM) * 1e-3;
            assert!((pf - d.channels.pf_kpa[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_data_and_noise_is_seeded() {
        let plant = SyntheticPlant::default();
        let a = generate_dataset(&plant, 20.0, 50.0, &sine(0.3), 7, NoiseSpec::STANDARD).unwrap();
        let b = generate_dataset(&plant, 20.0, 50.0, &sine(0.3), 7, NoiseSpec::STANDARD).unwrap();
        let c = generate_dataset(&plant, 20.0, 50.0, &sine(0.3), 8, NoiseSpec::STANDARD).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.channels.x_mm, c.channels.x_mm);
        assert_eq!(a.clean, c.clean);
        let clean = a.clean.as_ref().unwrap();
        let n = clean.len() as f64;
        let sd = (a.channels.x_mm.iter().zip(&clean.x_mm).map(|(m, c)| (m - c).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd - 0.01).abs() < 0.003, "{sd}");
    }

    #[test]
    fn grid_metadata_is_unique() {
        let grid = GridSpec { levels_psi: vec![10.0, 45.0, 80.0] };
        let ds = generate_grid(&SyntheticPlant::default(), &grid, 0.2, 3, NoiseSpec::NONE).unwrap();
        assert_eq!(ds.len(), 9);
        let mut names: Vec<String> = ds.iter().map(|d| d.name()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 9);
    }
}
