//! Air-mass estimation at zero-torque crossings from quasi-static
//! single-muscle force and pressure surfaces.

use super::{PlantError, SyntheticPlant};
use crate::numerics::lstsq;
use crate::physics::{init_params, Side, P_ATM};
use serde::{Deserialize, Serialize};

use super::TrajectoryDataset;

/// `Σ c[i·(dm+1)+j] (x/x_scale)^i (m/m_scale)^j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poly2 {
    pub deg_x: usize,
    pub deg_m: usize,
    pub x_scale: f64,
    pub m_scale: f64,
    pub coef: Vec<f64>,
}

impl Poly2 {
    fn basis(deg_x: usize, deg_m: usize, u: f64, w: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity((deg_x + 1) * (deg_m + 1));
        for i in 0..=deg_x {
            for j in 0..=deg_m {
                out.push(u.powi(i as i32) * w.powi(j as i32));
            }
        }
        out
    }

    pub fn eval(&self, x: f64, m: f64) -> f64 {
        Self::basis(self.deg_x, self.deg_m, x / self.x_scale, m / self.m_scale).iter().zip(&self.coef).map(|(b, c)| b * c).sum()
    }

    /// Least-squares fit to `(x, m, value)` samples; returns the surface and its RMS residual.
    pub fn fit(samples: &[(f64, f64, f64)], deg_x: usize, deg_m: usize) -> Result<(Self, f64), PlantError> {
        let x_scale = samples.iter().map(|s| s.0.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let m_scale = samples.iter().map(|s| s.1.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let rows: Vec<Vec<f64>> = samples.iter().map(|s| Self::basis(deg_x, deg_m, s.0 / x_scale, s.1 / m_scale)).collect();
        let b: Vec<f64> = samples.iter().map(|s| s.2).collect();
        let fit = lstsq(&rows, &b)?;
        Ok((Self { deg_x, deg_m, x_scale, m_scale, coef: fit.coef }, fit.rms))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub x_m: f64,
    pub mass_kg: f64,
    pub force_n: f64,
    pub pressure_pa: f64,
    /// +1 while x increases, −1 while it decreases.
    pub direction: i8,
}

/// Quasi-static flexor-muscle sweeps, sealed at several pressures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepData {
    pub points: Vec<SweepPoint>,
}

/// Sweeps one flexor muscle through `±x_max` in both directions at `speed`,
/// sealed with the mass that gives each gauge level at `x = 0`.
pub fn bench_sweep(plant: &SyntheticPlant, gauge_levels_pa: &[f64], x_max_m: f64, n: usize, speed_m_s: f64) -> Result<SweepData, PlantError> {
    let mut points = Vec::new();
    for &pg in gauge_levels_pa {
        let m = plant.physics.mass_from_pressure(Side::Flexor, pg + P_ATM, 0.0)?;
        for k in 0..n {
            let x = -x_max_m + 2.0 * x_max_m * k as f64 / (n - 1) as f64;
            let p = plant.physics.pressure_from_mass(Side::Flexor, m, x)?;
            for direction in [1i8, -1] {
                let force_n = plant.plant_force(Side::Flexor, p - P_ATM, x, direction as f64 * speed_m_s);
                points.push(SweepPoint { x_m: x, mass_kg: m, force_n, pressure_pa: p, direction });
            }
        }
    }
    Ok(SweepData { points })
}

/// Default bench: 69–552 kPa gauge in six levels, ±15 mm, 10 mm/s.
pub fn default_sweep(plant: &SyntheticPlant) -> Result<SweepData, PlantError> {
    let levels: Vec<f64> = (0..6).map(|i| 69e3 + (552e3 - 69e3) * i as f64 / 5.0).collect();
    bench_sweep(plant, &levels, 0.015, 61, 0.01)
}

/// Flexor force surfaces per motion direction, and the pressure surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceSurfaces {
    /// Force while x increases.
    pub rising: Poly2,
    /// Force while x decreases.
    pub falling: Poly2,
    /// Absolute pressure, Pa.
    pub pressure: Poly2,
    pub rms_residual_n: f64,
    pub force_range_n: f64,
}

impl ForceSurfaces {
    fn flexor(&self, x: f64, m: f64, direction: f64) -> f64 {
        if direction >= 0.0 {
            self.rising.eval(x, m)
        } else {
            self.falling.eval(x, m)
        }
    }

    /// Extensor force along +x, by mirroring the flexor surface.
    fn extensor(&self, x: f64, m: f64, direction: f64) -> f64 {
        -self.flexor(-x, m, -direction)
    }
}

/// Degree (3 in x, 2 in mass) least-squares surfaces per branch.
pub fn fit_force_surfaces(sweep: &SweepData) -> Result<ForceSurfaces, PlantError> {
    let branch = |d: i8| -> Vec<(f64, f64, f64)> {
        sweep.points.iter().filter(|p| p.direction == d).map(|p| (p.x_m, p.mass_kg, p.force_n)).collect()
    };
    let (rising, r1) = Poly2::fit(&branch(1), 3, 2)?;
    let (falling, r2) = Poly2::fit(&branch(-1), 3, 2)?;
    let pts: Vec<(f64, f64, f64)> = sweep.points.iter().filter(|p| p.direction == 1).map(|p| (p.x_m, p.mass_kg, p.pressure_pa)).collect();
    let (pressure, _) = Poly2::fit(&pts, 3, 2)?;
    let fmax = sweep.points.iter().map(|p| p.force_n).fold(f64::NEG_INFINITY, f64::max);
    let fmin = sweep.points.iter().map(|p| p.force_n).fold(f64::INFINITY, f64::min);
    Ok(ForceSurfaces { rising, falling, pressure, rms_residual_n: (0.5 * (r1 * r1 + r2 * r2)).sqrt(), force_range_n: fmax - fmin })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassEstimate {
    pub m_f_kg: f64,
    pub m_e_kg: f64,
    /// Branch means for crossings with ẋ > 0 and ẋ < 0 (if present).
    pub rising: Option<(f64, f64)>,
    pub falling: Option<(f64, f64)>,
    pub crossings: usize,
}

/// Residual scales for the per-crossing solve: pressures are trusted to
/// about 1 kPa, the quasi-static force balance to about 20 N because it
/// ignores inertia and viscous loss at the crossing.
const SIGMA_P: f64 = 1e3;
const SIGMA_F: f64 = 20.0;

/// Estimates the sealed chamber masses at the torque zero crossings of a
/// trial, per motion direction, and averages the two directions.
pub fn estimate_masses(dataset: &TrajectoryDataset, surfaces: &ForceSurfaces) -> Result<MassEstimate, PlantError> {
    let c = &dataset.channels;
    let geom = init_params();
    let mut rising = Vec::new();
    let mut falling = Vec::new();
    for k in 1..c.len() {
        let (a, b) = (c.fe_n[k - 1], c.fe_n[k]);
        let crosses = (a < 0.0 && b >= 0.0) || (a > 0.0 && b <= 0.0);
        if !crosses {
            continue;
        }
        let w = a / (a - b);
        let lerp = |v: &[f64]| v[k - 1] + w * (v[k] - v[k - 1]);
        let x = lerp(&c.x_mm) * 1e-3;
        let xd = lerp(&c.xdot_mm_s) * 1e-3;
        let pf = lerp(&c.pf_kpa) * 1e3 + P_ATM;
        let pe = lerp(&c.pe_kpa) * 1e3 + P_ATM;
        let dir = if xd >= 0.0 { 1.0 } else { -1.0 };
        let guess = [
            geom.mass_from_pressure(Side::Flexor, pf.max(1.0), x)?,
            geom.mass_from_pressure(Side::Extensor, pe.max(1.0), x)?,
        ];
        let residual = |m: [f64; 2]| -> [f64; 3] {
            [
                (surfaces.pressure.eval(x, m[0]) - pf) / SIGMA_P,
                (surfaces.pressure.eval(-x, m[1]) - pe) / SIGMA_P,
                (surfaces.flexor(x, m[0], dir) + surfaces.extensor(x, m[1], dir)) / SIGMA_F,
            ]
        };
        let m = gauss_newton(residual, guess);
        if dir > 0.0 {
            rising.push(m);
        } else {
            falling.push(m);
        }
    }
    if rising.is_empty() && falling.is_empty() {
        return Err(PlantError::NoCrossings);
    }
    let mean = |v: &[[f64; 2]]| -> Option<(f64, f64)> {
        if v.is_empty() {
            None
        } else {
            let n = v.len() as f64;
            Some((v.iter().map(|m| m[0]).sum::<f64>() / n, v.iter().map(|m| m[1]).sum::<f64>() / n))
        }
    };
    let (r, f) = (mean(&rising), mean(&falling));
    let (m_f, m_e) = match (r, f) {
        (Some(a), Some(b)) => (0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1)),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => unreachable!(),
    };
    Ok(MassEstimate { m_f_kg: m_f, m_e_kg: m_e, rising: r, falling: f, crossings: rising.len() + falling.len() })
}

/// Damped Gauss-Newton on a 3-residual, 2-unknown problem with a
/// finite-difference Jacobian.
fn gauss_newton(r: impl Fn([f64; 2]) -> [f64; 3], mut m: [f64; 2]) -> [f64; 2] {
    let cost = |v: &[f64; 3]| v.iter().map(|x| x * x).sum::<f64>();
    let mut lambda = 1e-6;
    let mut rv = r(m);
    for _ in 0..50 {
        let mut jac = [[0.0; 2]; 3];
        for k in 0..2 {
            let h = 1e-6 * m[k].abs().max(1e-9);
            let mut a = m;
            let mut b = m;
            a[k] += h;
            b[k] -= h;
            let (ra, rb) = (r(a), r(b));
            for i in 0..3 {
                jac[i][k] = (ra[i] - rb[i]) / (2.0 * h);
            }
        }
        let mut jtj = [[0.0; 2]; 2];
        let mut jtr = [0.0; 2];
        for i in 0..3 {
            for p in 0..2 {
                jtr[p] += jac[i][p] * rv[i];
                for q in 0..2 {
                    jtj[p][q] += jac[i][p] * jac[i][q];
                }
            }
        }
        let mut improved = false;
        for _ in 0..10 {
            let a = [[jtj[0][0] * (1.0 + lambda), jtj[0][1]], [jtj[1][0], jtj[1][1] * (1.0 + lambda)]];
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            if det == 0.0 || !det.is_finite() {
                break;
            }
            let d = [-(a[1][1] * jtr[0] - a[0][1] * jtr[1]) / det, -(a[0][0] * jtr[1] - a[1][0] * jtr[0]) / det];
            let trial = [m[0] + d[0], m[1] + d[1]];
            let rt = r(trial);
            if cost(&rt) < cost(&rv) {
                let small = d[0].abs() <= 1e-12 * m[0].abs() && d[1].abs() <= 1e-12 * m[1].abs();
                m = trial;
                rv = rt;
                lambda = (lambda * 0.3).max(1e-12);
                improved = !small;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{generate_dataset, Excitation, NoiseSpec};

    #[test]
    fn exact_polynomial_recovered() {
        let truth: Vec<f64> = (0..12).map(|k| (k as f64 * 0.7).sin() * 3.0).collect();
        let p = Poly2 { deg_x: 3, deg_m: 2, x_scale: 0.015, m_scale: 1.2e-4, coef: truth.clone() };
        let mut samples = Vec::new();
        for i in 0..9 {
            for j in 0..5 {
                let (x, m) = (-0.015 + 0.00375 * i as f64, 3e-5 + 2.25e-5 * j as f64);
                samples.push((x, m, p.eval(x, m)));
            }
        }
        let (fit, rms) = Poly2::fit(&samples, 3, 2).unwrap();
        let fit_at_truth_scale: Vec<f64> = (0..=3)
            .flat_map(|i| (0..=2).map(move |j| (i, j)))
            .zip(&fit.coef)
            .map(|((i, j), c)| c * (0.015 / fit.x_scale).powi(i) * (1.2e-4 / fit.m_scale).powi(j))
            .collect();
        for (a, b) in fit_at_truth_scale.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert!(rms < 1e-10);
    }

    #[test]
    fn single_level_sweep_is_rank_deficient() {
        let sweep = bench_sweep(&SyntheticPlant::default(), &[3e5], 0.015, 31, 0.01).unwrap();
        assert!(matches!(fit_force_surfaces(&sweep), Err(PlantError::Fit(_))));
    }

    #[test]
    fn surfaces_fit_plant_sweeps() {
        let s = fit_force_surfaces(&default_sweep(&SyntheticPlant::default()).unwrap()).unwrap();
        assert!(s.rms_residual_n < 0.02 * s.force_range_n, "{} of {}", s.rms_residual_n, s.force_range_n);
    }

    fn trial(plant: &SyntheticPlant, pf: f64, pe: f64) -> TrajectoryDataset {
        let e = Excitation::Sinusoid { frequency_hz: 1.0, torque_nm: 0.918, duration_s: 3.0 };
        generate_dataset(plant, pf, pe, &e, 1, NoiseSpec::NONE).unwrap()
    }

    #[test]
    fn recovers_known_masses() {
        let plant = SyntheticPlant::default();
        let s = fit_force_surfaces(&default_sweep(&plant).unwrap()).unwrap();
        for (pf, pe) in [(20.0, 50.0), (45.0, 45.0), (70.0, 15.0)] {
            let d = trial(&plant, pf, pe);
            let (mf, me) = d.masses_kg();
            let est = estimate_masses(&d, &s).unwrap();
            assert!(est.rising.is_some() && est.falling.is_some());
            assert!((est.m_f_kg / mf - 1.0).abs() < 0.05, "{} vs {mf}", est.m_f_kg);
            assert!((est.m_e_kg / me - 1.0).abs() < 0.05, "{} vs {me}", est.m_e_kg);
        }
    }

    #[test]
    fn branches_agree_without_hysteresis() {
        let plant = SyntheticPlant { hysteresis_n: 0.0, ..Default::default() };
        let s = fit_force_surfaces(&default_sweep(&plant).unwrap()).unwrap();
        let est = estimate_masses(&trial(&plant, 30.0, 55.0), &s).unwrap();
        let (r, f) = (est.rising.unwrap(), est.falling.unwrap());
        assert!((r.0 / f.0 - 1.0).abs() < 0.005 && (r.1 / f.1 - 1.0).abs() < 0.005, "{r:?} {f:?}");
    }

    #[test]
    fn constant_torque_has_no_crossings() {
        let plant = SyntheticPlant::default();
        let s = fit_force_surfaces(&default_sweep(&plant).unwrap()).unwrap();
        let mut d = trial(&plant, 30.0, 30.0);
        d.channels.fe_n.iter_mut().for_each(|f| *f = 12.0);
        assert!(matches!(estimate_masses(&d, &s), Err(PlantError::NoCrossings)));
    }
}
