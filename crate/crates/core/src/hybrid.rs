//! Joint dynamics with the learned force in the loop:
//! `[ẋ, (F_e + f_θ − Bẋ)/m, Ṗ_f, Ṗ_e]`, state in SI units with absolute pressures.

use crate::force_net::{Activations, ForceNet, NetCheckpoint, NetError, N_WEIGHTS};
use crate::numerics::{integrate, DifferentiableField, OdeError, OdeSolveSpec, Trajectory, VectorField};
use crate::physics::{sigmoid, PhysicalParams, PhysicsError, Side};
use serde::{Deserialize, Serialize};

/// Net input units from SI: mm, mm/s, g.
const M_TO_MM: f64 = 1e3;
const KG_TO_G: f64 = 1e3;

/// Uniformly sampled signal, linearly interpolated and held constant outside
/// its support.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    t0: f64,
    dt: f64,
    values: Vec<f64>,
}

impl Signal {
    pub fn constant(v: f64) -> Self {
        Self { t0: 0.0, dt: 1.0, values: vec![v] }
    }

    pub fn uniform(t0: f64, dt: f64, values: Vec<f64>) -> Self {
        assert!(dt > 0.0 && !values.is_empty());
        Self { t0, dt, values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn segment(&self, t: f64) -> Option<(usize, f64)> {
        let n = self.values.len();
        if n < 2 {
            return None;
        }
        let s = (t - self.t0) / self.dt;
        if s <= 0.0 || s >= (n - 1) as f64 {
            return None;
        }
        let i = (s.floor() as usize).min(n - 2);
        Some((i, s - i as f64))
    }

    pub fn at(&self, t: f64) -> f64 {
        match self.segment(t) {
            Some((i, w)) => self.values[i] + w * (self.values[i + 1] - self.values[i]),
            None if t - self.t0 <= 0.0 => self.values[0],
            None => *self.values.last().unwrap(),
        }
    }

    /// Slope of the active segment (zero outside the support).
    pub fn rate(&self, t: f64) -> f64 {
        match self.segment(t) {
            Some((i, _)) => (self.values[i + 1] - self.values[i]) / self.dt,
            None => 0.0,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.values.windows(2).all(|w| w[0] == w[1])
    }
}

/// Exogenous inputs: chamber air masses (kg) and external joint force (N).
/// Mass rates follow the schedules; constant schedules mean sealed chambers.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlInput {
    pub m_f: Signal,
    pub m_e: Signal,
    pub fe: Signal,
}

impl ControlInput {
    pub fn sealed(m_f: f64, m_e: f64, fe: Signal) -> Self {
        Self { m_f: Signal::constant(m_f), m_e: Signal::constant(m_e), fe }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    pub params: PhysicalParams,
    pub net: ForceNet,
    /// Auxiliary viscous damping used only while training, kg/s.
    pub aux_damping: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("auxiliary damping must be non-negative")]
    NegativeDamping,
}

impl HybridModel {
    pub fn new(params: PhysicalParams, net: ForceNet) -> Self {
        Self { params, net, aux_damping: 0.0 }
    }

    /// Learned force in newtons at SI state and masses.
    pub fn force_si(&self, x: f64, xdot: f64, m_f: f64, m_e: f64) -> f64 {
        self.net.forward(x * M_TO_MM, xdot * M_TO_MM, m_f * KG_TO_G, m_e * KG_TO_G)
    }

    /// Learned force in newtons at mm, mm/s and grams.
    pub fn force(&self, x_mm: f64, xdot_mm_s: f64, mf_g: f64, me_g: f64) -> f64 {
        self.net.forward(x_mm, xdot_mm_s, mf_g, me_g)
    }

    /// Pressures consistent with the gas law at `x`.
    pub fn consistent_state(&self, x: f64, xdot: f64, m_f: f64, m_e: f64) -> Result<[f64; 4], PhysicsError> {
        Ok([
            x,
            xdot,
            self.params.pressure_from_mass(Side::Flexor, m_f, x)?,
            self.params.pressure_from_mass(Side::Extensor, m_e, x)?,
        ])
    }

    pub fn vector_field(&self, state: &[f64; 4], input: &ControlInput, t: f64) -> Result<[f64; 4], ModelError> {
        self.params.check_range(state[0])?;
        let mut dy = [0.0; 4];
        self.field(input).eval(t, state, &mut dy);
        Ok(dy)
    }

    pub fn field<'a>(&'a self, input: &'a ControlInput) -> HybridField<'a> {
        HybridField { model: self, input }
    }

    pub fn simulate(&self, x0: &[f64; 4], input: &ControlInput, spec: &OdeSolveSpec) -> Result<Trajectory, ModelError> {
        if self.aux_damping < 0.0 {
            return Err(ModelError::NegativeDamping);
        }
        self.params.check_range(x0[0])?;
        Ok(integrate(&self.field(input), x0, spec)?)
    }

    /// Flat trainable parameters: net weights, then `raw_m`, `raw_ν`.
    pub fn trainable(&self) -> Vec<f64> {
        let mut p = self.net.weights().to_vec();
        p.push(self.params.raw_m);
        p.push(self.params.raw_nu);
        p
    }

    pub fn set_trainable(&mut self, p: &[f64]) {
        assert_eq!(p.len(), N_TRAINABLE);
        self.net.set_weights(&p[..N_WEIGHTS]);
        self.params.raw_m = p[N_WEIGHTS];
        self.params.raw_nu = p[N_WEIGHTS + 1];
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            version: MODEL_VERSION,
            physics: self.params,
            aux_damping_kg_s: self.aux_damping,
            net: self.net.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self, ModelError> {
        if ck.version != MODEL_VERSION {
            return Err(ModelError::Net(NetError::Version(ck.version)));
        }
        if !(ck.aux_damping_kg_s >= 0.0) {
            return Err(ModelError::NegativeDamping);
        }
        Ok(Self { params: ck.physics, net: ForceNet::from_checkpoint(&ck.net)?, aux_damping: ck.aux_damping_kg_s })
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(&self.to_checkpoint()).map_err(NetError::from)?)
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let ck: ModelCheckpoint = serde_json::from_str(s).map_err(NetError::from)?;
        Self::from_checkpoint(&ck)
    }
}

pub const N_TRAINABLE: usize = N_WEIGHTS + 2;
pub const MODEL_VERSION: u32 = 1;

/// Physics parameters and network in one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCheckpoint {
    pub version: u32,
    pub physics: PhysicalParams,
    pub aux_damping_kg_s: f64,
    pub net: NetCheckpoint,
}

/// The model bound to one input schedule, as an integrable field.
pub struct HybridField<'a> {
    model: &'a HybridModel,
    input: &'a ControlInput,
}

struct Chamber {
    m: f64,
    mdot: f64,
}

impl HybridField<'_> {
    fn chambers(&self, t: f64) -> [Chamber; 2] {
        let i = self.input;
        [Chamber { m: i.m_f.at(t), mdot: i.m_f.rate(t) }, Chamber { m: i.m_e.at(t), mdot: i.m_e.rate(t) }]
    }
}

const SIDES: [Side; 2] = [Side::Flexor, Side::Extensor];

impl VectorField for HybridField<'_> {
    fn dim(&self) -> usize {
        4
    }

    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let p = &self.model.params;
        let ch = self.chambers(t);
        let f = self.model.force_si(y[0], y[1], ch[0].m, ch[1].m);
        dy[0] = y[1];
        dy[1] = (self.input.fe.at(t) + f - self.model.aux_damping * y[1]) / p.m();
        let c = p.c();
        for (k, side) in SIDES.into_iter().enumerate() {
            let vt = p.volume_terms(side, y[0]);
            dy[2 + k] = c * (ch[k].mdot / vt.v - ch[k].m * vt.v_x * y[1] / (vt.v * vt.v));
        }
    }
}

impl DifferentiableField for HybridField<'_> {
    fn n_params(&self) -> usize {
        N_TRAINABLE
    }

    fn vjp(&self, t: f64, y: &[f64], cot: &[f64], grad_y: &mut [f64], grad_p: &mut [f64]) {
        let model = self.model;
        let p = &model.params;
        let m = p.m();
        let ch = self.chambers(t);
        let mut acts = Activations::default();
        let input = [y[0] * M_TO_MM, y[1] * M_TO_MM, ch[0].m * KG_TO_G, ch[1].m * KG_TO_G];
        let f = model.net.forward_cached(input, &mut acts);
        let accel = (self.input.fe.at(t) + f - model.aux_damping * y[1]) / m;

        // Velocity row.
        let g_f = cot[1] / m;
        let dfd = if g_f != 0.0 {
            model.net.backward(&acts, g_f, Some(&mut grad_p[..N_WEIGHTS]))
        } else {
            [0.0; 4]
        };
        grad_y[0] += dfd[0] * M_TO_MM;
        grad_y[1] += dfd[1] * M_TO_MM - g_f * model.aux_damping + cot[0];
        grad_p[N_WEIGHTS] += -cot[1] * accel / m * sigmoid(p.raw_m);

        // Pressure rows.
        let c = p.c();
        let mut g_nu = 0.0;
        for (k, side) in SIDES.into_iter().enumerate() {
            let w = cot[2 + k];
            if w == 0.0 {
                continue;
            }
            let vt = p.volume_terms(side, y[0]);
            let (v2, v3) = (vt.v * vt.v, vt.v * vt.v * vt.v);
            let (mi, mdot, xd) = (ch[k].m, ch[k].mdot, y[1]);
            let d_x = c * (-mdot * vt.v_x / v2 - mi * xd * (vt.v_xx / v2 - 2.0 * vt.v_x * vt.v_x / v3));
            let d_xd = -c * mi * vt.v_x / v2;
            let d_nu = c * (-mdot * vt.v_nu / v2 - mi * xd * (vt.v_xnu / v2 - 2.0 * vt.v_x * vt.v_nu / v3));
            grad_y[0] += w * d_x;
            grad_y[1] += w * d_xd;
            g_nu += w * d_nu;
        }
        grad_p[N_WEIGHTS + 1] += g_nu * sigmoid(p.raw_nu);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::force_net::HIDDEN;
    use crate::numerics::{integrate_with_grad, Method};
    use crate::physics::init_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> HybridModel {
        let mut net = ForceNet::init(seed);
        // Larger output layer so the learned force is not negligible in gradient checks.
        for w in &mut net.weights_mut()[N_WEIGHTS - HIDDEN - 1..] {
            *w *= 50.0;
        }
        HybridModel::new(init_params(), net)
    }

    /// Net with leaky slope 1 wired as the linear spring `f = −k·x`.
    pub(crate) fn spring_net(k_n_per_mm: f64) -> ForceNet {
        let mut net = ForceNet::zeros();
        net.leaky_slope = 1.0;
        let w = net.weights_mut();
        // Layer 1 row 0 picks normalized x, layer 2 passes unit 0, output scales.
        w[0] = 1.0;
        let b1 = HIDDEN * 4;
        let w2 = b1 + HIDDEN;
        w[w2] = 1.0;
        let w3 = w2 + HIDDEN * HIDDEN + HIDDEN;
        w[w3] = -k_n_per_mm * 10.0 / 100.0;
        net
    }

    fn pulse() -> Signal {
        let v: Vec<f64> = (0..=3000).map(|i| if (200..350).contains(&i) { 60.0 } else { 0.0 }).collect();
        Signal::uniform(0.0, 1e-3, v)
    }

    #[test]
    fn signal_interpolation() {
        let s = Signal::uniform(1.0, 0.5, vec![0.0, 2.0, 1.0]);
        assert_eq!(s.at(0.0), 0.0);
        assert_eq!(s.at(1.25), 1.0);
        assert_eq!(s.at(1.75), 1.5);
        assert_eq!(s.at(9.0), 1.0);
        assert_eq!(s.rate(1.2), 4.0);
        assert_eq!(s.rate(0.2), 0.0);
        assert!(Signal::constant(3.0).is_constant());
    }

    #[test]
    fn zero_net_at_rest_is_stationary() {
        let m = HybridModel::new(init_params(), ForceNet::zeros());
        let input = ControlInput::sealed(6e-5, 8e-5, Signal::constant(0.0));
        let s = m.consistent_state(0.002, 0.0, 6e-5, 8e-5).unwrap();
        assert_eq!(m.vector_field(&s, &input, 0.3).unwrap(), [0.0; 4]);
    }

    #[test]
    fn external_force_acceleration() {
        let params = PhysicalParams::from_values(253.0, 8.47e4, 4.6, 5e-3, 0.2, 6.875e-3);
        let m = HybridModel::new(params, ForceNet::zeros());
        let input = ControlInput::sealed(6e-5, 6e-5, Signal::constant(100.0));
        let s = m.consistent_state(0.0, 0.0, 6e-5, 6e-5).unwrap();
        let dy = m.vector_field(&s, &input, 0.0).unwrap();
        assert!((dy[1] - 0.3953).abs() < 1e-4, "{}", dy[1]);
    }

    #[test]
    fn flexor_pressure_rises_when_its_volume_shrinks() {
        let m = model(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let x = rng.gen_range(-0.02..0.02);
            let xd = rng.gen_range(0.001..0.05);
            let (mf, me) = (rng.gen_range(3e-5..1.3e-4), rng.gen_range(3e-5..1.3e-4));
            let s = m.consistent_state(x, xd, mf, me).unwrap();
            let dy = m.vector_field(&s, &ControlInput::sealed(mf, me, Signal::constant(0.0)), 0.0).unwrap();
            let vdot = m.params.volume_rate(Side::Flexor, x, xd).unwrap();
            assert_eq!(dy[2] > 0.0, vdot < 0.0);
        }
    }

    #[test]
    fn out_of_range_is_reported() {
        let m = model(1);
        let input = ControlInput::sealed(6e-5, 6e-5, Signal::constant(0.0));
        assert!(matches!(m.vector_field(&[0.05, 0.0, 3e5, 3e5], &input, 0.0), Err(ModelError::Physics(_))));
    }

    #[test]
    fn sealed_simulation_obeys_gas_law() {
        let mut m = HybridModel::new(init_params(), spring_net(150.0));
        m.aux_damping = 800.0;
        let (mf, me) = (7e-5, 5e-5);
        let input = ControlInput::sealed(mf, me, pulse());
        let x0 = m.consistent_state(0.0, 0.0, mf, me).unwrap();
        let spec = OdeSolveSpec::uniform(0.0, 3.0, 1e-3, 1e-3, Method::Tsit5).unwrap();
        let tr = m.simulate(&x0, &input, &spec).unwrap();
        let mut worst: f64 = 0.0;
        for s in &tr.states {
            let pf = m.params.pressure_from_mass(Side::Flexor, mf, s[0]).unwrap();
            let pe = m.params.pressure_from_mass(Side::Extensor, me, s[0]).unwrap();
            worst = worst.max(((s[2] - pf) / s[2]).abs()).max(((s[3] - pe) / s[3]).abs());
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn spring_skeleton_conserves_energy() {
        let k = 150.0;
        let mut m = HybridModel::new(init_params(), spring_net(k));
        m.aux_damping = 0.0;
        let input = ControlInput::sealed(6e-5, 6e-5, Signal::constant(0.0));
        let x0 = m.consistent_state(0.001, 0.0, 6e-5, 6e-5).unwrap();
        let spec = OdeSolveSpec::uniform(0.0, 10.0, 1e-3, 0.01, Method::Tsit5).unwrap();
        let tr = m.simulate(&x0, &input, &spec).unwrap();
        let mass = m.params.m();
        let energy = |s: &Vec<f64>| 0.5 * mass * s[1] * s[1] + 0.5 * k * 1e3 * s[0] * s[0];
        let e0 = energy(&tr.states[0]);
        let drift = tr.states.iter().map(|s| ((energy(s) - e0) / e0).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-6, "{drift}");
    }

    #[test]
    fn heavy_damping_decays_monotonically() {
        let mut m = HybridModel::new(init_params(), ForceNet::zeros());
        m.aux_damping = 1e6;
        let input = ControlInput::sealed(6e-5, 6e-5, Signal::constant(0.0));
        let x0 = m.consistent_state(0.0, 0.01, 6e-5, 6e-5).unwrap();
        let spec = OdeSolveSpec::uniform(0.0, 0.01, 1e-5, 1e-4, Method::Tsit5).unwrap();
        let tr = m.simulate(&x0, &input, &spec).unwrap();
        for w in tr.states.windows(2) {
            assert!(w[1][1].abs() <= w[0][1].abs() && w[1][1] >= 0.0);
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut m = model(21);
        m.aux_damping = 500.0;
        let fe = Signal::uniform(0.0, 0.01, (0..100).map(|i| 50.0 * (i as f64 * 0.3).sin()).collect());
        let mf = Signal::uniform(0.0, 0.1, vec![6e-5, 6.5e-5, 6.2e-5, 7e-5]);
        let input = ControlInput { m_f: mf, m_e: Signal::constant(8e-5), fe };
        let field = m.field(&input);
        let y = [0.003, 0.02, 4.2e5, 5.1e5];
        let t = 0.137;
        let cot = [0.7, -1.3, 2e-4, -3e-4];
        let mut gy = [0.0; 4];
        let mut gp = vec![0.0; N_TRAINABLE];
        field.vjp(t, &y, &cot, &mut gy, &mut gp);
        let proj = |field: &HybridField, y: &[f64]| {
            let mut d = [0.0; 4];
            field.eval(t, y, &mut d);
            d.iter().zip(&cot).map(|(a, b)| a * b).sum::<f64>()
        };
        let steps = [1e-7, 1e-6, 1.0, 1.0];
        for i in 0..2 {
            let mut a = y;
            let mut b = y;
            a[i] += steps[i];
            b[i] -= steps[i];
            let fd = (proj(&field, &a) - proj(&field, &b)) / (2.0 * steps[i]);
            assert!((gy[i] - fd).abs() <= 1e-5 * fd.abs() + 1e-9, "y{i}: {} vs {fd}", gy[i]);
        }
        assert_eq!(&gy[2..], &[0.0, 0.0]);
        let base = m.trainable();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut idx: Vec<usize> = (0..20).map(|_| rng.gen_range(0..N_WEIGHTS)).collect();
        idx.extend([N_WEIGHTS - 1, N_WEIGHTS, N_WEIGHTS + 1]);
        for k in idx {
            // The field is piecewise linear in each weight, so a wide step only trims roundoff.
            let d = if k < N_WEIGHTS { 1e-4 } else { 1e-6 };
            let mut ma = m.clone();
            let mut mb = m.clone();
            let mut pa = base.clone();
            let mut pb = base.clone();
            pa[k] += d;
            pb[k] -= d;
            ma.set_trainable(&pa);
            mb.set_trainable(&pb);
            let fd = (proj(&ma.field(&input), &y) - proj(&mb.field(&input), &y)) / (2.0 * d);
            assert!((gp[k] - fd).abs() <= 1e-5 * fd.abs() + 1e-10, "p{k}: {} vs {fd}", gp[k]);
        }
    }

    #[test]
    fn through_solver_gradient_matches_finite_differences() {
        let m = model(5);
        let (mf, me) = (7e-5, 6e-5);
        let input = ControlInput::sealed(mf, me, pulse());
        let x0 = m.consistent_state(0.0, 0.0, mf, me).unwrap();
        let spec = OdeSolveSpec::uniform(0.0, 0.6, 5e-3, 0.02, Method::Tsit5).unwrap();
        // Loss in mm and kPa so every channel matters.
        let loss = |s: &[Vec<f64>]| {
            let scale = [1e3, 1e3, 1e-3, 1e-3];
            let mut v = 0.0;
            let cot = s
                .iter()
                .map(|r| {
                    (0..4)
                        .map(|i| {
                            let u = r[i] * scale[i];
                            v += u * u;
                            2.0 * u * scale[i]
                        })
                        .collect()
                })
                .collect();
            (v, cot)
        };
        let field = m.field(&input);
        let out = integrate_with_grad(&field, &x0, &spec, loss).unwrap();
        let value_at = |p: &[f64]| {
            let mut mm = m.clone();
            mm.set_trainable(p);
            let tr = mm.simulate(&x0, &input, &spec).unwrap();
            loss(&tr.states).0
        };
        let base = m.trainable();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut idx: Vec<usize> = (0..20).map(|_| rng.gen_range(0..N_WEIGHTS)).collect();
        idx.extend([N_WEIGHTS, N_WEIGHTS + 1]);
        for k in idx {
            let d = 1e-5;
            let mut a = base.clone();
            let mut b = base.clone();
            a[k] += d;
            b[k] -= d;
            let fd = (value_at(&a) - value_at(&b)) / (2.0 * d);
            let g = out.grad_params[k];
            assert!((g - fd).abs() / (fd.abs() + 1e-12) < 1e-4 || (g - fd).abs() < 1e-7, "p{k}: {g} vs {fd}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = model(2);
        m.aux_damping = 100.0;
        let back = HybridModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }
}
