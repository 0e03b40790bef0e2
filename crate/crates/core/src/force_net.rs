//! Learned interaction force `f(x, ẋ, m_f, m_e)`: a 4 → 96 → 96 → 1 LeakyReLU
//! perceptron with hand-written reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_INPUTS: usize = 4;
pub const HIDDEN: usize = 96;

const W1: usize = 0;
const B1: usize = W1 + HIDDEN * N_INPUTS;
const W2: usize = B1 + HIDDEN;
const B2: usize = W2 + HIDDEN * HIDDEN;
const W3: usize = B2 + HIDDEN;
const B3: usize = W3 + HIDDEN;
/// Number of trainable weights and biases.
pub const N_WEIGHTS: usize = B3 + 1;

/// Output layer starts near zero so the untrained model exerts almost no force.
const OUTPUT_INIT_GAIN: f64 = 0.02;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("layer {layer}: expected {expected}, found {found}")]
    Shape { layer: usize, expected: String, found: String },
    #[error("checkpoint contains non-finite weights")]
    NonFinite,
    #[error("input scale must be positive")]
    BadScale,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForceNet {
    pub leaky_slope: f64,
    /// Inputs are normalized as `(input − offset) / scale`, in mm, mm/s, g, g.
    pub input_scale: [f64; N_INPUTS],
    pub input_offset: [f64; N_INPUTS],
    /// Newtons per network output unit.
    pub output_scale: f64,
    weights: Vec<f64>,
}

/// Hidden activations of one forward pass, kept for the backward pass.
#[derive(Clone)]
pub struct Activations {
    u: [f64; N_INPUTS],
    z1: [f64; HIDDEN],
    a1: [f64; HIDDEN],
    z2: [f64; HIDDEN],
    a2: [f64; HIDDEN],
}

impl Default for Activations {
    fn default() -> Self {
        Self { u: [0.0; N_INPUTS], z1: [0.0; HIDDEN], a1: [0.0; HIDDEN], z2: [0.0; HIDDEN], a2: [0.0; HIDDEN] }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl ForceNet {
    /// Kaiming-uniform fan-in initialization (gain adjusted for the leaky
    /// slope), biases uniform in `±1/√fan_in`, output layer scaled down.
    pub fn init(seed: u64) -> Self {
        let leaky_slope: f64 = 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = (2.0 / (1.0 + leaky_slope * leaky_slope)).sqrt();
        let mut w = vec![0.0; N_WEIGHTS];
        let mut fill = |rng: &mut ChaCha8Rng, range: std::ops::Range<usize>, bound: f64| {
            for v in &mut w[range] {
                *v = rng.gen_range(-bound..bound);
            }
        };
        let fan1 = N_INPUTS as f64;
        let fan2 = HIDDEN as f64;
        fill(&mut rng, W1..B1, gain * (3.0 / fan1).sqrt());
        fill(&mut rng, B1..W2, 1.0 / fan1.sqrt());
        fill(&mut rng, W2..B2, gain * (3.0 / fan2).sqrt());
        fill(&mut rng, B2..W3, 1.0 / fan2.sqrt());
        fill(&mut rng, W3..B3, OUTPUT_INIT_GAIN * gain * (3.0 / fan2).sqrt());
        Self {
            leaky_slope,
            input_scale: [10.0, 50.0, 0.1, 0.1],
            input_offset: [0.0; N_INPUTS],
            output_scale: 100.0,
            weights: w,
        }
    }

    /// Net with every weight and bias zero.
    pub fn zeros() -> Self {
        let mut n = Self::init(0);
        n.weights.iter_mut().for_each(|w| *w = 0.0);
        n
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn set_weights(&mut self, w: &[f64]) {
        self.weights.copy_from_slice(w);
    }

    #[inline]
    fn act(&self, z: f64) -> f64 {
        if z > 0.0 {
            z
        } else {
            self.leaky_slope * z
        }
    }

    #[inline]
    fn act_grad(&self, z: f64) -> f64 {
        if z > 0.0 {
            1.0
        } else {
            self.leaky_slope
        }
    }

    /// Force in newtons for displacement (mm), velocity (mm/s) and chamber masses (g).
    pub fn forward(&self, x_mm: f64, xdot_mm_s: f64, mf_g: f64, me_g: f64) -> f64 {
        let mut acts = Activations::default();
        self.forward_cached([x_mm, xdot_mm_s, mf_g, me_g], &mut acts)
    }

    pub fn forward_cached(&self, input: [f64; N_INPUTS], acts: &mut Activations) -> f64 {
        let w = &self.weights;
        for i in 0..N_INPUTS {
            acts.u[i] = (input[i] - self.input_offset[i]) / self.input_scale[i];
        }
        for o in 0..HIDDEN {
            let row = &w[W1 + o * N_INPUTS..W1 + (o + 1) * N_INPUTS];
            let z = w[B1 + o] + row[0] * acts.u[0] + row[1] * acts.u[1] + row[2] * acts.u[2] + row[3] * acts.u[3];
            acts.z1[o] = z;
            acts.a1[o] = self.act(z);
        }
        for o in 0..HIDDEN {
            let z = w[B2 + o] + dot(&w[W2 + o * HIDDEN..W2 + (o + 1) * HIDDEN], &acts.a1);
            acts.z2[o] = z;
            acts.a2[o] = self.act(z);
        }
        self.output_scale * (w[B3] + dot(&w[W3..B3], &acts.a2))
    }

    /// Reverse pass for upstream `∂L/∂force`. Accumulates `∂L/∂weights` into
    /// `grad_w` (if given) and returns `∂L/∂input` in physical input units.
    pub fn backward(&self, acts: &Activations, upstream: f64, grad_w: Option<&mut [f64]>) -> [f64; N_INPUTS] {
        let w = &self.weights;
        let g_out = upstream * self.output_scale;
        let mut d2 = [0.0; HIDDEN];
        for o in 0..HIDDEN {
            d2[o] = g_out * w[W3 + o] * self.act_grad(acts.z2[o]);
        }
        let mut g_a1 = [0.0; HIDDEN];
        for o in 0..HIDDEN {
            if d2[o] != 0.0 {
                axpy(d2[o], &w[W2 + o * HIDDEN..W2 + (o + 1) * HIDDEN], &mut g_a1);
            }
        }
        let mut d1 = [0.0; HIDDEN];
        for o in 0..HIDDEN {
            d1[o] = g_a1[o] * self.act_grad(acts.z1[o]);
        }
        let mut g_u = [0.0; N_INPUTS];
        for o in 0..HIDDEN {
            let row = &w[W1 + o * N_INPUTS..W1 + (o + 1) * N_INPUTS];
            for i in 0..N_INPUTS {
                g_u[i] += d1[o] * row[i];
            }
        }
        if let Some(gw) = grad_w {
            gw[B3] += g_out;
            axpy(g_out, &acts.a2, &mut gw[W3..B3]);
            for o in 0..HIDDEN {
                gw[B2 + o] += d2[o];
                if d2[o] != 0.0 {
                    axpy(d2[o], &acts.a1, &mut gw[W2 + o * HIDDEN..W2 + (o + 1) * HIDDEN]);
                }
                gw[B1 + o] += d1[o];
                let row = &mut gw[W1 + o * N_INPUTS..W1 + (o + 1) * N_INPUTS];
                for i in 0..N_INPUTS {
                    row[i] += d1[o] * acts.u[i];
                }
            }
        }
        let mut g = [0.0; N_INPUTS];
        for i in 0..N_INPUTS {
            g[i] = g_u[i] / self.input_scale[i];
        }
        g
    }

    /// `∂f/∂(x, ẋ, m_f, m_e)` in N/mm, N·s/mm, N/g, N/g.
    pub fn grad_inputs(&self, x_mm: f64, xdot_mm_s: f64, mf_g: f64, me_g: f64) -> [f64; N_INPUTS] {
        let mut acts = Activations::default();
        self.forward_cached([x_mm, xdot_mm_s, mf_g, me_g], &mut acts);
        self.backward(&acts, 1.0, None)
    }

    /// Flat `upstream · ∂f/∂weights`.
    pub fn grad_weights(&self, input: [f64; N_INPUTS], upstream: f64) -> Vec<f64> {
        let mut acts = Activations::default();
        self.forward_cached(input, &mut acts);
        let mut g = vec![0.0; N_WEIGHTS];
        self.backward(&acts, upstream, Some(&mut g));
        g
    }

    pub fn to_checkpoint(&self) -> NetCheckpoint {
        let w = &self.weights;
        let mat = |start: usize, rows: usize, cols: usize| -> Vec<Vec<f64>> {
            (0..rows).map(|r| w[start + r * cols..start + (r + 1) * cols].to_vec()).collect()
        };
        NetCheckpoint {
            version: CHECKPOINT_VERSION,
            leaky_slope: self.leaky_slope,
            input_scale: self.input_scale,
            input_offset: self.input_offset,
            output_scale: self.output_scale,
            layers: vec![
                LayerJson { w: mat(W1, HIDDEN, N_INPUTS), b: w[B1..W2].to_vec() },
                LayerJson { w: mat(W2, HIDDEN, HIDDEN), b: w[B2..W3].to_vec() },
                LayerJson { w: mat(W3, 1, HIDDEN), b: vec![w[B3]] },
            ],
        }
    }

    pub fn from_checkpoint(ck: &NetCheckpoint) -> Result<Self, NetError> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(NetError::Version(ck.version));
        }
        if ck.input_scale.iter().any(|s| !(*s > 0.0)) {
            return Err(NetError::BadScale);
        }
        let shapes = [(HIDDEN, N_INPUTS), (HIDDEN, HIDDEN), (1, HIDDEN)];
        if ck.layers.len() != shapes.len() {
            return Err(NetError::Shape { layer: ck.layers.len(), expected: "3 layers".into(), found: format!("{}", ck.layers.len()) });
        }
        let mut weights = Vec::with_capacity(N_WEIGHTS);
        for (li, (layer, &(rows, cols))) in ck.layers.iter().zip(&shapes).enumerate() {
            let ok = layer.w.len() == rows && layer.w.iter().all(|r| r.len() == cols) && layer.b.len() == rows;
            if !ok {
                return Err(NetError::Shape {
                    layer: li,
                    expected: format!("{rows}x{cols} + {rows}"),
                    found: format!("{}x{} + {}", layer.w.len(), layer.w.first().map_or(0, |r| r.len()), layer.b.len()),
                });
            }
            for r in &layer.w {
                weights.extend_from_slice(r);
            }
            weights.extend_from_slice(&layer.b);
        }
        if weights.iter().any(|w| !w.is_finite()) || !ck.output_scale.is_finite() || !ck.leaky_slope.is_finite() {
            return Err(NetError::NonFinite);
        }
        Ok(Self {
            leaky_slope: ck.leaky_slope,
            input_scale: ck.input_scale,
            input_offset: ck.input_offset,
            output_scale: ck.output_scale,
            weights,
        })
    }

    pub fn to_json(&self) -> Result<String, NetError> {
        Ok(serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn from_json(s: &str) -> Result<Self, NetError> {
        Self::from_checkpoint(&serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerJson {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Serialized network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetCheckpoint {
    pub version: u32,
    pub leaky_slope: f64,
    pub input_scale: [f64; N_INPUTS],
    pub input_offset: [f64; N_INPUTS],
    pub output_scale: f64,
    pub layers: Vec<LayerJson>,
}
