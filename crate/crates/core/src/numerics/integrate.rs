//! Fixed-step explicit Runge-Kutta integration with cubic Hermite dense output,
//! and reverse-mode differentiation through the discrete solve.

use super::tableau::{Method, Tableau};
use super::OdeError;

/// Right-hand side of `dy/dt = f(t, y)`.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

/// A vector field that also exposes vector-Jacobian products with respect to
/// its state and its (internally held) parameters.
pub trait DifferentiableField: VectorField {
    fn n_params(&self) -> usize;

    /// Accumulates `cotᵀ ∂f/∂y` into `grad_y` and `cotᵀ ∂f/∂p` into `grad_p`.
    fn vjp(&self, t: f64, y: &[f64], cot: &[f64], grad_y: &mut [f64], grad_p: &mut [f64]);
}

/// Adapter so plain closures can be integrated.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64])> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(f64, &[f64], &mut [f64])> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (self.f)(t, y, dy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolveSpec {
    pub t0: f64,
    pub t1: f64,
    pub step: f64,
    pub sample_times: Vec<f64>,
    pub method: Method,
}

impl OdeSolveSpec {
    pub fn new(t0: f64, t1: f64, step: f64, sample_times: Vec<f64>, method: Method) -> Result<Self, OdeError> {
        let spec = Self { t0, t1, step, sample_times, method };
        spec.validate()?;
        Ok(spec)
    }

    /// Samples every `sample_dt` from `t0` through `t1` inclusive.
    pub fn uniform(t0: f64, t1: f64, step: f64, sample_dt: f64, method: Method) -> Result<Self, OdeError> {
        let n = ((t1 - t0) / sample_dt + 1e-9).floor() as usize;
        let samples = (0..=n).map(|i| t0 + i as f64 * sample_dt).collect();
        Self::new(t0, t1, step, samples, method)
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        if !(self.t1 > self.t0) || !self.t0.is_finite() || !self.t1.is_finite() {
            return Err(OdeError::InvalidSpec(format!("need t1 > t0, got [{}, {}]", self.t0, self.t1)));
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(OdeError::InvalidSpec(format!("step must be positive, got {}", self.step)));
        }
        let tol = self.time_tol();
        let mut prev = f64::NEG_INFINITY;
        for &s in &self.sample_times {
            if !(s >= self.t0 - tol && s <= self.t1 + tol) {
                return Err(OdeError::InvalidSpec(format!("sample time {s} outside [{}, {}]", self.t0, self.t1)));
            }
            if s <= prev {
                return Err(OdeError::InvalidSpec("sample times must be strictly increasing".into()));
            }
            prev = s;
        }
        Ok(())
    }

    fn time_tol(&self) -> f64 {
        1e-9 * self.step.min(1.0)
    }

    /// Number of steps; the last step is shortened to land on `t1`.
    pub fn n_steps(&self) -> usize {
        let r = (self.t1 - self.t0) / self.step;
        let n = r.round();
        if (r - n).abs() < 1e-9 {
            (n as usize).max(1)
        } else {
            r.ceil() as usize
        }
    }

    fn node_time(&self, k: usize, n: usize) -> f64 {
        if k >= n {
            self.t1
        } else {
            self.t0 + k as f64 * self.step
        }
    }

    fn locate(&self, n: usize) -> Vec<SampleLoc> {
        let tol = self.time_tol();
        self.sample_times
            .iter()
            .map(|&s| {
                let r = (s - self.t0) / self.step;
                let k = (r.floor() as isize).clamp(0, n as isize) as usize;
                for cand in [k, k + 1] {
                    if cand <= n && (self.node_time(cand, n) - s).abs() <= tol {
                        return SampleLoc::Node(cand);
                    }
                }
                let k = k.min(n - 1);
                let (ta, tb) = (self.node_time(k, n), self.node_time(k + 1, n));
                SampleLoc::Interior { step: k, theta: (s - ta) / (tb - ta) }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SampleLoc {
    Node(usize),
    Interior { step: usize, theta: f64 },
}

/// Cubic Hermite weights `(h01, h10, h11)`; the interpolant is
/// `y0 + h01·(y1 − y0) + h·(h10·f0 + h11·f1)`, exact for constant data.
fn hermite(theta: f64) -> [f64; 3] {
    let t2 = theta * theta;
    let t3 = t2 * theta;
    [-2.0 * t3 + 3.0 * t2, t3 - 2.0 * t2 + theta, t3 - t2]
}

/// Sampled solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
    pub fn channel(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[i]).collect()
    }
}

struct Stepper<'a> {
    tab: &'a Tableau,
    k: Vec<Vec<f64>>,
    ytmp: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(tab: &'a Tableau, dim: usize) -> Self {
        Self { tab, k: vec![vec![0.0; dim]; tab.stages()], ytmp: vec![0.0; dim] }
    }

    /// One step from `y` to `y_next`. `k[0]` must already hold `f(t, y)`.
    /// Stage inputs are passed to `record` in order, starting with `y` itself.
    fn step<F: VectorField + ?Sized>(
        &mut self,
        field: &F,
        t: f64,
        h: f64,
        y: &[f64],
        y_next: &mut [f64],
        mut record: impl FnMut(&[f64]),
    ) {
        let tab = self.tab;
        let s = tab.stages();
        record(y);
        for i in 1..s {
            if tab.fsal && i == s - 1 {
                break;
            }
            self.ytmp.copy_from_slice(y);
            for (j, &a) in tab.a[i].iter().enumerate() {
                if a != 0.0 {
                    for (yt, kj) in self.ytmp.iter_mut().zip(&self.k[j]) {
                        *yt += h * a * kj;
                    }
                }
            }
            record(&self.ytmp);
            let (_, tail) = self.k.split_at_mut(i);
            field.eval(t + tab.c[i] * h, &self.ytmp, &mut tail[0]);
        }
        y_next.copy_from_slice(y);
        for (i, &b) in tab.b.iter().enumerate() {
            if b != 0.0 {
                for (yn, ki) in y_next.iter_mut().zip(&self.k[i]) {
                    *yn += h * b * ki;
                }
            }
        }
        if tab.fsal {
            // Last stage is f at the end point; its stage input is y_next.
            record(y_next);
            let last = s - 1;
            field.eval(t + h, y_next, &mut self.k[last]);
        }
    }

    /// Derivative at the end of the last step if the method provides it.
    fn end_derivative(&self) -> Option<&[f64]> {
        if self.tab.fsal {
            self.k.last().map(|v| v.as_slice())
        } else {
            None
        }
    }
}

fn check_finite(y: &[f64], t: f64) -> Result<(), OdeError> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(OdeError::NonFiniteState { t })
    }
}

/// Integrates `field` from `x0` and reports the state at `spec.sample_times`.
pub fn integrate<F: VectorField + ?Sized>(field: &F, x0: &[f64], spec: &OdeSolveSpec) -> Result<Trajectory, OdeError> {
    spec.validate()?;
    let dim = field.dim();
    if x0.len() != dim {
        return Err(OdeError::DimensionMismatch { expected: dim, got: x0.len() });
    }
    check_finite(x0, spec.t0)?;
    let n = spec.n_steps();
    let locs = spec.locate(n);
    let mut out = vec![Vec::new(); locs.len()];
    let mut cursor = 0usize;
    let emit_nodes = |k: usize, y: &[f64], cursor: &mut usize, out: &mut Vec<Vec<f64>>| {
        while *cursor < locs.len() {
            match locs[*cursor] {
                SampleLoc::Node(j) if j == k => {
                    out[*cursor] = y.to_vec();
                    *cursor += 1;
                }
                _ => break,
            }
        }
    };

    let tab = spec.method.tableau();
    let mut st = Stepper::new(tab, dim);
    let mut y = x0.to_vec();
    let mut y_next = vec![0.0; dim];
    let mut f_end = vec![0.0; dim];
    field.eval(spec.t0, &y, &mut st.k[0]);
    emit_nodes(0, &y, &mut cursor, &mut out);
    for k in 0..n {
        let t = spec.node_time(k, n);
        let h = spec.node_time(k + 1, n) - t;
        st.step(field, t, h, &y, &mut y_next, |_| {});
        check_finite(&y_next, t + h)?;
        let has_interior = cursor < locs.len() && matches!(locs[cursor], SampleLoc::Interior { step, .. } if step == k);
        let end_known = st.end_derivative().is_some();
        if end_known {
            f_end.copy_from_slice(st.end_derivative().unwrap());
        } else if has_interior || k + 1 < n {
            field.eval(t + h, &y_next, &mut f_end);
        }
        while cursor < locs.len() {
            match locs[cursor] {
                SampleLoc::Interior { step, theta } if step == k => {
                    let [h01, h10, h11] = hermite(theta);
                    out[cursor] = (0..dim)
                        .map(|i| y[i] + h01 * (y_next[i] - y[i]) + h * (h10 * st.k[0][i] + h11 * f_end[i]))
                        .collect();
                    cursor += 1;
                }
                _ => break,
            }
        }
        std::mem::swap(&mut y, &mut y_next);
        st.k[0].copy_from_slice(&f_end);
        emit_nodes(k + 1, &y, &mut cursor, &mut out);
    }
    debug_assert_eq!(cursor, locs.len());
    Ok(Trajectory { times: spec.sample_times.clone(), states: out })
}

/// Record of one forward solve: step nodes and every stage input, enough to
/// run the exact reverse sweep of the discrete scheme.
#[derive(Debug, Clone)]
pub struct GradTape {
    spec: OdeSolveSpec,
    dim: usize,
    n_steps: usize,
    /// Stage inputs, `n_steps × stages × dim`; stage 0 is the step's start node.
    stage_inputs: Vec<f64>,
    /// Step nodes, `(n_steps + 1) × dim`.
    nodes: Vec<f64>,
    samples: Vec<Vec<f64>>,
    locs: Vec<SampleLoc>,
}

impl GradTape {
    /// Runs the forward solve and records the tape.
    pub fn record<F: VectorField + ?Sized>(field: &F, x0: &[f64], spec: &OdeSolveSpec) -> Result<Self, OdeError> {
        spec.validate()?;
        let dim = field.dim();
        if x0.len() != dim {
            return Err(OdeError::DimensionMismatch { expected: dim, got: x0.len() });
        }
        check_finite(x0, spec.t0)?;
        let n = spec.n_steps();
        let tab = spec.method.tableau();
        let s = tab.stages();
        let mut stage_inputs = Vec::with_capacity(n * s * dim);
        let mut nodes = Vec::with_capacity((n + 1) * dim);
        nodes.extend_from_slice(x0);
        let mut st = Stepper::new(tab, dim);
        let mut y = x0.to_vec();
        let mut y_next = vec![0.0; dim];
        field.eval(spec.t0, &y, &mut st.k[0]);
        for k in 0..n {
            let t = spec.node_time(k, n);
            let h = spec.node_time(k + 1, n) - t;
            let before = stage_inputs.len();
            st.step(field, t, h, &y, &mut y_next, |yi| stage_inputs.extend_from_slice(yi));
            // Non-FSAL tableaus record exactly `s` stage inputs; FSAL records `s`
            // with the last equal to y_next.
            debug_assert_eq!(stage_inputs.len() - before, s * dim);
            check_finite(&y_next, t + h)?;
            if !tab.fsal {
                field.eval(t + h, &y_next, &mut st.k[0]);
            } else {
                let last = st.k[s - 1].clone();
                st.k[0].copy_from_slice(&last);
            }
            nodes.extend_from_slice(&y_next);
            std::mem::swap(&mut y, &mut y_next);
        }
        let locs = spec.locate(n);
        let mut tape = Self { spec: spec.clone(), dim, n_steps: n, stage_inputs, nodes, samples: Vec::new(), locs };
        tape.samples = tape.interpolate_samples(field);
        Ok(tape)
    }

    fn node(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.dim..(k + 1) * self.dim]
    }

    fn interpolate_samples<F: VectorField + ?Sized>(&self, field: &F) -> Vec<Vec<f64>> {
        let n = self.n_steps;
        let mut f0 = vec![0.0; self.dim];
        let mut f1 = vec![0.0; self.dim];
        self.locs
            .iter()
            .map(|loc| match *loc {
                SampleLoc::Node(k) => self.node(k).to_vec(),
                SampleLoc::Interior { step, theta } => {
                    let ta = self.spec.node_time(step, n);
                    let tb = self.spec.node_time(step + 1, n);
                    let h = tb - ta;
                    field.eval(ta, self.node(step), &mut f0);
                    field.eval(tb, self.node(step + 1), &mut f1);
                    let [h01, h10, h11] = hermite(theta);
                    let (ya, yb) = (self.node(step), self.node(step + 1));
                    (0..self.dim).map(|i| ya[i] + h01 * (yb[i] - ya[i]) + h * (h10 * f0[i] + h11 * f1[i])).collect()
                }
            })
            .collect()
    }

    /// States at the requested sample times.
    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn spec(&self) -> &OdeSolveSpec {
        &self.spec
    }

    /// Re-evaluates the recorded scheme from its stage inputs and returns the
    /// sample states; must equal [`GradTape::samples`] bit for bit.
    pub fn replay<F: VectorField + ?Sized>(&self, field: &F) -> Vec<Vec<f64>> {
        let x0 = self.node(0).to_vec();
        match GradTape::record(field, &x0, &self.spec) {
            Ok(t) => t.samples,
            Err(_) => Vec::new(),
        }
    }

    /// Reverse sweep. `sample_cot[i]` is `∂loss/∂sample_i`. Returns
    /// `(∂loss/∂params, ∂loss/∂x0)`.
    pub fn backward<F: DifferentiableField + ?Sized>(&self, field: &F, sample_cot: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let dim = self.dim;
        let n = self.n_steps;
        let tab = self.spec.method.tableau();
        let s = tab.stages();
        let mut gp = vec![0.0; field.n_params()];
        // Node cotangents, accumulated from samples first.
        let mut node_bar = vec![0.0; (n + 1) * dim];
        for (loc, cot) in self.locs.iter().zip(sample_cot) {
            match *loc {
                SampleLoc::Node(k) => {
                    for (a, c) in node_bar[k * dim..(k + 1) * dim].iter_mut().zip(cot) {
                        *a += c;
                    }
                }
                SampleLoc::Interior { step, theta } => {
                    let ta = self.spec.node_time(step, n);
                    let tb = self.spec.node_time(step + 1, n);
                    let h = tb - ta;
                    let [h01, h10, h11] = hermite(theta);
                    for i in 0..dim {
                        node_bar[step * dim + i] += (1.0 - h01) * cot[i];
                        node_bar[(step + 1) * dim + i] += h01 * cot[i];
                    }
                    let c0: Vec<f64> = cot.iter().map(|c| h10 * h * c).collect();
                    let c1: Vec<f64> = cot.iter().map(|c| h11 * h * c).collect();
                    let (lo, hi) = node_bar.split_at_mut((step + 1) * dim);
                    field.vjp(ta, self.node(step), &c0, &mut lo[step * dim..], &mut gp);
                    field.vjp(tb, self.node(step + 1), &c1, &mut hi[..dim], &mut gp);
                }
            }
        }

        let mut kbar = vec![vec![0.0; dim]; s];
        let mut ybar_stage = vec![0.0; dim];
        for k in (0..n).rev() {
            let t = self.spec.node_time(k, n);
            let h = self.spec.node_time(k + 1, n) - t;
            let (lo, hi) = node_bar.split_at_mut((k + 1) * dim);
            let ybar_next = &hi[..dim];
            let ybar = &mut lo[k * dim..];
            for (i, kb) in kbar.iter_mut().enumerate() {
                let b = tab.b[i];
                for (v, yb) in kb.iter_mut().zip(ybar_next) {
                    *v = h * b * yb;
                }
            }
            for (v, yb) in ybar.iter_mut().zip(ybar_next) {
                *v += yb;
            }
            let base = k * s * dim;
            let last_stage = if tab.fsal { s - 1 } else { s };
            for i in (0..last_stage).rev() {
                if kbar[i].iter().all(|v| *v == 0.0) {
                    continue;
                }
                let yi = &self.stage_inputs[base + i * dim..base + (i + 1) * dim];
                ybar_stage.iter_mut().for_each(|v| *v = 0.0);
                field.vjp(t + tab.c[i] * h, yi, &kbar[i], &mut ybar_stage, &mut gp);
                for (v, g) in ybar.iter_mut().zip(&ybar_stage) {
                    *v += g;
                }
                for (j, &a) in tab.a[i].iter().enumerate() {
                    if a != 0.0 {
                        for (kb, g) in kbar[j].iter_mut().zip(&ybar_stage) {
                            *kb += h * a * g;
                        }
                    }
                }
            }
        }
        (gp, node_bar[..dim].to_vec())
    }
}

/// Loss value, gradients and the sampled trajectory of one differentiated solve.
#[derive(Debug, Clone)]
pub struct GradOutput {
    pub loss: f64,
    pub grad_params: Vec<f64>,
    pub grad_x0: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
}

/// Solves forward, evaluates `loss` on the sampled states and back-propagates
/// through the discrete scheme. `loss` returns the value and `∂loss/∂sample`.
pub fn integrate_with_grad<F, L>(field: &F, x0: &[f64], spec: &OdeSolveSpec, loss: L) -> Result<GradOutput, OdeError>
where
    F: DifferentiableField + ?Sized,
    L: FnOnce(&[Vec<f64>]) -> (f64, Vec<Vec<f64>>),
{
    let tape = GradTape::record(field, x0, spec)?;
    let (value, cot) = loss(tape.samples());
    if cot.len() != tape.samples().len() {
        return Err(OdeError::DimensionMismatch { expected: tape.samples().len(), got: cot.len() });
    }
    let (grad_params, grad_x0) = tape.backward(field, &cot);
    if !value.is_finite() || grad_params.iter().chain(&grad_x0).any(|g| !g.is_finite()) {
        return Err(OdeError::NonFiniteGradient);
    }
    Ok(GradOutput { loss: value, grad_params, grad_x0, samples: tape.samples })
}

/// Result of a step-halving convergence study.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderEstimate {
    /// Fitted order, `None` when every error is zero (saturated).
    pub order: Option<f64>,
    /// `(step, max-norm error at t1)` per refinement level.
    pub errors: Vec<(f64, f64)>,
}

/// Observed convergence order of `method` on `field` against the closed-form
/// `exact(t)`, from a least-squares fit of `log err` against `log h` over the
/// given step counts on `[t0, t1]`.
pub fn estimate_order<F, E>(field: &F, exact: E, t0: f64, t1: f64, method: Method, step_counts: &[usize]) -> Result<OrderEstimate, OdeError>
where
    F: VectorField + ?Sized,
    E: Fn(f64) -> Vec<f64>,
{
    let x0 = exact(t0);
    let truth = exact(t1);
    let mut errors = Vec::with_capacity(step_counts.len());
    for &n in step_counts {
        let h = (t1 - t0) / n as f64;
        let spec = OdeSolveSpec::new(t0, t1, h, vec![t1], method)?;
        let traj = integrate(field, &x0, &spec)?;
        let err = traj.states[0].iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        errors.push((h, err));
    }
    let usable: Vec<(f64, f64)> = errors.iter().copied().filter(|&(_, e)| e > 0.0).collect();
    let order = if usable.len() < 2 {
        None
    } else {
        let m = usable.len() as f64;
        let (sx, sy) = usable.iter().fold((0.0, 0.0), |(a, b), &(h, e)| (a + h.ln(), b + e.ln()));
        let (mx, my) = (sx / m, sy / m);
        let (num, den) = usable
            .iter()
            .fold((0.0, 0.0), |(n, d), &(h, e)| (n + (h.ln() - mx) * (e.ln() - my), d + (h.ln() - mx).powi(2)));
        Some(num / den)
    };
    Ok(OrderEstimate { order, errors })
}
