//! Two-stage bounded minimizer over a 2-vector: coordinate pattern search from
//! grid multi-starts, then Nelder-Mead simplex refinement.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    /// Grid points per axis for the multi-start scan (0 disables the grid).
    pub grid: usize,
    /// Number of best grid points that seed a pattern search.
    pub starts: usize,
    /// Initial pattern step as a fraction of each axis range.
    pub initial_step: f64,
    /// Pattern search stops once the step falls below this fraction of the range.
    pub pattern_tol: f64,
    /// Simplex stops when its extent is below this fraction of the range...
    pub simplex_xtol: f64,
    /// ...and its value spread is below this absolute tolerance.
    pub simplex_ftol: f64,
    pub max_evals: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            grid: 7,
            starts: 3,
            initial_step: 0.125,
            pattern_tol: 1e-4,
            simplex_xtol: 1e-10,
            simplex_ftol: 1e-14,
            max_evals: 4000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchResult {
    pub point: [f64; 2],
    pub value: f64,
    pub evals: usize,
}

struct Counted<F> {
    f: F,
    bounds: [(f64, f64); 2],
    evals: usize,
}

impl<F: FnMut([f64; 2]) -> f64> Counted<F> {
    fn clamp(&self, p: [f64; 2]) -> [f64; 2] {
        [p[0].clamp(self.bounds[0].0, self.bounds[0].1), p[1].clamp(self.bounds[1].0, self.bounds[1].1)]
    }

    fn eval(&mut self, p: [f64; 2]) -> f64 {
        self.evals += 1;
        let v = (self.f)(p);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Minimizes `objective` over the box `bounds` with default options.
pub fn direct_search_then_refine<F: FnMut([f64; 2]) -> f64>(objective: F, bounds: [(f64, f64); 2]) -> SearchResult {
    direct_search_then_refine_with(objective, bounds, None, &SearchOptions::default())
}

/// As [`direct_search_then_refine`], optionally seeded with a warm start that
/// joins the multi-start candidates.
pub fn direct_search_then_refine_with<F: FnMut([f64; 2]) -> f64>(
    objective: F,
    bounds: [(f64, f64); 2],
    warm_start: Option<[f64; 2]>,
    opts: &SearchOptions,
) -> SearchResult {
    let range = [bounds[0].1 - bounds[0].0, bounds[1].1 - bounds[1].0];
    let mut obj = Counted { f: objective, bounds, evals: 0 };

    let mut candidates: Vec<([f64; 2], f64)> = Vec::new();
    if let Some(w) = warm_start {
        let w = obj.clamp(w);
        let v = obj.eval(w);
        candidates.push((w, v));
    }
    if opts.grid >= 2 {
        for i in 0..opts.grid {
            for j in 0..opts.grid {
                let p = [
                    bounds[0].0 + range[0] * i as f64 / (opts.grid - 1) as f64,
                    bounds[1].0 + range[1] * j as f64 / (opts.grid - 1) as f64,
                ];
                let v = obj.eval(p);
                candidates.push((p, v));
            }
        }
    } else if candidates.is_empty() {
        let p = [bounds[0].0 + 0.5 * range[0], bounds[1].0 + 0.5 * range[1]];
        let v = obj.eval(p);
        candidates.push((p, v));
    }
    // Stable sort keeps the warm start ahead of equal-valued grid points.
    candidates.sort_by(|a, b| a.1.total_cmp(&b.1));
    candidates.truncate(opts.starts.max(1));

    let mut best = candidates[0];
    let n_starts = candidates.len();
    for (start, value) in candidates {
        // Stage 1 gets at most half of the evaluation budget.
        let budget = obj.evals + (opts.max_evals / 2).saturating_sub(obj.evals) / n_starts;
        let r = pattern_search(&mut obj, start, value, range, budget, opts);
        if r.1 < best.1 {
            best = r;
        }
    }

    let step = [
        (opts.pattern_tol * 10.0 * range[0]).max(f64::EPSILON),
        (opts.pattern_tol * 10.0 * range[1]).max(f64::EPSILON),
    ];
    let refined = nelder_mead(&mut obj, best.0, best.1, step, range, opts);
    let best = if refined.1 <= best.1 { refined } else { best };
    SearchResult { point: best.0, value: best.1, evals: obj.evals }
}

fn pattern_search<F: FnMut([f64; 2]) -> f64>(
    obj: &mut Counted<F>,
    start: [f64; 2],
    start_value: f64,
    range: [f64; 2],
    budget: usize,
    opts: &SearchOptions,
) -> ([f64; 2], f64) {
    let mut x = start;
    let mut fx = start_value;
    let mut step = [opts.initial_step * range[0], opts.initial_step * range[1]];
    while (step[0] > opts.pattern_tol * range[0] || step[1] > opts.pattern_tol * range[1]) && obj.evals < budget {
        let mut improved = false;
        for axis in 0..2 {
            for dir in [1.0, -1.0] {
                let mut p = x;
                p[axis] += dir * step[axis];
                let p = obj.clamp(p);
                if p == x {
                    continue;
                }
                let v = obj.eval(p);
                if v < fx {
                    x = p;
                    fx = v;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step[0] *= 0.5;
            step[1] *= 0.5;
        }
    }
    (x, fx)
}

fn nelder_mead<F: FnMut([f64; 2]) -> f64>(
    obj: &mut Counted<F>,
    start: [f64; 2],
    start_value: f64,
    step: [f64; 2],
    range: [f64; 2],
    opts: &SearchOptions,
) -> ([f64; 2], f64) {
    let mut simplex = vec![(start, start_value)];
    for axis in 0..2 {
        let mut p = start;
        p[axis] += step[axis];
        if obj.clamp(p) == start {
            p[axis] = start[axis] - step[axis];
        }
        let p = obj.clamp(p);
        let v = obj.eval(p);
        simplex.push((p, v));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut restarts = 0;
    while obj.evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let extent = simplex[1..]
            .iter()
            .map(|(p, _)| ((p[0] - simplex[0].0[0]) / range[0]).abs().max(((p[1] - simplex[0].0[1]) / range[1]).abs()))
            .fold(0.0, f64::max);
        let spread = simplex[2].1 - simplex[0].1;
        if extent < opts.simplex_xtol || (spread.abs() <= opts.simplex_ftol && extent < 1e3 * opts.simplex_xtol) {
            // One restart around the incumbent guards against a collapsed simplex.
            if restarts >= 1 {
                break;
            }
            restarts += 1;
            let best = simplex[0];
            simplex.truncate(1);
            for axis in 0..2 {
                let mut p = best.0;
                p[axis] += step[axis] * 0.1;
                let p = obj.clamp(p);
                let v = obj.eval(p);
                simplex.push((p, v));
            }
            continue;
        }
        let centroid = [(simplex[0].0[0] + simplex[1].0[0]) / 2.0, (simplex[0].0[1] + simplex[1].0[1]) / 2.0];
        let worst = simplex[2];
        let along = |c: f64| obj_point(centroid, worst.0, c);
        let xr = obj.clamp(along(-alpha));
        let fr = obj.eval(xr);
        if fr < simplex[0].1 {
            let xe = obj.clamp(along(-gamma));
            let fe = obj.eval(xe);
            simplex[2] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[1].1 {
            simplex[2] = (xr, fr);
        } else {
            let xc = if fr < worst.1 { obj.clamp(along(-rho)) } else { obj.clamp(along(rho)) };
            let fc = obj.eval(xc);
            if fc < worst.1.min(fr) {
                simplex[2] = (xc, fc);
            } else {
                let b = simplex[0].0;
                for item in simplex.iter_mut().skip(1) {
                    let p = [b[0] + sigma * (item.0[0] - b[0]), b[1] + sigma * (item.0[1] - b[1])];
                    let p = obj.clamp(p);
                    *item = (p, obj.eval(p));
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0]
}

/// Point `centroid + c·(worst − centroid)`.
fn obj_point(centroid: [f64; 2], worst: [f64; 2], c: f64) -> [f64; 2] {
    [centroid[0] + c * (worst[0] - centroid[0]), centroid[1] + c * (worst[1] - centroid[1])]
}
