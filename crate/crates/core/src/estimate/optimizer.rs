//! Nelder-Mead simplex search with dimension-adaptive coefficients and
//! restarts.
//!
//! Reflection, expansion, contraction and shrink coefficients follow the
//! adaptive scheme `(1, 1 + 2/n, 0.75 - 1/(2n), 1 - 1/n)`. After the simplex
//! collapses the search restarts from a fresh simplex around the best point
//! and stops once a restart no longer improves the objective.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_evals: usize,
    /// Largest vertex distance (sup norm) from the best vertex.
    pub x_tol: f64,
    /// Objective spread across the simplex.
    pub f_tol: f64,
    pub max_restarts: usize,
    /// Measure `x_tol` in units of the initial steps instead of absolutely.
    pub x_tol_in_steps: bool,
    /// Per-coordinate initial simplex steps; defaults depend on the model.
    pub initial_steps: Option<Vec<f64>>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_evals: 20_000,
            x_tol: 1e-6,
            f_tol: 1e-8,
            max_restarts: 4,
            x_tol_in_steps: false,
            initial_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub restarts: usize,
    pub converged: bool,
    /// Best objective value after each iteration.
    pub trace: Vec<f64>,
}

struct Counter<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counter<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }
}

/// Minimize `f` from `x0`. Non-finite objective values count as `+inf`.
pub fn nelder_mead(f: impl FnMut(&[f64]) -> f64, x0: &[f64], steps: &[f64], cfg: &OptimizerConfig) -> OptimizeResult {
    let n = x0.len();
    assert_eq!(steps.len(), n, "one initial step per coordinate");
    let mut obj = Counter { f, evals: 0 };
    let mut best_x = x0.to_vec();
    let mut best_f = obj.call(x0);
    let mut iterations = 0;
    let mut trace = Vec::new();
    let mut restarts = 0;
    let mut converged = false;
    if n == 0 {
        return OptimizeResult {
            x: best_x,
            f: best_f,
            evaluations: obj.evals,
            iterations,
            restarts,
            converged: true,
            trace,
        };
    }
    loop {
        let (x, fx, done) = simplex_run(&mut obj, &best_x, best_f, steps, cfg, &mut iterations, &mut trace);
        let improvement = best_f - fx;
        if fx <= best_f {
            best_x = x;
            best_f = fx;
        }
        if !done {
            break;
        }
        // the first run always earns one restart; later ones must improve
        if restarts > 0 && !(improvement > cfg.f_tol) {
            converged = true;
            break;
        }
        if restarts >= cfg.max_restarts {
            converged = true;
            break;
        }
        restarts += 1;
    }
    OptimizeResult {
        x: best_x,
        f: best_f,
        evaluations: obj.evals,
        iterations,
        restarts,
        converged,
        trace,
    }
}

/// One simplex descent; returns the best vertex and whether the
/// convergence test fired (as opposed to the evaluation budget running out).
fn simplex_run<F: FnMut(&[f64]) -> f64>(
    obj: &mut Counter<F>,
    x0: &[f64],
    f0: f64,
    steps: &[f64],
    cfg: &OptimizerConfig,
    iterations: &mut usize,
    trace: &mut Vec<f64>,
) -> (Vec<f64>, f64, bool) {
    let n = x0.len();
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let fx = obj.call(&x);
        simplex.push((x, fx));
    }
    let point = |c: &[f64], w: &[f64], t: f64| -> Vec<f64> { c.iter().zip(w).map(|(c, w)| c + t * (c - w)).collect() };
    loop {
        // stable sort keeps ties in insertion order
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].clone();
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&best.0)
                    .zip(steps)
                    .map(|((a, b), s)| if cfg.x_tol_in_steps { (a - b).abs() / s.abs() } else { (a - b).abs() })
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let spread = simplex[n].1 - best.1;
        if diameter < cfg.x_tol && spread < cfg.f_tol {
            return (best.0, best.1, true);
        }
        if obj.evals >= cfg.max_evals {
            return (best.0, best.1, false);
        }
        *iterations += 1;
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / nf;
            }
        }
        let worst = simplex[n].clone();
        let xr = point(&centroid, &worst.0, alpha);
        let fr = obj.call(&xr);
        if fr < best.1 {
            let xe = point(&centroid, &worst.0, alpha * gamma);
            let fe = obj.call(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = point(&centroid, &worst.0, alpha * rho);
                let fc = obj.call(&xc);
                (xc, fc)
            } else {
                let xc = point(&centroid, &worst.0, -rho);
                let fc = obj.call(&xc);
                (xc, fc)
            };
            if fc < fr.min(worst.1) {
                simplex[n] = (xc, fc);
            } else {
                for v in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best.0.iter().zip(&v.0).map(|(b, x)| b + sigma * (x - b)).collect();
                    let fx = obj.call(&x);
                    *v = (x, fx);
                }
            }
        }
        trace.push(simplex.iter().map(|v| v.1).fold(f64::INFINITY, f64::min));
    }
}
