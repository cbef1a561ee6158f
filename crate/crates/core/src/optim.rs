//! Unconstrained minimization: BFGS on central-difference gradients with an
//! Armijo backtracking line search, and Nelder–Mead as the derivative-free
//! fallback when the line search stalls away from a stationary point.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    pub max_iterations: usize,
    /// Convergence when the largest gradient component falls below this.
    pub gradient_tolerance: f64,
    /// Convergence when an accepted step moves no coordinate by more than this.
    pub step_tolerance: f64,
    /// Longest step (max norm) attempted by one line search.
    pub max_step: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            max_iterations: 2000,
            gradient_tolerance: 1e-5,
            step_tolerance: 1e-9,
            max_step: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Whether Nelder–Mead had to take over.
    pub used_fallback: bool,
}

/// Central-difference gradient; falls back to a one-sided difference when
/// one of the two probes is not finite.
pub fn numerical_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], fx: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 6e-6 * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            match (up.is_finite(), down.is_finite()) {
                (true, true) => (up - down) / (2.0 * h),
                (true, false) => (up - fx) / h,
                (false, true) => (fx - down) / h,
                (false, false) => f64::NAN,
            }
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` from `x0`. `f` should return `+∞` (or NaN) where it is undefined.
pub fn minimize<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], settings: &OptimizerSettings) -> Minimum {
    let mut state = bfgs(f, x0, settings);
    if !state.converged && state.iterations < settings.max_iterations {
        let nm = nelder_mead(f, &state.x, settings.max_iterations * 10, settings.step_tolerance);
        if nm.value <= state.value {
            let g = numerical_gradient(f, &nm.x, nm.value);
            // Restart BFGS from the simplex optimum; this often finishes the job.
            let polished = bfgs(f, &nm.x, settings);
            let (x, value, gn, converged) = if polished.value <= nm.value {
                (polished.x, polished.value, polished.gradient_norm, polished.converged)
            } else {
                let gn = max_abs(&g);
                (nm.x, nm.value, gn, gn < settings.gradient_tolerance || nm.converged)
            };
            state = Minimum {
                x,
                value,
                converged,
                iterations: state.iterations + nm.iterations + polished.iterations,
                gradient_norm: gn,
                used_fallback: true,
            };
        } else {
            state.used_fallback = true;
        }
    }
    state
}

fn bfgs<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], settings: &OptimizerSettings) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut g = numerical_gradient(f, &x, fx);
    let identity = |h: &mut Vec<f64>| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            h[i * n + i] = 1.0;
        }
    };
    let mut h = vec![0.0; n * n];
    identity(&mut h);
    let mut fresh = true;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iterations {
        if g.iter().any(|v| !v.is_finite()) {
            break;
        }
        if max_abs(&g) < settings.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            identity(&mut h);
            fresh = true;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let longest = max_abs(&d);
        if longest > settings.max_step {
            let s = settings.max_step / longest;
            d.iter_mut().for_each(|v| *v *= s);
            slope *= s;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha * max_abs(&d) > 1e-16 * (1.0 + max_abs(&x)) {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            let fnew = f(&xn);
            if fnew.is_finite() && fnew <= fx + 1e-4 * alpha * slope {
                accepted = Some((xn, fnew));
                break;
            }
            alpha *= if fnew.is_finite() {
                // safeguarded quadratic interpolation
                let q = -slope * alpha * alpha / (2.0 * (fnew - fx - slope * alpha));
                (q / alpha).clamp(0.1, 0.5)
            } else {
                0.2
            };
        }
        let full_step = alpha == 1.0;
        let Some((xn, fnew)) = accepted else {
            if fresh {
                break;
            }
            identity(&mut h);
            fresh = true;
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let gn = numerical_gradient(f, &xn, fnew);
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        x = xn;
        fx = fnew;
        g = gn;
        if full_step && max_abs(&s) < settings.step_tolerance {
            converged = true;
            break;
        }
        let ys = dot(&y, &s);
        if ys > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && ys.is_finite() {
            if fresh {
                let scale = ys / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= scale);
                fresh = false;
            }
            bfgs_update(&mut h, &s, &y, ys);
        }
    }
    let gradient_norm = max_abs(&g);
    Minimum {
        x,
        value: fx,
        converged: converged || gradient_norm < settings.gradient_tolerance,
        iterations,
        gradient_norm,
        used_fallback: false,
    }
}

/// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ` with `ρ = 1 / yᵀs`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], ys: f64) {
    let n = s.len();
    let rho = 1.0 / ys;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    let coef = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

struct SimplexResult {
    x: Vec<f64>,
    value: f64,
    iterations: usize,
    converged: bool,
}

fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], max_evals: usize, xtol: f64) -> SimplexResult {
    let n = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += 0.1 * x0[i].abs().max(1.0);
        let v = eval(&p);
        simplex.push((p, v));
    }
    let mut evals = n + 1;
    let mut iterations = 0;
    let mut converged = false;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        let size = simplex[1..]
            .iter()
            .map(|(p, _)| p.iter().zip(&simplex[0].0).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
            .fold(0.0, f64::max);
        if (worst - best).abs() <= 1e-12 * (1.0 + best.abs()) && size <= xtol.max(1e-8) {
            converged = true;
            break;
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(p, _)| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = eval(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe);
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst {
                let xc = along(-0.5);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < worst.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best_point = simplex[0].0.clone();
                for (p, v) in simplex.iter_mut().skip(1) {
                    for (a, b) in p.iter_mut().zip(&best_point) {
                        *a = b + 0.5 * (*a - b);
                    }
                    *v = eval(p);
                }
                evals += n;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    SimplexResult {
        x,
        value,
        iterations,
        converged,
    }
}
