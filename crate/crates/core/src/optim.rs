//! Box-constrained limited-memory quasi-Newton minimization.
//!
//! Gradients are central finite differences, so the objective only has to be
//! evaluable inside the box. Search directions come from the L-BFGS two-loop
//! recursion restricted to the free variables (those not pinned at an active
//! bound), and steps follow the projected path `P(x + t d)` with Armijo
//! backtracking.

use std::collections::VecDeque;

/// Settings for [`minimize_bounded`].
#[derive(Debug, Clone)]
pub struct BoundedSettings {
    pub max_iters: usize,
    /// Central-difference step.
    pub fd_step: f64,
    /// Number of correction pairs kept.
    pub memory: usize,
    /// Stop when the relative objective decrease falls below this.
    pub ftol: f64,
    /// Stop when the infinity norm of the projected gradient falls below this.
    pub pgtol: f64,
}

impl Default for BoundedSettings {
    fn default() -> Self {
        Self {
            max_iters: 100,
            fd_step: 1e-6,
            memory: 10,
            ftol: 1e-10,
            pgtol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

struct Counted<F> {
    f: F,
    calls: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.calls += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((xi, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *xi = xi.clamp(lo, hi);
    }
}

/// Central finite-difference gradient; near a bound the stencil is clipped and
/// the quotient uses the actual spacing.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x: &[f64],
    lower: &[f64],
    upper: &[f64],
    step: f64,
) -> Vec<f64> {
    let mut work = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let hi = (x[i] + step).min(upper[i]);
        let lo = (x[i] - step).max(lower[i]);
        if hi <= lo {
            continue;
        }
        work[i] = hi;
        let f_hi = f(&work);
        work[i] = lo;
        let f_lo = f(&work);
        work[i] = x[i];
        let g = (f_hi - f_lo) / (hi - lo);
        grad[i] = if g.is_finite() { g } else { 0.0 };
    }
    grad
}

fn free_mask(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> Vec<bool> {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&lo, &hi))| {
            let at_lo = xi <= lo && gi > 0.0;
            let at_hi = xi >= hi && gi < 0.0;
            !(at_lo || at_hi) && hi > lo
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` over the box `[lower, upper]` starting from `x0`.
///
/// The returned point is the best one evaluated, so the result never exceeds
/// the objective at the projected start.
pub fn minimize_bounded<F: FnMut(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    settings: &BoundedSettings,
) -> Minimum {
    let n = x0.len();
    assert_eq!(lower.len(), n);
    assert_eq!(upper.len(), n);
    let mut obj = Counted { f, calls: 0 };

    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut fx = obj.eval(&x);
    let mut g = fd_gradient(&mut |p: &[f64]| obj.eval(p), &x, lower, upper, settings.fd_step);

    let mut s_hist: VecDeque<Vec<f64>> = VecDeque::new();
    let mut y_hist: VecDeque<Vec<f64>> = VecDeque::new();
    let mut iterations = 0;

    while iterations < settings.max_iters {
        iterations += 1;

        let pg_norm = x
            .iter()
            .zip(&g)
            .zip(lower.iter().zip(upper))
            .map(|((&xi, &gi), (&lo, &hi))| ((xi - gi).clamp(lo, hi) - xi).abs())
            .fold(0.0, f64::max);
        if pg_norm <= settings.pgtol {
            break;
        }

        let free = free_mask(&x, &g, lower, upper);
        let mut q: Vec<f64> = g.iter().zip(&free).map(|(&gi, &fr)| if fr { gi } else { 0.0 }).collect();

        // two-loop recursion over the free subspace
        let m = s_hist.len();
        let mut alphas = vec![0.0; m];
        for k in (0..m).rev() {
            let (s, y) = (&s_hist[k], &y_hist[k]);
            let sy = masked_dot(s, y, &free);
            if sy <= 0.0 {
                continue;
            }
            let a = masked_dot(s, &q, &free) / sy;
            alphas[k] = a;
            for i in 0..n {
                if free[i] {
                    q[i] -= a * y[i];
                }
            }
        }
        if let (Some(s), Some(y)) = (s_hist.back(), y_hist.back()) {
            let sy = masked_dot(s, y, &free);
            let yy = masked_dot(y, y, &free);
            if sy > 0.0 && yy > 0.0 {
                let gamma = sy / yy;
                q.iter_mut().for_each(|v| *v *= gamma);
            }
        }
        for k in 0..m {
            let (s, y) = (&s_hist[k], &y_hist[k]);
            let sy = masked_dot(s, y, &free);
            if sy <= 0.0 {
                continue;
            }
            let b = masked_dot(y, &q, &free) / sy;
            for i in 0..n {
                if free[i] {
                    q[i] += s[i] * (alphas[k] - b);
                }
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        if dot(&dir, &g) >= 0.0 {
            dir = g.iter().zip(&free).map(|(&gi, &fr)| if fr { -gi } else { 0.0 }).collect();
            s_hist.clear();
            y_hist.clear();
        }

        // first step of a fresh memory: cap the move at the box scale
        let mut t = if s_hist.is_empty() {
            let dmax = dir.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let span = lower
                .iter()
                .zip(upper)
                .map(|(l, u)| u - l)
                .fold(0.0_f64, f64::max);
            if dmax > 0.0 {
                (0.25 * span / dmax).min(1.0)
            } else {
                1.0
            }
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..30 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + t * di).collect();
            project(&mut trial, lower, upper);
            let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &step);
            if step.iter().all(|v| *v == 0.0) {
                break;
            }
            let f_trial = obj.eval(&trial);
            if f_trial <= fx + 1e-4 * decrease.min(0.0) && f_trial <= fx {
                accepted = Some((trial, f_trial));
                break;
            }
            t *= 0.5;
        }

        let Some((x_new, f_new)) = accepted else {
            break;
        };
        let g_new = fd_gradient(&mut |p: &[f64]| obj.eval(p), &x_new, lower, upper, settings.fd_step);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if s_hist.len() == settings.memory {
                s_hist.pop_front();
                y_hist.pop_front();
            }
            s_hist.push_back(s);
            y_hist.push_back(y);
        }
        let rel = (fx - f_new) / fx.abs().max(f_new.abs()).max(1.0);
        x = x_new;
        fx = f_new;
        g = g_new;
        if rel <= settings.ftol {
            break;
        }
    }

    Minimum {
        x,
        value: fx,
        iterations,
        evaluations: obj.calls,
    }
}

fn masked_dot(a: &[f64], b: &[f64], mask: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((x, y), _)| x * y)
        .sum()
}
