//! Box-constrained limited-memory quasi-Newton minimization.
//!
//! Projected L-BFGS: the two-loop direction is restricted to the free
//! variables and trial points are projected onto the box, with an Armijo
//! backtracking search along the projected path.

use std::collections::VecDeque;

use crate::scalar::{clamp, dot, Real};

#[derive(Debug, Clone)]
pub struct MinimizeOptions<T> {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop when the projected gradient's max-norm falls below this.
    pub grad_tol: T,
    /// Stop when the relative objective decrease falls below this.
    pub rel_tol: T,
}

impl<T: Real> Default for MinimizeOptions<T> {
    fn default() -> Self {
        MinimizeOptions { max_iter: 100, memory: 6, grad_tol: T::lit(1e-7), rel_tol: T::lit(1e-10) }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub value: T,
    pub iterations: usize,
}

fn project<T: Real>(x: &mut [T], lower: &[T], upper: &[T]) {
    for ((v, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = clamp(*v, lo, hi);
    }
}

fn at_active_bound<T: Real>(x: T, g: T, lo: T, hi: T) -> bool {
    (x <= lo && g > T::zero()) || (x >= hi && g < T::zero())
}

/// Minimizes `f` over the box. `f` writes the gradient into its second
/// argument and returns the value; non-finite values are treated as +∞.
pub fn minimize_box<T: Real, F>(mut f: F, x0: &[T], lower: &[T], upper: &[T], opts: &MinimizeOptions<T>) -> Minimum<T>
where
    F: FnMut(&[T], &mut [T]) -> T,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut g = vec![T::zero(); n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() {
        return Minimum { x, value: T::infinity(), iterations: 0 };
    }
    let mut hist: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(opts.memory);
    let mut g_new = vec![T::zero(); n];
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let free: Vec<bool> = (0..n).map(|i| !at_active_bound(x[i], g[i], lower[i], upper[i])).collect();
        let pg_norm = (0..n)
            .filter(|&i| free[i])
            .map(|i| g[i].abs())
            .fold(T::zero(), T::max);
        if pg_norm <= opts.grad_tol {
            break;
        }

        let mut d = two_loop(&g, &hist, &free);
        if !(dot(&g, &d) < T::zero()) {
            hist.clear();
            d = (0..n).map(|i| if free[i] { -g[i] } else { T::zero() }).collect();
        }

        let steepest = hist.is_empty();
        let mut step = if steepest {
            let dn = d.iter().fold(T::zero(), |a, v| a.max(v.abs()));
            T::one().min(T::lit(0.1) / dn.max(T::lit(1e-12))).max(T::lit(1e-12))
        } else {
            T::one()
        };
        let mut accepted = None;
        for _ in 0..40 {
            let mut xt: Vec<T> = x.iter().zip(&d).map(|(&a, &b)| a + step * b).collect();
            project(&mut xt, lower, upper);
            let decrease: T = g.iter().zip(xt.iter().zip(&x)).map(|(&gi, (&a, &b))| gi * (a - b)).sum();
            let ft = f(&xt, &mut g_new);
            if ft.is_finite() && ft <= fx + T::lit(1e-4) * decrease.min(T::zero()) {
                accepted = Some((xt, ft));
                break;
            }
            step *= T::lit(0.5);
        }
        let Some((xt, ft)) = accepted else {
            if hist.is_empty() {
                break;
            }
            hist.clear();
            continue;
        };

        let s: Vec<T> = xt.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = g_new.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > T::lit(1e-12) * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > T::zero() {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, T::one() / sy));
        }
        let rel = (fx - ft).abs() / (T::one() + fx.abs());
        x = xt;
        fx = ft;
        std::mem::swap(&mut g, &mut g_new);
        if rel <= opts.rel_tol {
            // A stalled quasi-Newton step gets one steepest-descent retry.
            if steepest {
                break;
            }
            hist.clear();
        }
    }
    Minimum { x, value: fx, iterations }
}

fn two_loop<T: Real>(g: &[T], hist: &VecDeque<(Vec<T>, Vec<T>, T)>, free: &[bool]) -> Vec<T> {
    let mut q: Vec<T> = g.iter().zip(free).map(|(&v, &f)| if f { v } else { T::zero() }).collect();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = *rho * masked_dot(s, &q, free);
        for i in 0..q.len() {
            if free[i] {
                q[i] -= a * y[i];
            }
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let yy = masked_dot(y, y, free);
        if yy > T::zero() {
            let gamma = masked_dot(s, y, free) / yy;
            if gamma > T::zero() {
                for v in q.iter_mut() {
                    *v *= gamma;
                }
            }
        }
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
        let b = *rho * masked_dot(y, &q, free);
        for i in 0..q.len() {
            if free[i] {
                q[i] += (*a - b) * s[i];
            }
        }
    }
    q.iter().map(|&v| -v).collect()
}

fn masked_dot<T: Real>(a: &[T], b: &[T], mask: &[bool]) -> T {
    let mut acc = T::zero();
    for i in 0..a.len() {
        if mask[i] {
            acc += a[i] * b[i];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn finds_rosenbrock_minimum() {
        let opts = MinimizeOptions { max_iter: 500, ..Default::default() };
        let m = minimize_box(rosenbrock, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &opts);
        assert_relative_eq!(m.x[0], 1.0, epsilon = 1e-4);
        assert_relative_eq!(m.x[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn respects_active_bound() {
        // Unconstrained minimum at (2, -1); box caps the first coordinate at 1.
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 2.0);
            g[1] = 2.0 * (x[1] + 1.0);
            (x[0] - 2.0).powi(2) + (x[1] + 1.0).powi(2)
        };
        let m = minimize_box(f, &[0.0, 0.0], &[0.0, -3.0], &[1.0, 3.0], &MinimizeOptions::default());
        assert_eq!(m.x[0], 1.0);
        assert_relative_eq!(m.x[1], -1.0, epsilon = 1e-6);
    }
}
