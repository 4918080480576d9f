//! Extraction of a smooth, chance-feasible parameter schedule over a context
//! grid from the final surrogates.
//!
//! The joint problem over all grid points minimizes the summed objective mean
//! plus a squared second-difference roughness term. The quantile form of the
//! chance constraint, `μ_g + z_δ σ ≤ g_max`, is handled with an exterior
//! quadratic penalty whose weight is raised geometrically, followed by a
//! strict verification and repair pass against the surrogate itself.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::parse_real;
use crate::error::IoError;
use crate::gp::Posterior;
use crate::optim::{minimize_box, MinimizeOptions};
use crate::rng::tensor_grid;
use crate::scalar::{clamp, Real};
use crate::stats::norm_quantile;
use crate::stats::prob_below;
use crate::tuner::TuningConfig;

/// Margin by which the feasibility probability must exceed `delta`.
pub const STRICT_MARGIN: f64 = 1e-9;

/// Which spread enters the chance constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMode {
    /// Latent and observation variance together.
    #[default]
    Combined,
    Latent,
}

#[derive(Debug, Error)]
pub enum SmootherError {
    #[error("no feasible parameters at context {context}: best feasibility probability {max_feasibility:.4}")]
    Infeasible { context: f64, max_feasibility: f64 },
    #[error("invalid smoother configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmootherConfig<T> {
    pub theta_min: Vec<T>,
    pub theta_max: Vec<T>,
    pub s_min: T,
    pub s_max: T,
    pub n_grid: usize,
    pub delta: T,
    pub g_max: T,
    /// `None` picks the smallest weight on [`GAMMA_LADDER`] meeting `max_second_difference`.
    pub gamma: Option<T>,
    pub sigma_mode: SigmaMode,
    /// Candidate points per parameter dimension in the pointwise search.
    pub pointwise_resolution: usize,
    /// Roughness target for automatic weight selection, as a fraction of box width.
    pub max_second_difference: T,
}

impl<T: Real> SmootherConfig<T> {
    pub fn new(theta_min: Vec<T>, theta_max: Vec<T>, s_min: T, s_max: T, delta: T, g_max: T) -> Self {
        SmootherConfig {
            theta_min,
            theta_max,
            s_min,
            s_max,
            n_grid: 21,
            delta,
            g_max,
            gamma: None,
            sigma_mode: SigmaMode::Combined,
            pointwise_resolution: 31,
            max_second_difference: T::lit(0.1),
        }
    }

    /// Smoother settings implied by a tuning configuration.
    pub fn from_tuning(config: &TuningConfig<T>) -> Self {
        SmootherConfig {
            n_grid: config.n_grid,
            gamma: config.gamma,
            ..Self::new(
                config.theta_min.clone(),
                config.theta_max.clone(),
                config.s_min,
                config.s_max,
                config.delta,
                config.g_max,
            )
        }
    }

    pub fn validate(&self) -> Result<(), SmootherError> {
        let bad = |m: &str| Err(SmootherError::Config(m.to_string()));
        if self.n_grid < 3 {
            return bad("n_grid must be at least 3");
        }
        if self.theta_min.len() != self.theta_max.len() || self.theta_min.iter().zip(&self.theta_max).any(|(a, b)| !(a < b)) {
            return bad("theta_min must be below theta_max");
        }
        if !(self.s_min < self.s_max) {
            return bad("s_min must be below s_max");
        }
        if !(self.delta > T::zero() && self.delta + T::lit(STRICT_MARGIN) < T::one()) {
            return bad("delta must lie in (0, 1)");
        }
        if self.gamma.is_some_and(|g| !(g >= T::zero())) {
            return bad("gamma must be non-negative");
        }
        if self.pointwise_resolution < 2 {
            return bad("pointwise_resolution must be at least 2");
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<T> {
        let last = T::from_usize_lossy(self.n_grid - 1);
        (0..self.n_grid)
            .map(|i| {
                if i + 1 == self.n_grid {
                    self.s_max
                } else {
                    self.s_min + (self.s_max - self.s_min) * T::from_usize_lossy(i) / last
                }
            })
            .collect()
    }

    fn widths(&self) -> Vec<T> {
        self.theta_min.iter().zip(&self.theta_max).map(|(&a, &b)| b - a).collect()
    }
}

/// Weights tried, in order, by automatic selection.
pub const GAMMA_LADDER: [f64; 14] = [0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8];

/// Discretized parameter schedule with piecewise-linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy<T> {
    pub grid: Vec<T>,
    pub params: Vec<Vec<T>>,
    /// Surrogate feasibility probability at each grid point.
    pub feasibility: Vec<T>,
    pub delta: Option<T>,
    pub gamma: Option<T>,
}

impl<T: Real> Policy<T> {
    pub fn param_dim(&self) -> usize {
        self.params.first().map_or(0, Vec::len)
    }

    /// Interpolated parameters at `s`. Contexts outside the grid are clamped.
    pub fn query(&self, s: T) -> Vec<T> {
        let n = self.grid.len();
        assert!(n > 0, "empty policy");
        if s <= self.grid[0] || n == 1 {
            if s < self.grid[0] {
                log::warn!("context {s} below policy range; clamped to {}", self.grid[0]);
            }
            return self.params[0].clone();
        }
        if s >= self.grid[n - 1] {
            if s > self.grid[n - 1] {
                log::warn!("context {s} above policy range; clamped to {}", self.grid[n - 1]);
            }
            return self.params[n - 1].clone();
        }
        let i = self.grid.partition_point(|&g| g <= s) - 1;
        if s == self.grid[i] {
            return self.params[i].clone();
        }
        let t = (s - self.grid[i]) / (self.grid[i + 1] - self.grid[i]);
        self.params[i].iter().zip(&self.params[i + 1]).map(|(&a, &b)| a + t * (b - a)).collect()
    }

    /// Largest absolute second difference over grid and components, as a
    /// fraction of each component's box width.
    pub fn max_second_difference(&self, widths: &[T]) -> T {
        let mut m = T::zero();
        for w in self.params.windows(3) {
            for k in 0..w[0].len() {
                let e = (w[0][k] - w[1][k] - w[1][k] + w[2][k]).abs() / widths[k];
                m = m.max(e);
            }
        }
        m
    }

    /// Largest componentwise jump between adjacent grid points, as a fraction of box width.
    pub fn max_jump(&self, widths: &[T]) -> T {
        let mut m = T::zero();
        for w in self.params.windows(2) {
            for k in 0..w[0].len() {
                m = m.max((w[1][k] - w[0][k]).abs() / widths[k]);
            }
        }
        m
    }

    pub fn roughness(&self) -> T {
        self.params
            .windows(3)
            .map(|w| (0..w[0].len()).map(|k| (w[0][k] - w[1][k] - w[1][k] + w[2][k]).powi(2)).sum::<T>())
            .sum()
    }

    fn header(&self) -> Vec<String> {
        let d = self.param_dim();
        let mut h = vec!["s".to_string()];
        if d == 2 {
            h.extend(["theta_log_lambda".to_string(), "theta_log_lambda0".to_string()]);
        } else {
            h.extend((1..=d).map(|k| format!("theta{k}")));
        }
        h.push("feasibility_prob".into());
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), IoError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for i in 0..self.grid.len() {
            let mut row = vec![self.grid[i].to_string()];
            row.extend(self.params[i].iter().map(|v| v.to_string()));
            row.push(self.feasibility[i].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, IoError> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.len() < 3 || &header[0] != "s" || &header[header.len() - 1] != "feasibility_prob" {
            return Err(IoError::Format(format!("unexpected policy header {header:?}")));
        }
        let d = header.len() - 2;
        let mut p = Policy { grid: vec![], params: vec![], feasibility: vec![], delta: None, gamma: None };
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let vals: Vec<T> = rec
                .iter()
                .map(|f| parse_real(f).ok_or_else(|| IoError::Format(format!("row {}: bad number {f:?}", line + 2))))
                .collect::<Result<_, _>>()?;
            p.grid.push(vals[0]);
            p.params.push(vals[1..=d].to_vec());
            p.feasibility.push(vals[d + 1]);
        }
        if p.grid.is_empty() {
            return Err(IoError::Format("policy has no rows".into()));
        }
        if p.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(IoError::Format("policy grid must be strictly increasing".into()));
        }
        Ok(p)
    }
}

/// Constraint evaluation shared by the solvers.
struct ChanceConstraint<'a, T, G: ?Sized> {
    model: &'a G,
    g_max: T,
    z: T,
    mode: SigmaMode,
}

impl<T: Real, G: Posterior<T> + ?Sized> ChanceConstraint<'_, T, G> {
    fn spread(&self, latent: T) -> T {
        match self.mode {
            SigmaMode::Latent => latent,
            SigmaMode::Combined => (latent * latent + self.model.noise_variance()).sqrt(),
        }
    }

    /// `μ + zσ − g_max`; non-positive means feasible.
    fn margin(&self, x: &[T]) -> T {
        let p = self.model.predict(x);
        p.mean + self.z * self.spread(p.std) - self.g_max
    }

    fn margin_with_grad(&self, x: &[T]) -> (T, Vec<T>) {
        let p = self.model.predict_with_grad(x);
        let sigma = self.spread(p.std);
        let grad = p
            .d_mean
            .iter()
            .zip(&p.d_std)
            .map(|(&dm, &ds)| {
                let dsig = match self.mode {
                    SigmaMode::Latent => ds,
                    SigmaMode::Combined if sigma > T::zero() => p.std * ds / sigma,
                    SigmaMode::Combined => T::zero(),
                };
                dm + self.z * dsig
            })
            .collect();
        (p.mean + self.z * sigma - self.g_max, grad)
    }

    fn probability(&self, x: &[T]) -> T {
        let p = self.model.predict(x);
        prob_below(self.g_max, p.mean, self.spread(p.std))
    }
}

/// Pointwise constrained minimizer at one context.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseOptimum<T> {
    pub theta: Vec<T>,
    pub objective: T,
    pub feasibility: T,
}

struct Problem<'a, T, J: ?Sized, G: ?Sized> {
    objective: &'a J,
    constraint: ChanceConstraint<'a, T, G>,
    lower: Vec<T>,
    widths: Vec<T>,
    contexts: Vec<T>,
    gamma: T,
    j_scale: T,
    g_scale: T,
}

impl<T: Real, J: Posterior<T> + ?Sized, G: Posterior<T> + ?Sized> Problem<'_, T, J, G> {
    fn d(&self) -> usize {
        self.lower.len()
    }

    fn raw(&self, z: &[T], n: usize) -> Vec<T> {
        let d = self.d();
        (0..d).map(|k| self.lower[k] + self.widths[k] * z[n * d + k]).collect()
    }

    fn point(&self, z: &[T], n: usize) -> Vec<T> {
        let mut x = self.raw(z, n);
        x.push(self.contexts[n]);
        x
    }

    fn penalized(&self, z: &[T], rho: T, grad: &mut [T]) -> T {
        let d = self.d();
        let n = self.contexts.len();
        let parts: Vec<(T, Vec<T>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = self.point(z, i);
                let pj = self.objective.predict_with_grad(&x);
                let mut f = pj.mean / self.j_scale;
                let mut g: Vec<T> = (0..d).map(|k| pj.d_mean[k] * self.widths[k] / self.j_scale).collect();
                let (c, dc) = self.constraint.margin_with_grad(&x);
                let c = c / self.g_scale;
                if c > T::zero() {
                    f += rho * c * c;
                    for k in 0..d {
                        g[k] += T::lit(2.0) * rho * c * dc[k] * self.widths[k] / self.g_scale;
                    }
                }
                (f, g)
            })
            .collect();
        let mut total = T::zero();
        for (i, (f, g)) in parts.into_iter().enumerate() {
            total += f;
            grad[i * d..(i + 1) * d].copy_from_slice(&g);
        }
        if self.gamma > T::zero() {
            let w = self.gamma / self.j_scale;
            for i in 0..n.saturating_sub(2) {
                for k in 0..d {
                    let (a, b, c) = (i * d + k, (i + 1) * d + k, (i + 2) * d + k);
                    let e = self.widths[k] * (z[a] - z[b] - z[b] + z[c]);
                    total += w * e * e;
                    let ge = T::lit(2.0) * w * e * self.widths[k];
                    grad[a] += ge;
                    grad[b] -= ge + ge;
                    grad[c] += ge;
                }
            }
        }
        total
    }

    /// Local minimum of the single-context margin, started from `z0`.
    fn least_violating(&self, z0: &[T]) -> (Vec<T>, T) {
        let d = self.d();
        let opts = MinimizeOptions { max_iter: 200, grad_tol: T::lit(1e-10), rel_tol: T::lit(1e-14), ..Default::default() };
        let res = minimize_box(
            |z: &[T], g: &mut [T]| {
                let (c, dc) = self.constraint.margin_with_grad(&self.point(z, 0));
                for k in 0..d {
                    g[k] = dc[k] * self.widths[k] / self.g_scale;
                }
                c / self.g_scale
            },
            z0,
            &vec![T::zero(); d],
            &vec![T::one(); d],
            &opts,
        );
        let margin = self.constraint.margin(&self.point(&res.x, 0));
        (res.x, margin)
    }

    fn feasible(&self, z: &[T], n: usize) -> bool {
        !(self.constraint.margin(&self.point(z, n)) > T::zero())
    }

    /// Penalty continuation from `z0`. Every block of `fallback` must be feasible.
    fn solve(&self, z0: &[T], fallback: &[T]) -> Vec<T> {
        let m = z0.len();
        let zeros = vec![T::zero(); m];
        let ones = vec![T::one(); m];
        let opts = MinimizeOptions { max_iter: 200, grad_tol: T::lit(1e-9), rel_tol: T::lit(1e-13), ..Default::default() };
        let mut z = z0.to_vec();
        let mut rho = T::lit(1e2);
        while rho <= T::lit(1e8) * T::lit(1.000_001) {
            let res = minimize_box(|x: &[T], g: &mut [T]| self.penalized(x, rho, g), &z, &zeros, &ones, &opts);
            if res.value.is_finite() {
                z = res.x;
            }
            rho *= T::lit(10.0);
        }
        self.repair(&mut z, fallback);
        z
    }

    /// Pushes each infeasible block back across the constraint boundary,
    /// first by small steps along the margin gradient and otherwise by
    /// bisecting toward its feasible fallback.
    fn repair(&self, z: &mut [T], fallback: &[T]) {
        let d = self.d();
        for n in 0..self.contexts.len() {
            if self.feasible(z, n) || self.project(z, n) {
                continue;
            }
            let target: Vec<T> = z[n * d..(n + 1) * d].to_vec();
            let base = &fallback[n * d..(n + 1) * d];
            let (mut lo, mut hi) = (T::zero(), T::one());
            let mut trial = z.to_vec();
            for _ in 0..60 {
                let t = T::lit(0.5) * (lo + hi);
                for k in 0..d {
                    trial[n * d + k] = base[k] + t * (target[k] - base[k]);
                }
                if self.feasible(&trial, n) {
                    lo = t;
                } else {
                    hi = t;
                }
            }
            for k in 0..d {
                z[n * d + k] = base[k] + lo * (target[k] - base[k]);
            }
            log::debug!("repaired grid point {n} by bisection (step {lo})");
        }
    }

    /// Gauss-Newton steps on the margin of block `n`, overshooting the
    /// boundary slightly. Leaves `z` untouched and returns false on failure.
    fn project(&self, z: &mut [T], n: usize) -> bool {
        let d = self.d();
        let mut trial = z.to_vec();
        for _ in 0..20 {
            let (c, dc) = self.constraint.margin_with_grad(&self.point(&trial, n));
            if !(c > T::zero()) {
                z.copy_from_slice(&trial);
                return true;
            }
            let dz: Vec<T> = (0..d).map(|k| dc[k] * self.widths[k]).collect();
            let norm2: T = dz.iter().map(|v| *v * *v).sum();
            if !(norm2 > T::zero()) || !c.is_finite() {
                return false;
            }
            let step = (c * T::lit(1.0 + 1e-6) + T::lit(1e-12) * self.g_scale) / norm2;
            for k in 0..d {
                trial[n * d + k] = clamp(trial[n * d + k] - step * dz[k], T::zero(), T::one());
            }
        }
        false
    }
}

fn chance<'a, T: Real, G: Posterior<T> + ?Sized>(model: &'a G, delta: T, g_max: T, mode: SigmaMode) -> ChanceConstraint<'a, T, G> {
    ChanceConstraint { model, g_max, z: norm_quantile(delta + T::lit(STRICT_MARGIN)), mode }
}

fn scale_of<T: Real, P: Posterior<T> + ?Sized>(p: &P) -> T {
    let s = p.target_scale();
    if s > T::zero() && s.is_finite() {
        s
    } else {
        T::one()
    }
}

/// Constrained minimizer of the objective mean at context `s`: dense
/// candidate grid, then local refinement.
#[allow(clippy::too_many_arguments)]
pub fn pointwise_optimum<T: Real, J: Posterior<T> + ?Sized, G: Posterior<T> + ?Sized>(
    objective: &J,
    constraint: &G,
    s: T,
    delta: T,
    g_max: T,
    bounds: (&[T], &[T]),
    sigma_mode: SigmaMode,
    resolution: usize,
) -> Result<PointwiseOptimum<T>, SmootherError> {
    let (lower, upper) = bounds;
    let d = lower.len();
    let unit_lo = vec![T::zero(); d];
    let unit_hi = vec![T::one(); d];
    let problem = Problem {
        objective,
        constraint: chance(constraint, delta, g_max, sigma_mode),
        lower: lower.to_vec(),
        widths: lower.iter().zip(upper).map(|(&a, &b)| b - a).collect(),
        contexts: vec![s],
        gamma: T::zero(),
        j_scale: scale_of(objective),
        g_scale: scale_of(constraint),
    };
    let candidates = tensor_grid(resolution, &unit_lo, &unit_hi);
    let scored: Vec<(T, T, T)> = candidates
        .par_iter()
        .map(|z| {
            let x = problem.point(z, 0);
            (problem.constraint.margin(&x), objective.predict(&x).mean, problem.constraint.probability(&x))
        })
        .collect();
    let mut best: Option<usize> = None;
    for (i, c) in scored.iter().enumerate() {
        if c.0 > T::zero() {
            continue;
        }
        if best.map_or(true, |b| c.1 < scored[b].1) {
            best = Some(i);
        }
    }
    let (start, start_mean) = match best {
        Some(b) => (candidates[b].clone(), scored[b].1),
        None => {
            // The feasible set may lie between grid nodes: descend the margin
            // from the least violating candidates before giving up.
            let mut order: Vec<usize> = (0..scored.len()).collect();
            order.sort_by(|&a, &b| scored[a].0.partial_cmp(&scored[b].0).unwrap_or(std::cmp::Ordering::Equal));
            let escaped = order.iter().take(4).map(|&i| problem.least_violating(&candidates[i])).min_by(|a, b| {
                a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal)
            });
            match escaped {
                Some((z, m)) if !(m > T::zero()) => {
                    let mean = objective.predict(&problem.point(&z, 0)).mean;
                    (z, mean)
                }
                other => {
                    let refined = other.map_or(0.0, |(z, _)| problem.constraint.probability(&problem.point(&z, 0)).to_f64_lossy());
                    let max_feasibility = scored.iter().map(|c| c.2.to_f64_lossy()).fold(refined, f64::max);
                    return Err(SmootherError::Infeasible { context: s.to_f64_lossy(), max_feasibility });
                }
            }
        }
    };
    let refined = problem.solve(&start, &start);
    let z = if objective.predict(&problem.point(&refined, 0)).mean <= start_mean { refined } else { start };
    let x = problem.point(&z, 0);
    Ok(PointwiseOptimum {
        theta: problem.raw(&z, 0),
        objective: objective.predict(&x).mean,
        feasibility: problem.constraint.probability(&x),
    })
}

/// Pointwise optima at every grid context, as an unsmoothed policy.
pub fn pointwise_policy<T: Real, J: Posterior<T> + ?Sized, G: Posterior<T> + ?Sized>(
    objective: &J,
    constraint: &G,
    config: &SmootherConfig<T>,
) -> Result<Policy<T>, SmootherError> {
    config.validate()?;
    let grid = config.grid();
    let optima: Vec<PointwiseOptimum<T>> = grid
        .iter()
        .map(|&s| {
            pointwise_optimum(
                objective,
                constraint,
                s,
                config.delta,
                config.g_max,
                (&config.theta_min, &config.theta_max),
                config.sigma_mode,
                config.pointwise_resolution,
            )
        })
        .collect::<Result<_, _>>()?;
    Ok(Policy {
        grid,
        params: optima.iter().map(|o| o.theta.clone()).collect(),
        feasibility: optima.iter().map(|o| o.feasibility).collect(),
        delta: Some(config.delta),
        gamma: Some(T::zero()),
    })
}

/// Smoothed policy; also returns the unsmoothed pointwise policy used as
/// the initial guess.
pub fn smooth_with_pointwise<T: Real, J: Posterior<T> + ?Sized, G: Posterior<T> + ?Sized>(
    objective: &J,
    constraint: &G,
    config: &SmootherConfig<T>,
) -> Result<(Policy<T>, Policy<T>), SmootherError> {
    let pointwise = pointwise_policy(objective, constraint, config)?;
    let widths = config.widths();
    let problem = |gamma: T| Problem {
        objective,
        constraint: chance(constraint, config.delta, config.g_max, config.sigma_mode),
        lower: config.theta_min.clone(),
        widths: widths.clone(),
        contexts: pointwise.grid.clone(),
        gamma,
        j_scale: scale_of(objective),
        g_scale: scale_of(constraint),
    };
    let z0: Vec<T> = pointwise
        .params
        .iter()
        .flat_map(|t| t.iter().enumerate().map(|(k, &v)| (v - config.theta_min[k]) / widths[k]).collect::<Vec<_>>())
        .collect();
    let finish = |gamma: T, z: &[T]| -> Policy<T> {
        let p = problem(gamma);
        let n = pointwise.grid.len();
        Policy {
            grid: pointwise.grid.clone(),
            params: (0..n).map(|i| p.raw(z, i)).collect(),
            feasibility: (0..n).map(|i| p.constraint.probability(&p.point(z, i))).collect(),
            delta: Some(config.delta),
            gamma: Some(gamma),
        }
    };

    let policy = match config.gamma {
        Some(gamma) => {
            let z = problem(gamma).solve(&z0, &z0);
            finish(gamma, &z)
        }
        None => {
            let mut chosen = None;
            for &g in &GAMMA_LADDER {
                let gamma = T::lit(g);
                let z = problem(gamma).solve(&z0, &z0);
                let p = finish(gamma, &z);
                let rough = p.max_second_difference(&widths);
                log::debug!("smoothing weight {g:e}: max second difference {rough}");
                chosen = Some(p);
                if rough <= config.max_second_difference {
                    break;
                }
            }
            let p = chosen.expect("non-empty ladder");
            if p.max_second_difference(&widths) > config.max_second_difference {
                log::warn!("no smoothing weight reached the roughness target; using the largest");
            }
            p
        }
    };
    Ok((policy, pointwise))
}

/// Smoothed chance-feasible policy over the configured context grid.
pub fn smooth<T: Real, J: Posterior<T> + ?Sized, G: Posterior<T> + ?Sized>(
    objective: &J,
    constraint: &G,
    config: &SmootherConfig<T>,
) -> Result<Policy<T>, SmootherError> {
    smooth_with_pointwise(objective, constraint, config).map(|p| p.0)
}

/// Summed objective mean of a policy over its grid.
pub fn policy_objective<T: Real, J: Posterior<T> + ?Sized>(objective: &J, policy: &Policy<T>) -> T {
    policy
        .grid
        .iter()
        .zip(&policy.params)
        .map(|(&s, t)| {
            let mut x = t.clone();
            x.push(s);
            objective.predict(&x).mean
        })
        .sum()
}

/// Feasibility probability of a policy's grid points under `constraint`.
pub fn policy_feasibility<T: Real, G: Posterior<T> + ?Sized>(
    constraint: &G,
    policy: &Policy<T>,
    g_max: T,
    mode: SigmaMode,
) -> Vec<T> {
    let c = ChanceConstraint { model: constraint, g_max, z: T::zero(), mode };
    policy
        .grid
        .iter()
        .zip(&policy.params)
        .map(|(&s, t)| {
            let mut x = t.clone();
            x.push(s);
            c.probability(&x)
        })
        .collect()
}
