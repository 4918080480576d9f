//! Linear MPC for the cabin with move suppression and a fixed-gain
//! input-disturbance observer.

use serde::{Deserialize, Serialize};

use super::plant::{Disturbance, PlantParams, PlantState, N_STATES, N_ZONES};
use crate::linalg::{Cholesky, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    /// Prediction horizon in control steps.
    pub n2: usize,
    /// Tracking weights per zone.
    pub q: [f64; 3],
    /// Move weight of zone 3 at every horizon step.
    pub third_zone_weight: f64,
    pub t_mix_min: f64,
    pub t_mix_max: f64,
    /// Control interval (s).
    pub control_interval: f64,
    pub observer_gain: f64,
    pub max_iter: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            n2: 60,
            q: [1.0; 3],
            third_zone_weight: 1.0,
            t_mix_min: 273.15,
            t_mix_max: 333.15,
            control_interval: 2.0,
            observer_gain: 0.1,
            max_iter: 50,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n2 < 2 {
            return Err("n2 must be at least 2".into());
        }
        if self.q.iter().any(|&q| !(q >= 0.0 && q.is_finite())) || !(self.third_zone_weight > 0.0) {
            return Err("weights must be non-negative and the zone-3 move weight positive".into());
        }
        if !(self.t_mix_min < self.t_mix_max) {
            return Err("t_mix_min must be below t_mix_max".into());
        }
        if !(self.control_interval > 0.0) {
            return Err("control_interval must be positive".into());
        }
        if !(self.observer_gain > 0.0 && self.observer_gain <= 1.0) {
            return Err("observer_gain must lie in (0, 1]".into());
        }
        Ok(())
    }
}

/// Move weights of the two front zones, `λ = 10^θ1`, `λ0 = 10^θ2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningVector {
    pub log_lambda: f64,
    pub log_lambda0: f64,
}

impl TuningVector {
    pub fn from_theta(theta: &[f64]) -> Self {
        TuningVector { log_lambda: theta[0], log_lambda0: theta[1] }
    }

    pub fn lambda(&self) -> f64 {
        10f64.powf(self.log_lambda)
    }

    pub fn lambda0(&self) -> f64 {
        10f64.powf(self.log_lambda0)
    }
}

/// Move-weight matrix: rows are zones, columns horizon steps. Front zones
/// use `λ0` at the first step and `λ` afterwards; zone 3 is fixed.
pub fn move_weights(tuning: &TuningVector, config: &MpcConfig) -> Vec<[f64; 3]> {
    let (l, l0) = (tuning.lambda(), tuning.lambda0());
    (0..config.n2)
        .map(|p| {
            let front = if p == 0 { l0 } else { l };
            [front, front, config.third_zone_weight]
        })
        .collect()
}

/// Discrete model `x⁺ = A x + B u + E w` over one control interval.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: Matrix<f64>,
    pub b: Matrix<f64>,
    pub e: Matrix<f64>,
}

impl LinearModel {
    /// `x⁺` with input disturbance `d` added to the air states.
    pub fn predict(&self, x: &[f64], u: &[f64; 3], w: Disturbance, d: &[f64; 3]) -> Vec<f64> {
        let mut next = self.a.mul_vec(x);
        let bu = self.b.mul_vec(u);
        let ew = self.e.mul_vec(&[w.t_ambient, w.q_solar]);
        for i in 0..N_STATES {
            next[i] += bu[i] + ew[i];
        }
        for i in 0..N_ZONES {
            next[i] += d[i];
        }
        next
    }

    pub fn spectral_radius_bound(&self, iterations: usize) -> f64 {
        // ‖A^k‖^(1/k) in the infinity norm tends to the spectral radius.
        let mut p = self.a.clone();
        for _ in 1..iterations {
            p = p.matmul(&self.a);
        }
        let norm = (0..p.nrows()).map(|i| p.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        norm.powf(1.0 / iterations as f64)
    }
}

/// Discrete model of the nominal plant at constant mass flow, composed of
/// the plant's own Euler substeps so both agree exactly.
pub fn linearize(params: &PlantParams, m_dot: f64, control_interval: f64, sim_dt: f64) -> LinearModel {
    let (ac, bc, ec) = params.continuous(m_dot);
    let substeps = (control_interval / sim_dt).round().max(1.0) as usize;
    let mut a1 = ac.clone();
    for i in 0..N_STATES {
        for j in 0..N_STATES {
            a1[(i, j)] = sim_dt * ac[(i, j)] + if i == j { 1.0 } else { 0.0 };
        }
    }
    let scale = |m: &Matrix<f64>| Matrix::from_fn(m.nrows(), m.ncols(), |i, j| sim_dt * m[(i, j)]);
    let (b1, e1) = (scale(&bc), scale(&ec));
    let mut a = Matrix::identity(N_STATES);
    let mut b = Matrix::zeros(N_STATES, N_ZONES);
    let mut e = Matrix::zeros(N_STATES, 2);
    for _ in 0..substeps {
        // (A, B, E) ← (A1 A, A1 B + B1, A1 E + E1)
        a = a1.matmul(&a);
        b = add(&a1.matmul(&b), &b1);
        e = add(&a1.matmul(&e), &e1);
    }
    LinearModel { a, b, e }
}

fn add(x: &Matrix<f64>, y: &Matrix<f64>) -> Matrix<f64> {
    Matrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] + y[(i, j)])
}

/// Result of one controller call.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub command: [f64; 3],
    /// Quadratic cost of the returned plan, up to a constant.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The move-free plan was cheaper than the solver's plan.
    pub zero_move: bool,
}

/// Condensed QP for a fixed model and weights.
#[derive(Debug, Clone)]
pub struct Mpc {
    config: MpcConfig,
    model: LinearModel,
    weights: Vec<[f64; 3]>,
    /// Air rows of `A^p`, p = 0..n2.
    free_x: Vec<Matrix<f64>>,
    /// Air rows of `Σ_{i<p} A^i`, mapping a constant per-step input.
    free_c: Vec<Matrix<f64>>,
    /// Tracking block of the condensed prediction: rows 3p.., columns 3i...
    phi: Matrix<f64>,
    hessian: Matrix<f64>,
    chol: Cholesky<f64>,
    warm: Option<Vec<f64>>,
}

impl Mpc {
    pub fn new(model: LinearModel, tuning: &TuningVector, config: &MpcConfig) -> Self {
        let weights = move_weights(tuning, config);
        Self::with_weights(model, weights, config)
    }

    /// Controller with an explicit move-weight matrix (one row per step).
    pub fn with_weights(model: LinearModel, weights: Vec<[f64; 3]>, config: &MpcConfig) -> Self {
        let n2 = config.n2;
        let nu = N_ZONES * n2;
        let air = |m: &Matrix<f64>| Matrix::from_fn(N_ZONES, m.ncols(), |i, j| m[(i, j)]);
        let mut powers = vec![Matrix::identity(N_STATES)];
        for p in 1..n2 {
            powers.push(model.a.matmul(&powers[p - 1]));
        }
        let mut sums = vec![Matrix::zeros(N_STATES, N_STATES)];
        for p in 1..n2 {
            sums.push(add(&sums[p - 1], &powers[p - 1]));
        }
        let free_x: Vec<_> = powers.iter().map(air).collect();
        let free_c: Vec<_> = sums.iter().map(air).collect();
        let ab: Vec<Matrix<f64>> = powers.iter().map(|p| air(&p.matmul(&model.b))).collect();
        let mut phi = Matrix::zeros(nu, nu);
        for p in 1..n2 {
            for i in 0..p {
                let blk = &ab[p - 1 - i];
                for r in 0..N_ZONES {
                    for c in 0..N_ZONES {
                        phi[(3 * p + r, 3 * i + c)] = blk[(r, c)];
                    }
                }
            }
        }
        // H = 2 (Φᵀ Q Φ + Dᵀ Λ D)
        let mut hessian = Matrix::zeros(nu, nu);
        for k in 0..nu {
            // Row k of Φ is zero beyond its block column.
            let nz = 3 * (k / 3);
            let row = phi.row(k);
            let q = 2.0 * config.q[k % 3];
            for i in 0..nz {
                let w = q * row[i];
                if w == 0.0 {
                    continue;
                }
                let h = &mut hessian.row_mut(i)[..nz];
                for (hj, rj) in h.iter_mut().zip(&row[..nz]) {
                    *hj += w * rj;
                }
            }
        }
        for p in 0..n2 {
            for z in 0..N_ZONES {
                let w = weights[p][z];
                let a = 3 * p + z;
                hessian[(a, a)] += 2.0 * w;
                if p > 0 {
                    let b = 3 * (p - 1) + z;
                    hessian[(b, b)] += 2.0 * w;
                    hessian[(a, b)] -= 2.0 * w;
                    hessian[(b, a)] -= 2.0 * w;
                }
            }
        }
        let chol = Cholesky::new(&hessian).expect("move weights make the QP strictly convex");
        Mpc { config: config.clone(), model, weights, free_x, free_c, phi, hessian, chol, warm: None }
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    /// Linear term of the condensed QP.
    fn gradient_offset(&self, x0: &[f64], c: &[f64], reference: &[f64; 3], previous: &[f64; 3]) -> Vec<f64> {
        let n2 = self.config.n2;
        let nu = 3 * n2;
        let mut resid = vec![0.0; nu];
        for p in 0..n2 {
            let fx = self.free_x[p].mul_vec(x0);
            let fc = self.free_c[p].mul_vec(c);
            for z in 0..N_ZONES {
                resid[3 * p + z] = self.config.q[z] * (fx[z] + fc[z] - reference[z]);
            }
        }
        let mut g = vec![0.0; nu];
        for (k, r) in resid.iter().enumerate() {
            if *r == 0.0 {
                continue;
            }
            let nz = 3 * (k / 3);
            for (gj, pj) in g[..nz].iter_mut().zip(&self.phi.row(k)[..nz]) {
                *gj += 2.0 * pj * r;
            }
        }
        for z in 0..N_ZONES {
            g[z] -= 2.0 * self.weights[0][z] * previous[z];
        }
        g
    }

    fn cost(&self, u: &[f64], g: &[f64]) -> f64 {
        let hu = self.hessian.mul_vec(u);
        u.iter().zip(&hu).zip(g).map(|((ui, hi), gi)| 0.5 * ui * hi + gi * ui).sum()
    }

    fn linear_term(
        &self,
        state: &PlantState,
        disturbance_estimate: &[f64; 3],
        disturbance: Disturbance,
        reference: &[f64; 3],
        previous: &[f64; 3],
    ) -> Vec<f64> {
        let mut c = self.model.e.mul_vec(&[disturbance.t_ambient, disturbance.q_solar]);
        for z in 0..N_ZONES {
            c[z] += disturbance_estimate[z];
        }
        self.gradient_offset(&state.to_vec(), &c, reference, previous)
    }

    /// Cost of repeating `previous` over the horizon, on the scale of
    /// [`MpcSolution::cost`].
    pub fn hold_cost(
        &self,
        state: &PlantState,
        disturbance_estimate: &[f64; 3],
        disturbance: Disturbance,
        reference: &[f64; 3],
        previous: &[f64; 3],
    ) -> f64 {
        let g = self.linear_term(state, disturbance_estimate, disturbance, reference, previous);
        let (lo, hi) = (self.config.t_mix_min, self.config.t_mix_max);
        let hold: Vec<f64> = (0..g.len()).map(|k| previous[k % 3].clamp(lo, hi)).collect();
        self.cost(&hold, &g)
    }

    /// First move of the constrained plan for a reference held over the horizon.
    pub fn solve(
        &mut self,
        state: &PlantState,
        disturbance_estimate: &[f64; 3],
        disturbance: Disturbance,
        reference: &[f64; 3],
        previous: &[f64; 3],
    ) -> MpcSolution {
        let nu = 3 * self.config.n2;
        let g = self.linear_term(state, disturbance_estimate, disturbance, reference, previous);
        let (lo, hi) = (self.config.t_mix_min, self.config.t_mix_max);
        let hold: Vec<f64> = (0..nu).map(|k| previous[k % 3]).collect();

        let mut u: Vec<f64> = self.chol.solve(&g.iter().map(|v| -v).collect::<Vec<_>>());
        let mut iterations = 0;
        let mut converged = true;
        if u.iter().any(|&v| v < lo || v > hi) {
            let start = self.warm.clone().unwrap_or_else(|| hold.clone());
            let (plan, its, ok) = projected_newton(&self.hessian, &g, start, lo, hi, self.config.max_iter);
            u = plan;
            iterations = its;
            converged = ok;
        }
        let hold_clamped: Vec<f64> = hold.iter().map(|v| v.clamp(lo, hi)).collect();
        let plan_cost = self.cost(&u, &g);
        let hold_cost = self.cost(&hold_clamped, &g);
        let (u, cost, zero_move) = if converged && plan_cost <= hold_cost { (u, plan_cost, false) } else { (hold_clamped, hold_cost, true) };
        // Shifted plan as the next warm start.
        let mut next = u[3..].to_vec();
        next.extend_from_slice(&u[nu - 3..]);
        self.warm = Some(next);
        MpcSolution { command: [u[0], u[1], u[2]], cost, iterations, converged, zero_move }
    }
}

/// Box-constrained minimizer of `½uᵀHu + gᵀu` by projected Newton steps
/// with an Armijo search along the projection arc.
pub fn projected_newton(h: &Matrix<f64>, g: &[f64], start: Vec<f64>, lo: f64, hi: f64, max_iter: usize) -> (Vec<f64>, usize, bool) {
    let n = g.len();
    let f = |u: &[f64]| -> f64 {
        let hu = h.mul_vec(u);
        u.iter().zip(&hu).zip(g).map(|((ui, hi), gi)| 0.5 * ui * hi + gi * ui).sum()
    };
    let mut u: Vec<f64> = start.into_iter().map(|v| v.clamp(lo, hi)).collect();
    let eps = 1e-9 * (hi - lo);
    for it in 0..max_iter {
        let mut grad = h.mul_vec(&u);
        for i in 0..n {
            grad[i] += g[i];
        }
        let pg = (0..n).map(|i| (u[i] - (u[i] - grad[i]).clamp(lo, hi)).abs()).fold(0.0, f64::max);
        if pg <= 1e-9 * (1.0 + u.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
            return (u, it, true);
        }
        let free: Vec<usize> = (0..n)
            .filter(|&i| !((u[i] <= lo + eps && grad[i] > 0.0) || (u[i] >= hi - eps && grad[i] < 0.0)))
            .collect();
        let mut d = vec![0.0; n];
        if !free.is_empty() {
            let hf = h.select(&free);
            let Some(ch) = Cholesky::new(&hf) else {
                return (u, it, false);
            };
            let rhs: Vec<f64> = free.iter().map(|&i| -grad[i]).collect();
            let step = ch.solve(&rhs);
            for (k, &i) in free.iter().enumerate() {
                d[i] = step[k];
            }
        }
        let f0 = f(&u);
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = (0..n).map(|i| (u[i] + alpha * d[i]).clamp(lo, hi)).collect();
            let decrease: f64 = (0..n).map(|i| grad[i] * (u[i] - trial[i])).sum();
            if f(&trial) <= f0 - 1e-4 * decrease {
                moved = trial != u;
                u = trial;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            // Fall back to a projected gradient step on the active bounds.
            let trial: Vec<f64> = (0..n).map(|i| (u[i] - grad[i] / h[(i, i)]).clamp(lo, hi)).collect();
            if f(&trial) < f0 {
                u = trial;
            } else {
                return (u, it + 1, pg <= 1e-6 * (hi - lo));
            }
        }
    }
    (u, max_iter, false)
}

/// Fixed-gain estimate of constant input disturbances on the air states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observer {
    pub gain: f64,
    pub estimate: [f64; 3],
}

impl Observer {
    pub fn new(gain: f64) -> Self {
        Observer { gain, estimate: [0.0; 3] }
    }

    /// Moves the estimate by `gain` times the one-step prediction error.
    pub fn update(&mut self, measured: &[f64; 3], predicted: &[f64; 3]) {
        for z in 0..N_ZONES {
            self.estimate[z] += self.gain * (measured[z] - predicted[z]);
        }
    }
}
