//! Synthetic contextual constrained problems with brute-force oracles.
//!
//! All problems have θ ∈ [0, 1]² and s ∈ [0, 1]. Observations carry additive
//! Gaussian noise on both the objective and the constraint.

use std::io::{Read, Write};
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::distributions::Distribution;
use serde::{Deserialize, Serialize};
use statrs::distribution::Normal;
use thiserror::Error;

use crate::error::{EvaluationFailure, IoError, TunerError};
use crate::scalar::Real;
use crate::smoother::{smooth_with_pointwise, Policy, SmootherConfig, SmootherError};
use crate::stats::norm_quantile_f64;
use crate::tuner::{ContextSource, Evaluator, Tuner, TuningConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    SinRidge,
    Switcher,
    FlatValley,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProblem {
    pub kind: ProblemKind,
    pub objective_noise: f64,
    pub constraint_noise: f64,
    pub g_max: f64,
}

/// Context grid of the committed oracle files.
pub const GOLDEN_GRID: usize = 21;
/// Oracle search points per parameter dimension.
pub const ORACLE_RESOLUTION: usize = 400;
/// Confidence level of the committed oracle files.
pub const GOLDEN_DELTA: f64 = 0.93;

fn gauss2(theta: &[f64], c: (f64, f64), w: f64) -> f64 {
    let r2 = (theta[0] - c.0).powi(2) + (theta[1] - c.1).powi(2);
    (-r2 / (2.0 * w * w)).exp()
}

impl SyntheticProblem {
    pub fn new(kind: ProblemKind) -> Self {
        SyntheticProblem { kind, objective_noise: 0.02, constraint_noise: 0.01, g_max: 0.0 }
    }

    pub fn all() -> Vec<Self> {
        [ProblemKind::SinRidge, ProblemKind::Switcher, ProblemKind::FlatValley].into_iter().map(Self::new).collect()
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Self::all().into_iter().find(|p| p.name() == name)
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ProblemKind::SinRidge => "sin-ridge",
            ProblemKind::Switcher => "switcher",
            ProblemKind::FlatValley => "flat-valley",
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.objective_noise = 0.0;
        self.constraint_noise = 0.0;
        self
    }

    pub fn objective_exact(&self, theta: &[f64], s: f64) -> f64 {
        match self.kind {
            ProblemKind::SinRidge => {
                let c1 = 0.25 + 0.6 * s;
                let c2 = 0.5 + 0.25 * (2.0 * std::f64::consts::PI * s).sin();
                (theta[0] - c1).powi(2) + (theta[1] - c2).powi(2)
            }
            ProblemKind::Switcher => 1.0 - 0.8 * gauss2(theta, (0.2, 0.3), 0.15) - gauss2(theta, (0.8, 0.7), 0.15),
            ProblemKind::FlatValley => 0.002 * (theta[0] - 0.5).powi(2) + (theta[1] - 0.3 - 0.4 * s).powi(2),
        }
    }

    pub fn constraint_exact(&self, theta: &[f64], s: f64) -> f64 {
        match self.kind {
            ProblemKind::SinRidge => theta[0] + 0.3 * theta[1] - 0.75,
            ProblemKind::Switcher => theta[0] + s - 1.3,
            ProblemKind::FlatValley => theta[1] - 0.6,
        }
    }

    /// Noisy observation of `(j, g)`.
    pub fn evaluate(&self, theta: &[f64], s: f64, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise = |sd: f64| if sd > 0.0 { Normal::new(0.0, sd).expect("positive spread").sample(&mut rng) } else { 0.0 };
        let ej = noise(self.objective_noise);
        let eg = noise(self.constraint_noise);
        (self.objective_exact(theta, s) + ej, self.constraint_exact(theta, s) + eg)
    }

    /// Largest exact constraint value satisfying the chance constraint at `delta`.
    pub fn constraint_limit(&self, delta: f64, g_max: f64) -> f64 {
        if self.constraint_noise > 0.0 {
            g_max - self.constraint_noise * norm_quantile_f64(delta)
        } else {
            g_max
        }
    }

    pub fn tuning_config(&self, budget: usize, delta: f64, seed: u64) -> TuningConfig<f64> {
        TuningConfig {
            theta_min: vec![0.0, 0.0],
            theta_max: vec![1.0, 1.0],
            s_min: 0.0,
            s_max: 1.0,
            g_max: self.g_max,
            delta,
            budget,
            n_initial: 10,
            gamma: None,
            n_grid: GOLDEN_GRID,
            seed,
            gp: Default::default(),
            acquisition: Default::default(),
        }
    }
}

impl<T: Real> Evaluator<T> for SyntheticProblem {
    fn evaluate(&self, theta: &[T], context: T, seed: u64) -> Result<(T, T), EvaluationFailure> {
        let th: Vec<f64> = theta.iter().map(|v| v.to_f64_lossy()).collect();
        let (j, g) = SyntheticProblem::evaluate(self, &th, context.to_f64_lossy(), seed);
        Ok((T::lit(j), T::lit(g)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub s: f64,
    pub theta: [f64; 2],
    pub j: f64,
    pub feasible: bool,
}

/// Exhaustive grid search for the chance-constrained optimum at each context.
/// Infeasible contexts report the point with the smallest constraint value.
pub fn oracle_policy(problem: &SyntheticProblem, delta: f64, g_max: f64, contexts: &[f64], resolution: usize) -> Vec<OracleRow> {
    let limit = problem.constraint_limit(delta, g_max);
    let rows = grid_oracle(|t, s| problem.objective_exact(t, s), |t, s| problem.constraint_exact(t, s), limit, contexts, resolution);
    for r in rows.iter().filter(|r| !r.feasible) {
        log::warn!("{}: no feasible parameters at s={}", problem.name(), r.s);
    }
    rows
}

/// Grid search over [0, 1]² for `min j` subject to `g ≤ limit`. Ties keep
/// the first grid point in row-major order.
pub fn grid_oracle(
    objective: impl Fn(&[f64], f64) -> f64,
    constraint: impl Fn(&[f64], f64) -> f64,
    limit: f64,
    contexts: &[f64],
    resolution: usize,
) -> Vec<OracleRow> {
    let axis: Vec<f64> = (0..resolution).map(|i| i as f64 / (resolution - 1) as f64).collect();
    contexts
        .iter()
        .map(|&s| {
            let mut best: Option<([f64; 2], f64)> = None;
            let mut least: ([f64; 2], f64) = ([0.0, 0.0], f64::INFINITY);
            for &a in &axis {
                for &b in &axis {
                    let th = [a, b];
                    let g = constraint(&th, s);
                    if g < least.1 {
                        least = (th, g);
                    }
                    if g <= limit {
                        let j = objective(&th, s);
                        if best.map_or(true, |(_, bj)| j < bj) {
                            best = Some((th, j));
                        }
                    }
                }
            }
            match best {
                Some((theta, j)) => OracleRow { s, theta, j, feasible: true },
                None => OracleRow { s, theta: least.0, j: objective(&least.0, s), feasible: false },
            }
        })
        .collect()
}

pub fn golden_contexts() -> Vec<f64> {
    (0..GOLDEN_GRID).map(|i| i as f64 / (GOLDEN_GRID - 1) as f64).collect()
}

pub fn golden_path(problem: &SyntheticProblem) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("golden").join(format!("{}.csv", problem.name()))
}

pub fn write_oracle<W: Write>(rows: &[OracleRow], out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["s", "theta1*", "theta2*", "j*", "feasible"])?;
    for r in rows {
        w.write_record([r.s.to_string(), r.theta[0].to_string(), r.theta[1].to_string(), r.j.to_string(), r.feasible.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_oracle<R: Read>(input: R) -> Result<Vec<OracleRow>, IoError> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(["s", "theta1*", "theta2*", "j*", "feasible"]) {
        return Err(IoError::Format(format!("unexpected oracle header {:?}", r.headers()?)));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| IoError::Format(format!("{e}: {:?}", &rec[i])));
        let feasible = rec[4].parse::<bool>().map_err(|e| IoError::Format(e.to_string()))?;
        rows.push(OracleRow { s: num(0)?, theta: [num(1)?, num(2)?], j: num(3)?, feasible });
    }
    Ok(rows)
}

pub fn load_golden(problem: &SyntheticProblem) -> Result<Vec<OracleRow>, IoError> {
    read_oracle(std::fs::File::open(golden_path(problem))?)
}

/// Normalized regret of `theta` at context `s`: `(j − j*) / (max j − j*)`
/// with the maximum taken over the parameter box.
pub fn normalized_regret(problem: &SyntheticProblem, theta: &[f64], row: &OracleRow) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for a in 0..=100 {
        for b in 0..=100 {
            worst = worst.max(problem.objective_exact(&[a as f64 / 100.0, b as f64 / 100.0], row.s));
        }
    }
    let range = (worst - row.j).max(1e-12);
    (problem.objective_exact(theta, row.s) - row.j).max(0.0) / range
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Tuner(#[from] TunerError),
    #[error(transparent)]
    Smoother(#[from] SmootherError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Mean normalized regret over oracle-feasible contexts.
    pub suboptimality: f64,
    /// Oracle-feasible contexts where the policy breaks the noise-free constraint.
    pub violations: usize,
    /// Oracle-feasible contexts where the exact chance level falls below delta.
    pub chance_breaches: usize,
    pub max_second_difference: f64,
    pub pointwise_max_jump: f64,
    pub gamma: f64,
    pub surrogate_feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub problem: String,
    pub budget: usize,
    pub delta: f64,
    pub seeds: Vec<SeedResult>,
    pub median_suboptimality: f64,
    pub worst_suboptimality: f64,
    pub violations: usize,
    pub chance_breaches: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyScore {
    pub suboptimality: f64,
    pub violations: usize,
    pub chance_breaches: usize,
}

/// Scores a policy against oracle rows.
pub fn score_policy(problem: &SyntheticProblem, policy: &Policy<f64>, oracle: &[OracleRow], delta: f64) -> PolicyScore {
    let limit = problem.constraint_limit(delta, problem.g_max);
    let mut regret = 0.0;
    let mut counted = 0;
    let mut violations = 0;
    let mut chance_breaches = 0;
    for row in oracle.iter().filter(|r| r.feasible) {
        let theta = policy.query(row.s);
        regret += normalized_regret(problem, &theta, row);
        counted += 1;
        let g = problem.constraint_exact(&theta, row.s);
        if g > problem.g_max {
            violations += 1;
        }
        if g > limit {
            chance_breaches += 1;
        }
    }
    PolicyScore {
        suboptimality: if counted > 0 { regret / counted as f64 } else { 0.0 },
        violations,
        chance_breaches,
    }
}

/// Tunes and smooths one seed, then scores the policy.
pub fn run_seed(problem: &SyntheticProblem, budget: usize, delta: f64, seed: u64, oracle: &[OracleRow]) -> Result<(SeedResult, Policy<f64>, Policy<f64>), BenchError> {
    let config = problem.tuning_config(budget, delta, seed);
    let contexts = ContextSource::uniform((config.s_min, config.s_max), seed);
    let outcome = Tuner::new(&config, &contexts, problem).run()?;
    let sc = SmootherConfig::from_tuning(&config);
    let (policy, pointwise) = smooth_with_pointwise(&outcome.objective, &outcome.constraint, &sc)?;
    let score = score_policy(problem, &policy, oracle, delta);
    let widths = [1.0, 1.0];
    let result = SeedResult {
        seed,
        suboptimality: score.suboptimality,
        violations: score.violations,
        chance_breaches: score.chance_breaches,
        max_second_difference: policy.max_second_difference(&widths),
        pointwise_max_jump: pointwise.max_jump(&widths),
        gamma: policy.gamma.unwrap_or(f64::NAN),
        surrogate_feasible: policy.feasibility.iter().all(|&p| p >= delta + crate::smoother::STRICT_MARGIN * 0.5),
    };
    Ok((result, policy, pointwise))
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn summarize(problem: &SyntheticProblem, budget: usize, delta: f64, seeds: Vec<SeedResult>) -> BenchReport {
    let mut subs: Vec<f64> = seeds.iter().map(|r| r.suboptimality).collect();
    let worst = subs.iter().copied().fold(0.0, f64::max);
    BenchReport {
        problem: problem.name().to_string(),
        budget,
        delta,
        median_suboptimality: median(&mut subs),
        worst_suboptimality: worst,
        violations: seeds.iter().map(|r| r.violations).sum(),
        chance_breaches: seeds.iter().map(|r| r.chance_breaches).sum(),
        seeds,
    }
}
