//! Constrained max-value entropy search.
//!
//! A candidate is scored by the expected reduction in entropy of its
//! objective posterior when truncated at sampled values of the feasible
//! minimum `J*(s)`, weighted by its probability of satisfying `g ≤ g_max`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gp::Posterior;
use crate::rng::{halton, uniform_in_box};
use crate::scalar::Real;
use crate::stats::{log_norm_cdf_f64, norm_pdf_f64, prob_below};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    /// Monte Carlo draws of the feasible minimum.
    pub n_min_value_samples: usize,
    /// Size of the quasi-random candidate set used to fit the minimum distribution.
    pub n_min_value_candidates: usize,
    pub n_random_candidates: usize,
    pub n_local_refinements: usize,
    /// Candidates below this feasibility probability do not take part in the minimum.
    pub feasibility_floor: f64,
    /// Central-difference step, as a fraction of each box width.
    pub fd_step: f64,
    pub max_ascent_iter: usize,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            n_min_value_samples: 32,
            n_min_value_candidates: 512,
            n_random_candidates: 500,
            n_local_refinements: 3,
            feasibility_floor: 0.05,
            fd_step: 1e-4,
            max_ascent_iter: 30,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_min_value_samples == 0
            || self.n_min_value_candidates == 0
            || self.n_random_candidates == 0
            || self.n_local_refinements == 0
        {
            return Err("acquisition counts must be at least 1".into());
        }
        if !(self.feasibility_floor > 0.0 && self.feasibility_floor <= 0.5) {
            return Err(format!("feasibility_floor {} outside (0, 0.5]", self.feasibility_floor));
        }
        if !(self.fd_step > 0.0 && self.fd_step < 0.1) {
            return Err(format!("fd_step {} outside (0, 0.1)", self.fd_step));
        }
        Ok(())
    }
}

/// Sampled values of the feasible minimum at one context.
#[derive(Debug, Clone, PartialEq)]
pub struct MinValueSamples<T> {
    pub values: Vec<T>,
    /// No candidate reached the feasibility floor; the samples describe the
    /// unconstrained minimum instead.
    pub fallback: bool,
}

/// Result of one acquisition maximization.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal<T> {
    pub theta: Vec<T>,
    pub score: T,
    pub feasibility: T,
    /// Every candidate scored zero; `theta` maximizes feasibility instead.
    pub exploration_fallback: bool,
    pub min_value_fallback: bool,
}

fn joint_point<T: Real>(theta: &[T], s: T) -> Vec<T> {
    let mut x = theta.to_vec();
    x.push(s);
    x
}

/// Entropy reduction of `N(mean, std²)` truncated above at each sample,
/// averaged over samples.
pub fn truncated_entropy_gain<T: Real>(mean: T, std: T, min_values: &[T]) -> T {
    if !(std > T::zero()) || min_values.is_empty() {
        return T::zero();
    }
    let (mu, sd) = (mean.to_f64_lossy(), std.to_f64_lossy());
    let total: f64 = min_values
        .iter()
        .map(|m| {
            let gamma = (mu - m.to_f64_lossy()) / sd;
            let log_cdf = log_norm_cdf_f64(gamma);
            let ratio = (norm_pdf_f64(gamma).ln() - log_cdf).exp();
            (0.5 * gamma * ratio - log_cdf).max(0.0)
        })
        .sum();
    T::lit(total / min_values.len() as f64)
}

/// Acquisition value at `theta` for context `s`.
pub fn cmes_score<T: Real, J: Posterior<T> + ?Sized, G: Posterior<T> + ?Sized>(
    theta: &[T],
    s: T,
    objective: &J,
    constraint: &G,
    min_values: &[T],
    g_max: T,
) -> T {
    let x = joint_point(theta, s);
    let pj = objective.predict(&x);
    let gain = truncated_entropy_gain(pj.mean, pj.std, min_values);
    if gain == T::zero() {
        return gain;
    }
    gain * feasibility(&x, constraint, g_max)
}

fn feasibility<T: Real, G: Posterior<T> + ?Sized>(x: &[T], constraint: &G, g_max: T) -> T {
    if g_max == T::infinity() {
        return T::one();
    }
    let pg = constraint.predict(x);
    prob_below(g_max, pg.mean, pg.std)
}

/// Log survival function of the minimum of independent normals:
/// `ln P(min_i f_i > y)`.
fn log_min_survival(y: f64, means: &[f64], stds: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&m, &s) in means.iter().zip(stds) {
        if s > 0.0 {
            acc += log_norm_cdf_f64((m - y) / s);
        } else if m <= y {
            return f64::NEG_INFINITY;
        }
    }
    acc
}

fn min_quantile(q: f64, means: &[f64], stds: &[f64]) -> f64 {
    let target = q.ln();
    let mut hi = means.iter().copied().fold(f64::INFINITY, f64::min);
    let mut lo = means.iter().zip(stds).map(|(m, s)| m - 10.0 * s).fold(f64::INFINITY, f64::min);
    lo -= 1e-12 * (1.0 + lo.abs());
    // Survival decreases in y; S(lo) ≈ 1 and S(hi) ≤ 0.5.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if log_min_survival(mid, means, stds) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Draws `n` samples of the minimum over candidates with the given marginal
/// posteriors, via a Gumbel fit to the minimum's quartiles.
pub fn gumbel_min_samples<R: Rng + ?Sized>(means: &[f64], stds: &[f64], n: usize, rng: &mut R) -> Vec<f64> {
    assert!(!means.is_empty(), "no candidates");
    // Quartiles of the maximum of the negated values. The minimum exceeds
    // its q-quantile with probability 1 - q.
    let y25 = -min_quantile(0.25, means, stds);
    let y50 = -min_quantile(0.5, means, stds);
    let y75 = -min_quantile(0.75, means, stds);
    let scale = ((y75 - y25) / ((-(0.25f64).ln()).ln() - (-(0.75f64).ln()).ln())).max(0.0);
    let loc = y50 + scale * (2f64.ln()).ln();
    (0..n)
        .map(|_| {
            let r: f64 = rng.gen_range(f64::EPSILON..1.0);
            -(loc - scale * (-r.ln()).ln())
        })
        .collect()
}

/// Samples of the feasible minimum over an explicit candidate set of θ
/// points at context `s`.
pub fn sample_min_values_on<T: Real, J, G, R>(
    candidates: &[Vec<T>],
    s: T,
    objective: &J,
    constraint: &G,
    g_max: T,
    config: &AcquisitionConfig,
    rng: &mut R,
) -> MinValueSamples<T>
where
    J: Posterior<T> + ?Sized,
    G: Posterior<T> + ?Sized,
    R: Rng + ?Sized,
{
    let stats: Vec<(f64, f64, f64)> = candidates
        .par_iter()
        .map(|theta| {
            let x = joint_point(theta, s);
            let p = objective.predict(&x);
            let feas = feasibility(&x, constraint, g_max);
            (p.mean.to_f64_lossy(), p.std.to_f64_lossy(), feas.to_f64_lossy())
        })
        .collect();
    let feasible: Vec<&(f64, f64, f64)> = stats.iter().filter(|c| c.2 >= config.feasibility_floor).collect();
    let fallback = feasible.is_empty();
    let pool: Vec<&(f64, f64, f64)> = if fallback {
        log::warn!(
            "no candidate reaches feasibility {} at context {s}; sampling the unconstrained minimum",
            config.feasibility_floor
        );
        stats.iter().collect()
    } else {
        feasible
    };
    let means: Vec<f64> = pool.iter().map(|c| c.0).collect();
    let stds: Vec<f64> = pool.iter().map(|c| c.1).collect();
    let values = gumbel_min_samples(&means, &stds, config.n_min_value_samples, rng).into_iter().map(T::lit).collect();
    MinValueSamples { values, fallback }
}

/// Samples of the feasible minimum at context `s`, using a quasi-random
/// candidate set over the parameter box.
pub fn sample_min_values<T: Real, J, G, R>(
    objective: &J,
    constraint: &G,
    s: T,
    bounds: (&[T], &[T]),
    g_max: T,
    config: &AcquisitionConfig,
    rng: &mut R,
) -> MinValueSamples<T>
where
    J: Posterior<T> + ?Sized,
    G: Posterior<T> + ?Sized,
    R: Rng + ?Sized,
{
    let candidates = halton(config.n_min_value_candidates, bounds.0, bounds.1);
    sample_min_values_on(&candidates, s, objective, constraint, g_max, config, rng)
}

/// Maximizes the acquisition over the parameter box at context `s`.
pub fn optimize_acquisition<T: Real, J, G, R>(
    objective: &J,
    constraint: &G,
    s: T,
    bounds: (&[T], &[T]),
    g_max: T,
    config: &AcquisitionConfig,
    rng: &mut R,
) -> Proposal<T>
where
    J: Posterior<T> + ?Sized,
    G: Posterior<T> + ?Sized,
    R: Rng + ?Sized,
{
    let (lower, upper) = bounds;
    assert!(
        lower.iter().zip(upper).all(|(a, b)| a.is_finite() && b.is_finite() && a < b),
        "invalid parameter box"
    );
    let samples = sample_min_values(objective, constraint, s, bounds, g_max, config, rng);
    let min_values = &samples.values;

    let candidates: Vec<Vec<T>> = (0..config.n_random_candidates).map(|_| uniform_in_box(lower, upper, rng)).collect();
    let scores: Vec<T> =
        candidates.par_iter().map(|c| cmes_score(c, s, objective, constraint, min_values, g_max)).collect();

    if scores.iter().all(|&v| !(v > T::zero())) {
        let feas: Vec<T> = candidates.par_iter().map(|c| feasibility(&joint_point(c, s), constraint, g_max)).collect();
        let best = argmax_first(&feas);
        return Proposal {
            theta: candidates[best].clone(),
            score: T::zero(),
            feasibility: feas[best],
            exploration_fallback: true,
            min_value_fallback: samples.fallback,
        };
    }

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let starts: Vec<usize> = order.into_iter().take(config.n_local_refinements).collect();
    let score_at = |theta: &[T]| cmes_score(theta, s, objective, constraint, min_values, g_max);
    let refined: Vec<(Vec<T>, T)> = starts
        .par_iter()
        .map(|&i| projected_ascent(&score_at, &candidates[i], scores[i], lower, upper, config))
        .collect();

    let first = argmax_first(&scores);
    let (mut theta, mut score) = (candidates[first].clone(), scores[first]);
    for (t, v) in refined {
        if v > score {
            theta = t;
            score = v;
        }
    }
    let feasibility = feasibility(&joint_point(&theta, s), constraint, g_max);
    Proposal { theta, score, feasibility, exploration_fallback: false, min_value_fallback: samples.fallback }
}

/// Index of the largest value; ties go to the lowest index.
fn argmax_first<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Gradient ascent with central-difference gradients in normalized
/// coordinates and projection onto the box.
fn projected_ascent<T: Real, F: Fn(&[T]) -> T>(
    f: &F,
    x0: &[T],
    f0: T,
    lower: &[T],
    upper: &[T],
    config: &AcquisitionConfig,
) -> (Vec<T>, T) {
    let d = x0.len();
    let width: Vec<T> = lower.iter().zip(upper).map(|(&a, &b)| b - a).collect();
    let h = T::lit(config.fd_step);
    let project = |z: &mut [T]| {
        for k in 0..d {
            z[k] = z[k].max(T::zero()).min(T::one());
        }
    };
    let to_raw = |z: &[T]| -> Vec<T> { (0..d).map(|k| lower[k] + width[k] * z[k]).collect() };
    let mut z: Vec<T> = (0..d).map(|k| (x0[k] - lower[k]) / width[k]).collect();
    let mut fz = f0;
    let mut step = T::lit(0.05);
    for _ in 0..config.max_ascent_iter {
        let mut grad = vec![T::zero(); d];
        for k in 0..d {
            let mut a = z.clone();
            let mut b = z.clone();
            a[k] = (a[k] + h).min(T::one());
            b[k] = (b[k] - h).max(T::zero());
            let span = a[k] - b[k];
            if span > T::zero() {
                grad[k] = (f(&to_raw(&a)) - f(&to_raw(&b))) / span;
            }
        }
        let gnorm = grad.iter().map(|g| *g * *g).sum::<T>().sqrt();
        if !(gnorm > T::zero()) {
            break;
        }
        let mut improved = false;
        while step > T::lit(1e-6) {
            let mut trial: Vec<T> = (0..d).map(|k| z[k] + step * grad[k] / gnorm).collect();
            project(&mut trial);
            let ft = f(&to_raw(&trial));
            if ft > fz {
                z = trial;
                fz = ft;
                improved = true;
                step = (step * T::lit(1.5)).min(T::lit(0.25));
                break;
            }
            step *= T::lit(0.5);
        }
        if !improved {
            break;
        }
    }
    (to_raw(&z), fz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::FnPosterior;
    use crate::rng::rng_for;
    use approx::assert_relative_eq;

    fn known(mean: f64, std: f64) -> FnPosterior<f64> {
        FnPosterior::new(2, move |_| mean, move |_| std)
    }

    #[test]
    fn known_point_scores_zero() {
        let j = known(1.0, 0.0);
        let g = known(-1.0, 0.1);
        assert_eq!(cmes_score(&[0.5], 0.5, &j, &g, &[0.0, 0.5], 0.0), 0.0);
        let tiny = cmes_score(&[0.5], 0.5, &known(1.0, 1e-9), &g, &[0.0, 0.5], 0.0);
        assert!(tiny < 1e-6);
    }

    #[test]
    fn infeasible_point_scores_zero() {
        let j = known(0.0, 1.0);
        let g = known(5.0, 1e-3);
        assert!(cmes_score(&[0.5], 0.5, &j, &g, &[-1.0], 0.0) < 1e-12);
    }

    #[test]
    fn gain_at_sample_equal_to_mean() {
        // γ = 0: φ(0)·0/(2Φ(0)) − ln Φ(0) = ln 2.
        assert_relative_eq!(truncated_entropy_gain(1.0, 0.5, &[1.0]), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn gain_is_finite_deep_in_tail() {
        let v = truncated_entropy_gain(0.0f64, 1.0, &[100.0]);
        assert!(v.is_finite() && v > 0.0);
        assert!(truncated_entropy_gain(0.0, 1.0, &[-100.0]) < 1e-12);
    }

    #[test]
    fn zero_variance_posterior_samples_grid_minimum() {
        let j = FnPosterior::new(2, |x: &[f64]| (x[0] - 0.3).powi(2), |_| 0.0);
        let g = FnPosterior::new(2, |x: &[f64]| x[0] - 0.5, |_| 0.0);
        let cands: Vec<Vec<f64>> = (0..11).map(|i| vec![i as f64 / 10.0]).collect();
        let mut rng = rng_for(1, "t", 0);
        let cfg = AcquisitionConfig { n_min_value_samples: 16, ..Default::default() };
        let out = sample_min_values_on(&cands, 0.0, &j, &g, 0.0, &cfg, &mut rng);
        assert!(!out.fallback);
        for v in out.values {
            assert_relative_eq!(v, 0.0, epsilon = 1e-9);
        }
        // Feasible region x ≤ 0.5 excludes nothing relevant; move the optimum out of it.
        let j2 = FnPosterior::new(2, |x: &[f64]| (x[0] - 0.9).powi(2), |_| 0.0);
        let out = sample_min_values_on(&cands, 0.0, &j2, &g, 0.0, &cfg, &mut rng);
        for v in out.values {
            assert_relative_eq!(v, 0.16, epsilon = 1e-9);
        }
    }

    #[test]
    fn infeasible_candidates_trigger_fallback() {
        let j = FnPosterior::new(2, |x: &[f64]| x[0], |_| 0.1);
        let g = known(10.0, 0.01);
        let cands: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0]).collect();
        let mut rng = rng_for(2, "t", 0);
        let out = sample_min_values_on(&cands, 0.0, &j, &g, 0.0, &AcquisitionConfig::default(), &mut rng);
        assert!(out.fallback);
        assert_eq!(out.values.len(), 32);
    }

    #[test]
    fn all_zero_scores_pick_most_feasible_point() {
        let j = known(0.0, 0.0);
        let g = FnPosterior::new(3, |x: &[f64]| x[0] + x[1], |_| 0.2);
        let mut rng = rng_for(3, "t", 0);
        let cfg = AcquisitionConfig { n_random_candidates: 2000, ..Default::default() };
        let p = optimize_acquisition(&j, &g, 0.5, (&[0.0, 0.0], &[1.0, 1.0]), 0.5, &cfg, &mut rng);
        assert!(p.exploration_fallback);
        assert!(p.theta[0] + p.theta[1] < 0.1, "{:?}", p.theta);
    }

    #[test]
    fn boundary_maximum_is_reached_and_respected() {
        // Spread grows toward θ1 = 1, so information does as well.
        let j = FnPosterior::new(2, |_| 0.0, |x: &[f64]| 0.1 + x[0]);
        let g = known(-10.0, 1.0);
        let mut rng = rng_for(4, "t", 0);
        let p = optimize_acquisition(&j, &g, 0.0, (&[-2.0], &[3.0]), 0.0, &AcquisitionConfig::default(), &mut rng);
        assert_eq!(p.theta[0], 3.0);
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        assert_eq!(argmax_first(&[1.0, 3.0, 3.0, 2.0]), 1);
    }

    #[test]
    fn config_validation() {
        assert!(AcquisitionConfig::default().validate().is_ok());
        let bad = AcquisitionConfig { feasibility_floor: 0.7, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
