use ctxtune::smoother::{pointwise_optimum, pointwise_policy, policy_feasibility, policy_objective, smooth, smooth_with_pointwise};
use ctxtune::{FnPosterior, Posterior, SigmaMode, SmootherConfig, SmootherError};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn z_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

/// Quadratic bowl around a context-dependent centre.
fn bowl(center: impl Fn(f64) -> [f64; 2] + Send + Sync + 'static) -> FnPosterior<f64> {
    FnPosterior::new(
        3,
        move |x: &[f64]| {
            let c = center(x[2]);
            1.0 + (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)
        },
        |_| 0.01,
    )
}

/// Linear constraint `a·θ − b` with constant spread.
fn plane(a: [f64; 2], b: f64, std: f64) -> FnPosterior<f64> {
    FnPosterior::new(3, move |x: &[f64]| a[0] * x[0] + a[1] * x[1] - b, move |_| std)
}

fn unit_config(delta: f64, gamma: Option<f64>) -> SmootherConfig<f64> {
    let mut c = SmootherConfig::new(vec![0.0, 0.0], vec![1.0, 1.0], 0.0, 1.0, delta, 0.0);
    c.gamma = gamma;
    c
}

fn wiggly() -> FnPosterior<f64> {
    bowl(|s| [0.5 + 0.25 * (6.0 * std::f64::consts::PI * s).sin(), 0.3 + 0.4 * s])
}

#[test]
fn zero_weight_reproduces_pointwise() {
    let j = wiggly();
    let g = plane([1.0, 1.0], 1.2, 0.02);
    let (smoothed, pointwise) = smooth_with_pointwise(&j, &g, &unit_config(0.93, Some(0.0))).unwrap();
    for (a, b) in smoothed.params.iter().zip(&pointwise.params) {
        for k in 0..2 {
            assert!((a[k] - b[k]).abs() <= 1e-4, "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn dominant_weight_gives_affine_policy() {
    let j = wiggly();
    let g = plane([1.0, 1.0], 1.2, 0.02);
    let policy = smooth(&j, &g, &unit_config(0.93, Some(1e6))).unwrap();
    assert!(policy.max_second_difference(&[1.0, 1.0]) <= 1e-3, "{}", policy.max_second_difference(&[1.0, 1.0]));
    assert!(policy.feasibility.iter().all(|&p| p > 0.93));
}

#[test]
fn three_point_grid_matches_joint_grid_search() {
    // One parameter, three contexts: exhaustive search over the joint problem.
    let center = |s: f64| 0.2 + 0.6 * s * s;
    let j = FnPosterior::new(2, move |x: &[f64]| 0.5 + (x[0] - center(x[1])).powi(2), |_| 0.0);
    let g = FnPosterior::new(2, |x: &[f64]| x[0] - 0.7, |_| 0.0);
    let gamma = 2.0;
    let mut config = SmootherConfig::new(vec![0.0], vec![1.0], 0.0, 1.0, 0.5, 0.0);
    config.n_grid = 3;
    config.gamma = Some(gamma);
    config.sigma_mode = SigmaMode::Latent;
    let policy = smooth(&j, &g, &config).unwrap();
    let cost = |t: [f64; 3]| {
        let grid = [0.0, 0.5, 1.0];
        let mean: f64 = (0..3).map(|n| j.predict(&[t[n], grid[n]]).mean).sum();
        mean + gamma * (t[0] - 2.0 * t[1] + t[2]).powi(2)
    };
    let m = 30;
    let axis: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
    let mut best = f64::INFINITY;
    for &a in &axis {
        for &b in &axis {
            for &c in &axis {
                if a <= 0.7 && b <= 0.7 && c <= 0.7 {
                    best = best.min(cost([a, b, c]));
                }
            }
        }
    }
    let found = cost([policy.params[0][0], policy.params[1][0], policy.params[2][0]]);
    assert!(policy.params.iter().all(|t| t[0] <= 0.7 + 1e-12));
    assert!(found <= best * 1.01, "smoother {found} vs grid {best}");
    assert!(found >= best * 0.99, "smoother {found} vs grid {best}");
}

#[test]
fn pointwise_matches_kkt_solution() {
    // min (θ1−0.8)² + (θ2−0.8)²  s.t.  θ1 + θ2 − 1 + zσ ≤ 0
    let sigma = 0.05;
    let delta = 0.93;
    let j = bowl(|_| [0.8, 0.8]);
    let g = plane([1.0, 1.0], 1.0, sigma);
    let opt = pointwise_optimum(&j, &g, 0.5, delta, 0.0, (&[0.0, 0.0], &[1.0, 1.0]), SigmaMode::Combined, 31).unwrap();
    let expected = 0.5 * (1.0 - sigma * z_quantile(delta));
    for &t in &opt.theta {
        assert!((t - expected).abs() <= 1e-3, "{:?} vs {expected}", opt.theta);
    }
    assert!(opt.feasibility > delta);
}

#[test]
fn inactive_constraint_gives_unconstrained_argmin() {
    let j = bowl(|_| [0.35, 0.6]);
    let g = plane([1.0, 0.0], 5.0, 0.01);
    let opt = pointwise_optimum(&j, &g, 0.2, 0.93, 0.0, (&[0.0, 0.0], &[1.0, 1.0]), SigmaMode::Combined, 31).unwrap();
    assert!((opt.theta[0] - 0.35).abs() < 1e-4 && (opt.theta[1] - 0.6).abs() < 1e-4, "{:?}", opt.theta);
}

#[test]
fn combined_spread_tightens_with_noise() {
    let j = bowl(|_| [0.8, 0.8]);
    let latent = plane([1.0, 1.0], 1.0, 0.01);
    let noisy = plane([1.0, 1.0], 1.0, 0.01).with_noise_variance(0.05f64.powi(2));
    let bounds = (&[0.0, 0.0][..], &[1.0, 1.0][..]);
    let a = pointwise_optimum(&j, &latent, 0.0, 0.93, 0.0, bounds, SigmaMode::Combined, 31).unwrap();
    let b = pointwise_optimum(&j, &noisy, 0.0, 0.93, 0.0, bounds, SigmaMode::Combined, 31).unwrap();
    let c = pointwise_optimum(&j, &noisy, 0.0, 0.93, 0.0, bounds, SigmaMode::Latent, 31).unwrap();
    assert!(b.theta[0] + b.theta[1] < a.theta[0] + a.theta[1] - 0.05);
    assert!((c.theta[0] - a.theta[0]).abs() < 1e-6);
}

#[test]
fn infeasible_context_is_named() {
    let j = bowl(|_| [0.5, 0.5]);
    let g = FnPosterior::new(3, |x: &[f64]| if x[2] > 0.6 { 1.0 } else { -1.0 }, |_| 0.01);
    match pointwise_policy(&j, &g, &unit_config(0.93, Some(0.0))) {
        Err(SmootherError::Infeasible { context, max_feasibility }) => {
            assert!(context > 0.6);
            assert!(max_feasibility < 1e-6);
        }
        other => panic!("expected infeasibility, got {other:?}"),
    }
}

#[test]
fn smoothed_points_feasible_on_direct_evaluation() {
    let j = wiggly();
    let g = FnPosterior::new(3, |x: &[f64]| x[0] + 0.5 * x[1] - 0.6 - 0.2 * x[2], |x: &[f64]| 0.01 + 0.02 * x[2]).with_noise_variance(1e-4);
    for gamma in [0.0, 1.0, 100.0, 1e4] {
        let policy = smooth(&j, &g, &unit_config(0.93, Some(gamma))).unwrap();
        let direct = policy_feasibility(&g, &policy, 0.0, SigmaMode::Combined);
        for (p, q) in direct.iter().zip(&policy.feasibility) {
            assert!(*p > 0.93, "gamma {gamma}: {p}");
            assert_eq!(p, q);
        }
        for t in &policy.params {
            assert!(t.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn smoothing_never_beats_pointwise() {
    let j = wiggly();
    let g = plane([1.0, 1.0], 1.2, 0.02);
    let pointwise = pointwise_policy(&j, &g, &unit_config(0.93, None)).unwrap();
    let base = policy_objective(&j, &pointwise);
    for gamma in [0.0, 0.1, 10.0, 1e3] {
        let policy = smooth(&j, &g, &unit_config(0.93, Some(gamma))).unwrap();
        let value = policy_objective(&j, &policy);
        assert!(value >= base - 1e-9, "gamma {gamma}: {value} < {base}");
        if gamma == 0.0 {
            assert!((value - base).abs() < 1e-8);
        }
    }
}

#[test]
fn deterministic_given_models() {
    let j = wiggly();
    let g = plane([1.0, 1.0], 1.2, 0.02);
    let a = smooth(&j, &g, &unit_config(0.93, None)).unwrap();
    let b = smooth(&j, &g, &unit_config(0.93, None)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn automatic_weight_meets_roughness_target() {
    let j = wiggly();
    let g = plane([1.0, 1.0], 1.2, 0.02);
    let policy = smooth(&j, &g, &unit_config(0.93, None)).unwrap();
    assert!(policy.max_second_difference(&[1.0, 1.0]) <= 0.1);
    assert!(policy.gamma.unwrap() > 0.0);
}

fn tradeoff_holds(amplitude: f64, frequency: f64, offset: f64) -> Result<(), TestCaseError> {
    let j = bowl(move |s| [0.5 + amplitude * (frequency * s).sin(), offset]);
    let g = plane([1.0, 1.0], 1.3, 0.02);
    let mut last: Option<(f64, f64)> = None;
    for gamma in [0.0, 1.0, 10.0, 100.0] {
        let policy = smooth(&j, &g, &unit_config(0.93, Some(gamma))).unwrap();
        let value = policy_objective(&j, &policy);
        let rough = policy.roughness();
        if let Some((v, r)) = last {
            prop_assert!(value >= v - 1e-7 * v.abs(), "objective fell: {v} -> {value} at {gamma}");
            prop_assert!(rough <= r + 1e-9, "roughness rose: {r} -> {rough} at {gamma}");
        }
        last = Some((value, rough));
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn objective_and_roughness_monotone_in_weight(amplitude in 0.05f64..0.35, frequency in 2.0f64..20.0, offset in 0.1f64..0.6) {
        tradeoff_holds(amplitude, frequency, offset)?;
    }
}


#[test]
fn boundary_repair_keeps_smoothness() {
    tradeoff_holds(0.3281226075341712, 2.0, 0.5210328737543438).unwrap();
}
