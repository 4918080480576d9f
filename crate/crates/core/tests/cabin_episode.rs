use std::time::Instant;

use ctxtune::cabin::episode::{episode_metrics, overshoot, settling_time, simulate, Trajectory};
use ctxtune::cabin::plant::{step, Disturbance, PlantState};
use ctxtune::cabin::{run_episode, CabinSetup, Catalog, DisturbanceTrajectory, EpisodeSpec, MismatchSample, PlantParams};
use proptest::prelude::*;

#[test]
fn catalog_selection_is_uniform() {
    let catalog = Catalog::synthetic(600.0);
    let n = 10_000u64;
    let k = catalog.len();
    let mut counts = vec![0usize; k];
    for seed in 0..n {
        counts[catalog.sample_index(seed)] += 1;
    }
    let p = 1.0 / k as f64;
    let mean = n as f64 * p;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        assert!((c as f64 - mean).abs() <= 3.0 * sd, "trajectory {i}: {c} draws, expected {mean:.0} ± {:.0}", 3.0 * sd);
    }
}

#[test]
fn episode_is_cheap() {
    let setup = CabinSetup::default();
    run_episode(&setup, &[1.0, -2.0], 100.0, 0).unwrap();
    let best = (0..5)
        .map(|k| {
            let t = Instant::now();
            run_episode(&setup, &[1.0, -2.0], 100.0, k).unwrap();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min);
    assert!(best < 0.05, "episode took {:.1} ms", best * 1e3);
}

#[test]
fn light_move_suppression_overshoots_more_at_high_flow() {
    let setup = CabinSetup::default();
    for seed in 0..5 {
        let aggressive = run_episode(&setup, &[-0.5, -3.0], 150.0, seed).unwrap();
        let conservative = run_episode(&setup, &[2.5, -2.0], 150.0, seed).unwrap();
        assert!(aggressive.g_value > conservative.g_value, "seed {seed}: {} vs {}", aggressive.g_value, conservative.g_value);
    }
}

#[test]
fn nominal_episode_has_consistent_metrics() {
    let setup = CabinSetup::default();
    let dist = DisturbanceTrajectory::constant("still", 288.15, 200.0, setup.spec.horizon);
    let out = simulate(&setup, &[1.0, -2.0], 100.0, &MismatchSample::nominal(), &dist).unwrap();
    let ts: f64 = out.settling_times.iter().flatten().sum();
    assert_eq!(out.j_value, ts);
    assert_eq!(out.g_value, out.overshoots[0].max(out.overshoots[1]));
    assert!(out.overshoots.iter().all(|v| *v >= 0.0));
    let total: f64 = out.settling_times.iter().flatten().sum();
    assert!(total <= 2.0 * setup.spec.horizon);
    let last = out.trajectory.t_air.last().unwrap();
    let reference = setup.spec.steps[1].1;
    for z in 0..2 {
        assert!((last[z] - reference[z]).abs() < setup.spec.settle_band, "zone {z} ends at {}", last[z]);
    }
}

/// Forward-scan settling time: the sample after the last band violation.
fn settling_forward(time: &[f64], values: &[f64], reference: f64, window: (f64, f64), band: f64) -> f64 {
    let idx: Vec<usize> = (0..time.len()).filter(|&k| time[k] >= window.0 && time[k] < window.1).collect();
    let length = window.1 - window.0;
    let mut entry = idx.first().map(|&k| time[k]);
    for (pos, &k) in idx.iter().enumerate() {
        if (values[k] - reference).abs() > band {
            entry = idx.get(pos + 1).map(|&n| time[n]);
        }
    }
    entry.map_or(length, |t| (t - window.0).clamp(0.0, length))
}

fn overshoot_forward(time: &[f64], values: &[f64], old: f64, new: f64, window: (f64, f64)) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..time.len() {
        if time[k] < window.0 || time[k] >= window.1 {
            continue;
        }
        let beyond = if new > old { values[k] - new } else if new < old { new - values[k] } else { 0.0 };
        worst = worst.max(beyond);
    }
    worst
}

fn random_walk(start: f64, steps: &[f64]) -> Vec<f64> {
    let mut v = start;
    steps
        .iter()
        .map(|d| {
            v += d;
            v
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_agree_with_forward_scan(
        steps in proptest::collection::vec(-0.2f64..0.2, 50..400),
        start in 293.0f64..299.0,
        reference in 294.0f64..298.0,
        old in 294.0f64..298.0,
        band in 0.02f64..0.5,
        from in 0.0f64..50.0,
    ) {
        let values = random_walk(start, &steps);
        let time: Vec<f64> = (0..values.len()).map(|k| 0.5 * k as f64).collect();
        let window = (from, from + 0.25 * time.len() as f64);
        let a = settling_time(&time, &values, reference, window, band);
        let b = settling_forward(&time, &values, reference, window, band);
        prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
        let c = overshoot(&time, &values, old, reference, window);
        let d = overshoot_forward(&time, &values, old, reference, window);
        prop_assert!((c - d).abs() <= 1e-9, "{} vs {}", c, d);
        prop_assert!(c >= 0.0 && a >= 0.0 && a <= window.1 - window.0);
    }

    #[test]
    fn metrics_invariant_under_time_shift(
        steps in proptest::collection::vec(-0.1f64..0.1, 1200),
        offset in 0.0f64..500.0,
    ) {
        let spec = EpisodeSpec::default();
        let mut traj = Trajectory::default();
        let mut z1 = random_walk(295.0, &steps);
        z1.truncate(1201.min(z1.len()));
        for (k, v) in z1.iter().enumerate() {
            let t = 0.5 * (k + 1) as f64;
            traj.push(t, [*v, v + 0.3, 295.0], spec.reference_at(t), [295.0; 3]);
        }
        let shifted_spec = EpisodeSpec {
            horizon: spec.horizon + offset,
            steps: spec.steps.iter().map(|(t, r)| (t + offset, *r)).collect(),
            ..spec.clone()
        };
        let (ts, dx) = episode_metrics(&traj, &spec);
        let (ts2, dx2) = episode_metrics(&traj.shifted(offset), &shifted_spec);
        for z in 0..2 {
            prop_assert!((dx[z] - dx2[z]).abs() <= 1e-9);
            for j in 0..2 {
                prop_assert!((ts[z][j] - ts2[z][j]).abs() <= 1e-9, "{:?} vs {:?}", ts, ts2);
            }
        }
    }

    #[test]
    fn equilibrium_is_a_fixed_point(t in 260.0f64..315.0, m_dot in 50.0f64..150.0, dt in 0.05f64..2.0) {
        let state = PlantState::uniform(t);
        let next = step(&state, [t; 3], m_dot, Disturbance { t_ambient: t, q_solar: 0.0 }, &PlantParams::default(), dt).unwrap();
        for (a, b) in next.to_vec().iter().zip(state.to_vec()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn unforced_spread_never_grows(temps in proptest::collection::vec(270.0f64..320.0, 6), m_dot in 50.0f64..150.0) {
        let params = PlantParams::default();
        let mut state = PlantState::from_slice(&temps);
        let spread = |s: &PlantState| {
            let v = s.to_vec();
            v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)
        };
        let ambient = temps.iter().sum::<f64>() / 6.0;
        for _ in 0..200 {
            let before = spread(&state);
            let w = Disturbance { t_ambient: ambient.clamp(
                state.to_vec().iter().cloned().fold(f64::MAX, f64::min),
                state.to_vec().iter().cloned().fold(f64::MIN, f64::max),
            ), q_solar: 0.0 };
            state = step(&state, state.t_air, m_dot, w, &params, 0.5).unwrap();
            prop_assert!(spread(&state) <= before + 1e-9);
        }
    }
}
