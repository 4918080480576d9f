use ctxtune::cabin::mpc::{move_weights, LinearModel};
use ctxtune::cabin::plant::{Disturbance, Plant, PlantState, N_STATES};
use ctxtune::cabin::{linearize, Mpc, MpcConfig, Observer, PlantParams, TuningVector};
use ctxtune::linalg::Matrix;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const QUIET: Disturbance = Disturbance { t_ambient: 0.0, q_solar: 0.0 };

/// Three decoupled scalar zones; solids are inert.
fn decoupled(a: [f64; 3], b: [f64; 3]) -> LinearModel {
    let mut am = Matrix::zeros(N_STATES, N_STATES);
    let mut bm = Matrix::zeros(N_STATES, 3);
    for z in 0..3 {
        am[(z, z)] = a[z];
        bm[(z, z)] = b[z];
        am[(z + 3, z + 3)] = 1.0;
    }
    LinearModel { a: am, b: bm, e: Matrix::zeros(N_STATES, 2) }
}

/// Stacked least squares for one scalar zone, solved by normal equations.
fn scalar_oracle(a: f64, b: f64, q: f64, w: &[f64], x0: f64, r: f64, prev: f64) -> f64 {
    let n = w.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs = Vec::new();
    for p in 0..n {
        // x_p = a^p x0 + Σ_{i<p} a^{p-1-i} b u_i
        let mut row = vec![0.0; n];
        for (i, v) in row.iter_mut().enumerate().take(p) {
            *v = q.sqrt() * a.powi((p - 1 - i) as i32) * b;
        }
        rows.push(row);
        rhs.push(q.sqrt() * (r - a.powi(p as i32) * x0));
    }
    for p in 0..n {
        let mut row = vec![0.0; n];
        row[p] = w[p].sqrt();
        if p > 0 {
            row[p - 1] = -w[p].sqrt();
        }
        rows.push(row);
        rhs.push(if p == 0 { w[0].sqrt() * prev } else { 0.0 });
    }
    let m = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    let y = DVector::from_vec(rhs);
    let normal = m.transpose() * &m;
    let u = normal.cholesky().expect("positive definite").solve(&(m.transpose() * y));
    u[0]
}

fn wide_config(n2: usize) -> MpcConfig {
    MpcConfig { n2, t_mix_min: -1e6, t_mix_max: 1e6, ..MpcConfig::default() }
}

#[test]
fn single_zone_matches_normal_equations() {
    let cfg = wide_config(3);
    let tuning = TuningVector::from_theta(&[-0.5, 0.3]);
    let weights = move_weights(&tuning, &cfg);
    let (a, b) = ([0.93, 0.9, 0.95], [0.07, 0.1, 0.04]);
    let mut mpc = Mpc::new(decoupled(a, b), &tuning, &cfg);
    let state = PlantState { t_air: [293.0, 297.5, 295.0], t_solids: [295.0; 3] };
    let reference = [296.0, 295.0, 294.0];
    let previous = [294.0, 299.0, 296.5];
    let sol = mpc.solve(&state, &[0.0; 3], QUIET, &reference, &previous);
    assert!(!sol.zero_move);
    for z in 0..3 {
        let w: Vec<f64> = weights.iter().map(|row| row[z]).collect();
        let expected = scalar_oracle(a[z], b[z], cfg.q[z], &w, state.t_air[z], reference[z], previous[z]);
        assert!((sol.command[z] - expected).abs() <= 1e-8, "zone {z}: {} vs {expected}", sol.command[z]);
    }
}

#[test]
fn dominant_move_weights_hold_the_command() {
    let cfg = MpcConfig::default();
    let model = linearize(&PlantParams::default(), 100.0, cfg.control_interval, 0.5);
    let mut mpc = Mpc::new(model, &TuningVector::from_theta(&[9.0, 9.0]), &cfg);
    let state = PlantState { t_air: [291.0, 300.0, 296.0], t_solids: [295.0; 3] };
    let previous = [290.0, 301.0, 296.0];
    let sol = mpc.solve(&state, &[0.0; 3], Disturbance { t_ambient: 295.0, q_solar: 0.0 }, &[296.0; 3], &previous);
    for z in 0..2 {
        assert!((sol.command[z] - previous[z]).abs() < 1e-4, "{:?}", sol.command);
    }
}

/// Closed loop on the nominal plant whose ambient differs from what the
/// controller is told.
fn closed_loop_error(ambient_offset: f64, reference: [f64; 3], m_dot: f64) -> f64 {
    let cfg = MpcConfig::default();
    let params = PlantParams::default();
    let dt = 0.5;
    let model = linearize(&params, m_dot, cfg.control_interval, dt);
    let mut mpc = Mpc::new(model, &TuningVector::from_theta(&[0.5, -1.0]), &cfg);
    let mut observer = Observer::new(cfg.observer_gain);
    let told = Disturbance { t_ambient: 295.0, q_solar: 0.0 };
    let actual = Disturbance { t_ambient: 295.0 + ambient_offset, q_solar: 0.0 };
    let mut plant = Plant::new(params, PlantState::uniform(295.0), 8.0);
    let mut estimate = plant.state;
    let mut previous = [295.0; 3];
    for _ in 0..600 {
        estimate.t_air = plant.state.t_air;
        let u = mpc.solve(&estimate, &observer.estimate, told, &reference, &previous).command;
        for _ in 0..4 {
            plant.advance(u, m_dot, actual, dt).unwrap();
        }
        let predicted = mpc.model().predict(&estimate.to_vec(), &u, told, &observer.estimate);
        observer.update(&plant.state.t_air, &[predicted[0], predicted[1], predicted[2]]);
        estimate = PlantState::from_slice(&predicted);
        previous = u;
    }
    (0..3).map(|z| (plant.state.t_air[z] - reference[z]).abs()).fold(0.0, f64::max)
}

#[test]
fn constant_unmodeled_ambient_is_rejected() {
    let err = closed_loop_error(6.0, [297.0, 296.0, 295.5], 100.0);
    assert!(err < 0.02, "steady-state error {err}");
}

fn random_state(v: &[f64]) -> PlantState {
    PlantState { t_air: [v[0], v[1], v[2]], t_solids: [v[3], v[4], v[5]] }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn offset_free_for_constant_disturbances(offset in -8.0f64..8.0, r1 in 293.0f64..299.0, r2 in 293.0f64..299.0, m_dot in 50.0f64..150.0) {
        let err = closed_loop_error(offset, [r1, r2, 295.0], m_dot);
        prop_assert!(err < 0.02, "steady-state error {}", err);
    }

    #[test]
    fn joint_scaling_leaves_command_unchanged(
        scale in 1e-3f64..1e3,
        theta in proptest::collection::vec(-2.0f64..2.0, 2),
        temps in proptest::collection::vec(285.0f64..305.0, 9),
        m_dot in 50.0f64..150.0,
    ) {
        let cfg = MpcConfig { n2: 15, ..MpcConfig::default() };
        let model = linearize(&PlantParams::default(), m_dot, cfg.control_interval, 0.5);
        let weights = move_weights(&TuningVector::from_theta(&theta), &cfg);
        let scaled_cfg = MpcConfig { q: cfg.q.map(|q| q * scale), ..cfg.clone() };
        let scaled: Vec<[f64; 3]> = weights.iter().map(|w| w.map(|v| v * scale)).collect();
        let mut base = Mpc::with_weights(model.clone(), weights, &cfg);
        let mut other = Mpc::with_weights(model, scaled, &scaled_cfg);
        let state = random_state(&temps[..6]);
        let w = Disturbance { t_ambient: 300.0, q_solar: 200.0 };
        let reference = [temps[6], temps[7], 295.0];
        let previous = [temps[8], temps[8], temps[8]];
        let a = base.solve(&state, &[0.1, -0.2, 0.0], w, &reference, &previous);
        let b = other.solve(&state, &[0.1, -0.2, 0.0], w, &reference, &previous);
        for z in 0..3 {
            prop_assert!((a.command[z] - b.command[z]).abs() <= 1e-6 * (1.0 + a.command[z].abs()), "{:?} vs {:?}", a.command, b.command);
        }
    }

    #[test]
    fn never_costlier_than_holding_and_deterministic(
        theta in proptest::collection::vec(-1.0f64..3.0, 2),
        temps in proptest::collection::vec(270.0f64..320.0, 9),
        m_dot in 50.0f64..150.0,
    ) {
        let cfg = MpcConfig::default();
        let model = linearize(&PlantParams::default(), m_dot, cfg.control_interval, 0.5);
        let tuning = TuningVector::from_theta(&theta);
        let state = random_state(&temps[..6]);
        let w = Disturbance { t_ambient: 305.0, q_solar: 400.0 };
        let reference = [temps[6].clamp(290.0, 300.0), temps[7].clamp(290.0, 300.0), 295.0];
        let previous = [temps[8].clamp(273.15, 333.15); 3];
        let mut first = Mpc::new(model.clone(), &tuning, &cfg);
        let mut second = Mpc::new(model, &tuning, &cfg);
        let a = first.solve(&state, &[0.0; 3], w, &reference, &previous);
        let b = second.solve(&state, &[0.0; 3], w, &reference, &previous);
        prop_assert_eq!(a.command, b.command);
        prop_assert!(a.command.iter().all(|u| (273.15..=333.15).contains(u)));
        let hold = first.hold_cost(&state, &[0.0; 3], w, &reference, &previous);
        prop_assert!(a.cost <= hold + 1e-9 * hold.abs().max(1.0), "plan {} vs hold {}", a.cost, hold);
    }
}
