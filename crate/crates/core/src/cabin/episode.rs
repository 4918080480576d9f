//! Closed-loop training episode and its settling-time and overshoot metrics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::mpc::{linearize, Mpc, MpcConfig, Observer, TuningVector};
use super::plant::{sample_mismatch, Catalog, DisturbanceTrajectory, MismatchSample, Plant, PlantError, PlantParams, PlantState};
use crate::error::{EvaluationFailure, IoError};
use crate::tuner::Evaluator;

/// Reference schedule and metric settings of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeSpec {
    /// Episode length (s).
    pub horizon: f64,
    /// Plant simulation step (s).
    pub sim_dt: f64,
    /// Reference during the observer settling phase (K).
    pub initial_reference: [f64; 3],
    /// `(time, reference)` pairs; the first time ends the settling phase.
    pub steps: Vec<(f64, [f64; 3])>,
    /// Settling band (K).
    pub settle_band: f64,
    /// Time constant of the supply duct (s).
    pub duct_time_constant: f64,
    /// Degraded controller calls tolerated before the episode fails.
    pub max_degraded: usize,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        let base = 295.15;
        EpisodeSpec {
            horizon: 600.0,
            sim_dt: 0.5,
            initial_reference: [base; 3],
            steps: vec![(120.0, [base + 3.0, base + 3.0, base]), (360.0, [base + 2.0, base + 4.0, base])],
            settle_band: 0.1,
            duct_time_constant: 8.0,
            max_degraded: 5,
        }
    }
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.steps.len() < 2 {
            return Err("at least two reference steps are required".into());
        }
        if self.steps.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err("reference steps must be strictly increasing in time".into());
        }
        if !(self.steps[0].0 > 0.0 && self.steps.last().unwrap().0 < self.horizon) {
            return Err("reference steps must lie inside the horizon".into());
        }
        if !(self.sim_dt > 0.0 && self.sim_dt <= 2.0) || !(self.settle_band > 0.0) {
            return Err("sim_dt must lie in (0, 2] and settle_band be positive".into());
        }
        Ok(())
    }

    pub fn reference_at(&self, t: f64) -> [f64; 3] {
        self.steps.iter().take_while(|(ts, _)| *ts <= t).last().map_or(self.initial_reference, |s| s.1)
    }

    /// `[start, end)` of each step's evaluation window; the last ends at the horizon.
    pub fn windows(&self) -> Vec<(f64, f64)> {
        (0..self.steps.len())
            .map(|j| (self.steps[j].0, self.steps.get(j + 1).map_or(self.horizon, |s| s.0)))
            .collect()
    }
}

/// Sampled closed-loop signals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub time: Vec<f64>,
    pub t_air: Vec<[f64; 3]>,
    pub t_ref: Vec<[f64; 3]>,
    pub t_mix: Vec<[f64; 3]>,
}

impl Trajectory {
    pub fn push(&mut self, t: f64, air: [f64; 3], reference: [f64; 3], mix: [f64; 3]) {
        self.time.push(t);
        self.t_air.push(air);
        self.t_ref.push(reference);
        self.t_mix.push(mix);
    }

    pub fn zone(&self, z: usize) -> Vec<f64> {
        self.t_air.iter().map(|v| v[z]).collect()
    }

    pub fn shifted(&self, offset: f64) -> Trajectory {
        Trajectory { time: self.time.iter().map(|t| t + offset).collect(), ..self.clone() }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), IoError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t", "t_air_1", "t_air_2", "t_air_3", "t_ref_1", "t_ref_2", "t_ref_3", "t_mix_1", "t_mix_2", "t_mix_3",
        ])?;
        for k in 0..self.time.len() {
            let mut row = vec![self.time[k].to_string()];
            for v in [&self.t_air[k], &self.t_ref[k], &self.t_mix[k]] {
                row.extend(v.iter().map(|x| x.to_string()));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub trajectory: Trajectory,
    /// `[zone][step]`, front zones only (s).
    pub settling_times: [[f64; 2]; 2],
    /// Per front zone, max over steps (K).
    pub overshoots: [f64; 2],
    /// Total settling time (s).
    pub j_value: f64,
    /// Worst front-zone overshoot (K).
    pub g_value: f64,
    pub context: f64,
    pub degraded_solves: usize,
}

/// Time after `window.0` from which `values` stay within `band` of
/// `reference` until the window ends. Never settling gives the window length.
pub fn settling_time(time: &[f64], values: &[f64], reference: f64, window: (f64, f64), band: f64) -> f64 {
    let length = window.1 - window.0;
    let idx: Vec<usize> = (0..time.len()).filter(|&k| time[k] >= window.0 && time[k] < window.1).collect();
    let Some(&last) = idx.last() else {
        return length;
    };
    if (values[last] - reference).abs() > band {
        return length;
    }
    let mut entry = time[last];
    for &k in idx.iter().rev() {
        if (values[k] - reference).abs() > band {
            break;
        }
        entry = time[k];
    }
    (entry - window.0).clamp(0.0, length)
}

/// Largest excursion beyond the new reference in the direction of the step.
pub fn overshoot(time: &[f64], values: &[f64], old_reference: f64, new_reference: f64, window: (f64, f64)) -> f64 {
    let direction = (new_reference - old_reference).signum();
    if new_reference == old_reference {
        return 0.0;
    }
    (0..time.len())
        .filter(|&k| time[k] >= window.0 && time[k] < window.1)
        .map(|k| direction * (values[k] - new_reference))
        .fold(0.0, f64::max)
}

/// Settling times and overshoots of the front zones for a recorded trajectory.
pub fn episode_metrics(trajectory: &Trajectory, spec: &EpisodeSpec) -> ([[f64; 2]; 2], [f64; 2]) {
    let mut ts = [[0.0; 2]; 2];
    let mut dx = [0.0; 2];
    let windows = spec.windows();
    for z in 0..2 {
        let values = trajectory.zone(z);
        for (j, &(t0, new)) in spec.steps.iter().take(2).enumerate() {
            let old = if j == 0 { spec.initial_reference[z] } else { spec.steps[j - 1].1[z] };
            if new[z] == old {
                continue;
            }
            ts[z][j] = settling_time(&trajectory.time, &values, new[z], windows[j], spec.settle_band);
            debug_assert_eq!(windows[j].0, t0);
            dx[z] = f64::max(dx[z], overshoot(&trajectory.time, &values, old, new[z], windows[j]));
        }
    }
    (ts, dx)
}

/// Everything an episode needs besides tuning, context and seed.
#[derive(Debug, Clone)]
pub struct CabinSetup {
    pub plant: PlantParams,
    pub mpc: MpcConfig,
    pub spec: EpisodeSpec,
    pub catalog: Catalog,
}

impl CabinSetup {
    pub fn new(plant: PlantParams, mpc: MpcConfig, spec: EpisodeSpec, catalog: Catalog) -> Self {
        CabinSetup { plant, mpc, spec, catalog }
    }
}

impl Default for CabinSetup {
    fn default() -> Self {
        let spec = EpisodeSpec::default();
        let catalog = Catalog::synthetic(spec.horizon);
        CabinSetup { plant: PlantParams::default(), mpc: MpcConfig::default(), spec, catalog }
    }
}

/// Episode failure with the reason.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("{0} controller calls degraded")]
    Degraded(usize),
    #[error("non-finite metrics")]
    NonFinite,
}

/// Runs one episode with mismatch and disturbance drawn from `seed`.
pub fn run_episode(setup: &CabinSetup, theta: &[f64], m_dot: f64, seed: u64) -> Result<EpisodeOutcome, EpisodeError> {
    let mismatch = sample_mismatch(seed);
    let disturbance = setup.catalog.sample(seed);
    simulate(setup, theta, m_dot, &mismatch, disturbance)
}

/// Episode with explicit mismatch and disturbance.
pub fn simulate(
    setup: &CabinSetup,
    theta: &[f64],
    m_dot: f64,
    mismatch: &MismatchSample,
    disturbance: &DisturbanceTrajectory,
) -> Result<EpisodeOutcome, EpisodeError> {
    let spec = &setup.spec;
    let cfg = &setup.mpc;
    let dt = spec.sim_dt;
    let substeps = (cfg.control_interval / dt).round().max(1.0) as usize;
    let model = linearize(&setup.plant, m_dot, cfg.control_interval, dt);
    let mut mpc = Mpc::new(model, &TuningVector::from_theta(theta), cfg);
    let mut observer = Observer::new(cfg.observer_gain);

    let start = disturbance.at(0.0).t_ambient;
    let mut plant = Plant::new(setup.plant.perturbed(mismatch), PlantState::uniform(start), spec.duct_time_constant);
    let mut estimate = plant.state;
    let mut previous = [start.clamp(cfg.t_mix_min, cfg.t_mix_max); 3];
    let mut traj = Trajectory::default();
    let mut degraded = 0;
    let n_control = (spec.horizon / cfg.control_interval).round() as usize;
    for k in 0..n_control {
        let t = k as f64 * cfg.control_interval;
        let reference = spec.reference_at(t);
        let w = disturbance.at(t);
        estimate.t_air = plant.state.t_air;
        let sol = mpc.solve(&estimate, &observer.estimate, w, &reference, &previous);
        if !sol.converged {
            degraded += 1;
            log::debug!("controller degraded at t = {t} s");
            if degraded > spec.max_degraded {
                return Err(EpisodeError::Degraded(degraded));
            }
        }
        let u = sol.command;
        if k == 0 {
            traj.push(t, plant.state.t_air, reference, u);
        }
        for sub in 0..substeps {
            let ts = t + sub as f64 * dt;
            plant.advance(u, m_dot, disturbance.at(ts), dt)?;
            let now = t + (sub + 1) as f64 * dt;
            traj.push(now, plant.state.t_air, spec.reference_at(now), u);
        }
        let predicted = mpc.model().predict(&estimate.to_vec(), &u, w, &observer.estimate);
        let predicted_air = [predicted[0], predicted[1], predicted[2]];
        observer.update(&plant.state.t_air, &predicted_air);
        estimate = PlantState::from_slice(&predicted);
        previous = u;
    }
    let (settling_times, overshoots) = episode_metrics(&traj, spec);
    let j_value: f64 = settling_times.iter().flatten().sum();
    let g_value = overshoots[0].max(overshoots[1]);
    if !(j_value.is_finite() && g_value.is_finite()) {
        return Err(EpisodeError::NonFinite);
    }
    Ok(EpisodeOutcome { trajectory: traj, settling_times, overshoots, j_value, g_value, context: m_dot, degraded_solves: degraded })
}

/// Tuning black box: episode settling time and overshoot.
#[derive(Debug, Clone, Default)]
pub struct CabinEvaluator {
    pub setup: CabinSetup,
}

impl CabinEvaluator {
    pub fn new(setup: CabinSetup) -> Self {
        CabinEvaluator { setup }
    }
}

impl Evaluator<f64> for CabinEvaluator {
    fn evaluate(&self, theta: &[f64], s: f64, seed: u64) -> Result<(f64, f64), EvaluationFailure> {
        run_episode(&self.setup, theta, s, seed)
            .map(|o| (o.j_value, o.g_value))
            .map_err(|e| EvaluationFailure(e.to_string()))
    }
}
