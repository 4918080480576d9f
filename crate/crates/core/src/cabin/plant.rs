//! Three-zone lumped thermal model of a vehicle cabin.
//!
//! Each zone has an air node and a solid node. Air is driven by the
//! ventilation flow at the supply temperature; solids exchange heat with the
//! air, the ambient and absorb solar radiation.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::IoError;
use crate::linalg::Matrix;
use crate::rng::rng_for;

pub const N_ZONES: usize = 3;
pub const N_STATES: usize = 2 * N_ZONES;
/// Temperatures outside this range (K) count as a simulation blow-up.
pub const ENVELOPE: (f64, f64) = (240.0, 340.0);
/// Ordered as (1-2, 2-3, 1-3).
const PAIRS: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];
pub const N_MISMATCH: usize = 18;
pub const MISMATCH_RANGE: (f64, f64) = (0.7, 1.3);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("plant state left the sanity envelope at t = {time} s: air {t_air:?}, solids {t_solids:?}")]
    BlowUp { time: f64, t_air: [f64; 3], t_solids: [f64; 3] },
    #[error("invalid plant input: {0}")]
    Input(String),
    #[error("invalid plant parameters: {0}")]
    Params(String),
    #[error("disturbance catalog: {0}")]
    Catalog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantParams {
    /// Air heat capacity per zone (J/K).
    pub c_air: [f64; 3],
    /// Solid heat capacity per zone (J/K).
    pub c_solid: [f64; 3],
    /// Air to solid conductance per zone (W/K).
    pub air_solid: [f64; 3],
    /// Inter-zone air conductances (W/K) for zone pairs 1-2, 2-3, 1-3.
    pub inter_zone: [f64; 3],
    /// Solid to ambient conductance per zone (W/K).
    pub ambient: [f64; 3],
    /// Fraction of solar irradiation absorbed by each zone's solids.
    pub solar_absorption: [f64; 3],
    /// Share of the total mass flow supplied to each zone.
    pub flow_split: [f64; 3],
    /// Specific heat of air (J/(kg K)).
    pub c_p: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        PlantParams {
            c_air: [600.0, 600.0, 700.0],
            c_solid: [8000.0, 8000.0, 10000.0],
            air_solid: [1.0, 1.0, 1.0],
            inter_zone: [0.5, 0.5, 0.3],
            ambient: [2.0, 2.0, 2.5],
            solar_absorption: [0.06, 0.06, 0.04],
            flow_split: [0.35, 0.35, 0.30],
            c_p: 1005.0,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let all = self
            .c_air
            .iter()
            .chain(&self.c_solid)
            .chain(&self.air_solid)
            .chain(&self.inter_zone)
            .chain(&self.ambient)
            .chain(&self.solar_absorption)
            .chain(&self.flow_split)
            .chain(std::iter::once(&self.c_p));
        for v in all {
            if !(v.is_finite() && *v > 0.0) {
                return Err(PlantError::Params(format!("parameter {v} is not positive")));
            }
        }
        let split: f64 = self.flow_split.iter().sum();
        if (split - 1.0).abs() > 1e-9 {
            return Err(PlantError::Params(format!("flow split sums to {split}")));
        }
        Ok(())
    }

    /// Per-zone ventilation conductance `ṁ_i c_p` (W/K) for total flow in kg/h.
    pub fn ventilation(&self, m_dot: f64) -> [f64; 3] {
        let kg_per_s = m_dot / 3600.0;
        [0, 1, 2].map(|i| self.flow_split[i] * kg_per_s * self.c_p)
    }

    /// Parameters scaled by mismatch factors. Flow split and `c_p` stay nominal.
    pub fn perturbed(&self, m: &MismatchSample) -> PlantParams {
        let f = &m.factors;
        let mut p = *self;
        for i in 0..3 {
            p.c_air[i] *= f[i];
            p.c_solid[i] *= f[3 + i];
            p.air_solid[i] *= f[6 + i];
            p.inter_zone[i] *= f[9 + i];
            p.ambient[i] *= f[12 + i];
            p.solar_absorption[i] *= f[15 + i];
        }
        p
    }

    /// Continuous-time matrices of `ẋ = A x + B T_mix + E [T_amb, Q_sun]`
    /// at constant mass flow, with state ordering `[air; solids]`.
    pub fn continuous(&self, m_dot: f64) -> (Matrix<f64>, Matrix<f64>, Matrix<f64>) {
        let vent = self.ventilation(m_dot);
        let mut a = Matrix::zeros(N_STATES, N_STATES);
        let mut b = Matrix::zeros(N_STATES, N_ZONES);
        let mut e = Matrix::zeros(N_STATES, 2);
        for i in 0..3 {
            let (air, sol) = (i, 3 + i);
            let ca = self.c_air[i];
            let cs = self.c_solid[i];
            a[(air, air)] -= (vent[i] + self.air_solid[i]) / ca;
            a[(air, sol)] += self.air_solid[i] / ca;
            b[(air, i)] = vent[i] / ca;
            a[(sol, sol)] -= (self.air_solid[i] + self.ambient[i]) / cs;
            a[(sol, air)] += self.air_solid[i] / cs;
            e[(sol, 0)] = self.ambient[i] / cs;
            e[(sol, 1)] = self.solar_absorption[i] / cs;
        }
        for (k, &(i, j)) in PAIRS.iter().enumerate() {
            let h = self.inter_zone[k];
            a[(i, i)] -= h / self.c_air[i];
            a[(i, j)] += h / self.c_air[i];
            a[(j, j)] -= h / self.c_air[j];
            a[(j, i)] += h / self.c_air[j];
        }
        (a, b, e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub t_air: [f64; 3],
    pub t_solids: [f64; 3],
}

impl PlantState {
    pub fn uniform(t: f64) -> Self {
        PlantState { t_air: [t; 3], t_solids: [t; 3] }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.t_air.iter().chain(&self.t_solids).copied().collect()
    }

    pub fn from_slice(x: &[f64]) -> Self {
        PlantState { t_air: [x[0], x[1], x[2]], t_solids: [x[3], x[4], x[5]] }
    }

    pub fn in_envelope(&self) -> bool {
        self.t_air.iter().chain(&self.t_solids).all(|t| t.is_finite() && *t >= ENVELOPE.0 && *t <= ENVELOPE.1)
    }

    fn blow_up(&self, time: f64) -> PlantError {
        PlantError::BlowUp { time, t_air: self.t_air, t_solids: self.t_solids }
    }
}

/// Disturbance inputs at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    /// Ambient temperature (K).
    pub t_ambient: f64,
    /// Solar irradiation (W).
    pub q_solar: f64,
}

/// One explicit Euler step of the cabin model.
pub fn step(
    state: &PlantState,
    t_mix: [f64; 3],
    m_dot: f64,
    disturbance: Disturbance,
    params: &PlantParams,
    dt: f64,
) -> Result<PlantState, PlantError> {
    if !(dt > 0.0 && dt <= 2.0) {
        return Err(PlantError::Input(format!("time step {dt} s outside (0, 2]")));
    }
    if !(m_dot.is_finite() && m_dot > 0.0) {
        return Err(PlantError::Input(format!("mass flow {m_dot} kg/h must be positive")));
    }
    let vent = params.ventilation(m_dot);
    let (ta, ts) = (&state.t_air, &state.t_solids);
    let mut q_air = [0.0; 3];
    let mut q_sol = [0.0; 3];
    for i in 0..3 {
        let solid = params.air_solid[i] * (ts[i] - ta[i]);
        q_air[i] += vent[i] * (t_mix[i] - ta[i]) + solid;
        q_sol[i] += -solid
            + params.ambient[i] * (disturbance.t_ambient - ts[i])
            + params.solar_absorption[i] * disturbance.q_solar;
    }
    for (k, &(i, j)) in PAIRS.iter().enumerate() {
        let q = params.inter_zone[k] * (ta[j] - ta[i]);
        q_air[i] += q;
        q_air[j] -= q;
    }
    let next = PlantState {
        t_air: [0, 1, 2].map(|i| ta[i] + dt * q_air[i] / params.c_air[i]),
        t_solids: [0, 1, 2].map(|i| ts[i] + dt * q_sol[i] / params.c_solid[i]),
    };
    if next.in_envelope() {
        Ok(next)
    } else {
        Err(next.blow_up(f64::NAN))
    }
}

/// First-order lag between the commanded mixing temperature and the air
/// actually entering each zone. Not part of the controller's model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupplyDuct {
    /// Time constant (s).
    pub time_constant: f64,
    pub outlet: [f64; 3],
}

impl SupplyDuct {
    pub fn new(time_constant: f64, outlet: [f64; 3]) -> Self {
        SupplyDuct { time_constant, outlet }
    }

    /// Advances by `dt` with the command held constant; returns the outlet.
    pub fn advance(&mut self, command: [f64; 3], dt: f64) -> [f64; 3] {
        let k = if self.time_constant > 0.0 { 1.0 - (-dt / self.time_constant).exp() } else { 1.0 };
        for i in 0..3 {
            self.outlet[i] += k * (command[i] - self.outlet[i]);
        }
        self.outlet
    }
}

/// Simulated plant: true (perturbed) parameters, state and supply duct.
#[derive(Debug, Clone)]
pub struct Plant {
    pub params: PlantParams,
    pub state: PlantState,
    pub duct: SupplyDuct,
    pub time: f64,
}

impl Plant {
    pub fn new(params: PlantParams, state: PlantState, duct_time_constant: f64) -> Self {
        Plant { params, state, duct: SupplyDuct::new(duct_time_constant, state.t_air), time: 0.0 }
    }

    pub fn advance(&mut self, command: [f64; 3], m_dot: f64, disturbance: Disturbance, dt: f64) -> Result<&PlantState, PlantError> {
        let supply = self.duct.advance(command, dt);
        self.time += dt;
        self.state = step(&self.state, supply, m_dot, disturbance, &self.params, dt).map_err(|e| match e {
            PlantError::BlowUp { t_air, t_solids, .. } => PlantError::BlowUp { time: self.time, t_air, t_solids },
            e => e,
        })?;
        Ok(&self.state)
    }
}

/// Multiplicative parameter factors, ordered as c_air, c_solid, air_solid,
/// inter_zone, ambient, solar_absorption, three each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MismatchSample {
    pub factors: [f64; N_MISMATCH],
}

impl MismatchSample {
    pub fn nominal() -> Self {
        MismatchSample { factors: [1.0; N_MISMATCH] }
    }
}

pub fn sample_mismatch(seed: u64) -> MismatchSample {
    let mut rng = rng_for(seed, "mismatch", 0);
    let mut factors = [1.0; N_MISMATCH];
    for f in &mut factors {
        *f = rng.gen_range(MISMATCH_RANGE.0..=MISMATCH_RANGE.1);
    }
    MismatchSample { factors }
}

/// Ambient temperature and solar irradiation over time.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceTrajectory {
    pub name: String,
    pub time: Vec<f64>,
    pub t_ambient: Vec<f64>,
    pub q_solar: Vec<f64>,
}

impl DisturbanceTrajectory {
    pub fn constant(name: &str, t_ambient: f64, q_solar: f64, horizon: f64) -> Self {
        DisturbanceTrajectory {
            name: name.into(),
            time: vec![0.0, horizon],
            t_ambient: vec![t_ambient; 2],
            q_solar: vec![q_solar; 2],
        }
    }

    pub fn from_fn(name: &str, horizon: f64, interval: f64, f: impl Fn(f64) -> (f64, f64)) -> Self {
        let n = (horizon / interval).round() as usize;
        let time: Vec<f64> = (0..=n).map(|k| k as f64 * interval).collect();
        let (t_ambient, q_solar) = time.iter().map(|&t| f(t)).unzip();
        DisturbanceTrajectory { name: name.into(), time, t_ambient, q_solar }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |m: String| Err(PlantError::Catalog(format!("{}: {m}", self.name)));
        let n = self.time.len();
        if n == 0 || self.t_ambient.len() != n || self.q_solar.len() != n {
            return bad("series lengths differ from the time grid".into());
        }
        if self.time.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("time grid must be strictly increasing".into());
        }
        if let Some(t) = self.t_ambient.iter().find(|t| !(250.0..=320.0).contains(*t)) {
            return bad(format!("ambient temperature {t} K outside [250, 320]"));
        }
        if let Some(q) = self.q_solar.iter().find(|q| !(0.0..=1200.0).contains(*q)) {
            return bad(format!("solar irradiation {q} W outside [0, 1200]"));
        }
        Ok(())
    }

    /// Linear interpolation, held constant outside the grid.
    pub fn at(&self, t: f64) -> Disturbance {
        let n = self.time.len();
        let lerp = |v: &[f64]| {
            if t <= self.time[0] {
                return v[0];
            }
            if t >= self.time[n - 1] {
                return v[n - 1];
            }
            let i = self.time.partition_point(|&x| x <= t) - 1;
            let w = (t - self.time[i]) / (self.time[i + 1] - self.time[i]);
            v[i] + w * (v[i + 1] - v[i])
        };
        Disturbance { t_ambient: lerp(&self.t_ambient), q_solar: lerp(&self.q_solar) }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), IoError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "t_ambient", "q_solar"])?;
        for k in 0..self.time.len() {
            w.write_record([self.time[k].to_string(), self.t_ambient[k].to_string(), self.q_solar[k].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(name: &str, input: R) -> Result<Self, IoError> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != ["t", "t_ambient", "q_solar"] {
            return Err(IoError::Format(format!("{name}: expected header t,t_ambient,q_solar, got {}", header.join(","))));
        }
        let mut traj = DisturbanceTrajectory { name: name.into(), time: vec![], t_ambient: vec![], q_solar: vec![] };
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| -> Result<f64, IoError> {
                rec.get(k)
                    .and_then(|v| v.trim().parse().ok())
                    .ok_or_else(|| IoError::Format(format!("{name}: row {} column {} is not a number", i + 1, k + 1)))
            };
            traj.time.push(field(0)?);
            traj.t_ambient.push(field(1)?);
            traj.q_solar.push(field(2)?);
        }
        traj.validate().map_err(|e| IoError::Format(e.to_string()))?;
        Ok(traj)
    }
}

/// Set of disturbance trajectories sampled uniformly per episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub trajectories: Vec<DisturbanceTrajectory>,
}

impl Catalog {
    pub fn new(trajectories: Vec<DisturbanceTrajectory>) -> Result<Self, PlantError> {
        if trajectories.is_empty() {
            return Err(PlantError::Catalog("catalog is empty".into()));
        }
        for t in &trajectories {
            t.validate()?;
        }
        Ok(Catalog { trajectories })
    }

    /// Generated catalog of 24 trajectories over `horizon` seconds.
    pub fn synthetic(horizon: f64) -> Self {
        let mut v = Vec::new();
        let pi = std::f64::consts::PI;
        for (k, &amb) in [278.15, 288.15, 298.15, 308.15].iter().enumerate() {
            for (m, &q) in [0.0, 400.0].iter().enumerate() {
                v.push(DisturbanceTrajectory::constant(&format!("constant-{}{}", k + 1, ['a', 'b'][m]), amb, q, horizon));
            }
        }
        for (k, &(start, slope)) in [(283.15, 8.0), (293.15, -8.0), (300.15, 6.0), (288.15, -6.0)].iter().enumerate() {
            v.push(DisturbanceTrajectory::from_fn(&format!("ramp-{}", k + 1), horizon, 10.0, |t| {
                (start + slope * t / horizon, 200.0)
            }));
        }
        for (k, &(centre, width, base)) in [
            (200.0, 60.0, 700.0),
            (300.0, 120.0, 800.0),
            (420.0, 40.0, 600.0),
            (150.0, 200.0, 900.0),
            (480.0, 90.0, 750.0),
            (250.0, 30.0, 1000.0),
        ]
        .iter()
        .enumerate()
        {
            v.push(DisturbanceTrajectory::from_fn(&format!("cloud-{}", k + 1), horizon, 10.0, |t| {
                let dip = (-0.5 * ((t - centre) / (0.5 * width)).powi(2)).exp();
                (294.15 + 2.0 * (k as f64 - 2.5), base * (1.0 - 0.8 * dip))
            }));
        }
        for k in 0..3 {
            let amb = 310.15 + 2.5 * k as f64;
            v.push(DisturbanceTrajectory::from_fn(&format!("hot-{}", k + 1), horizon, 10.0, |t| {
                (amb + 0.5 * (2.0 * pi * t / horizon).sin(), 850.0 + 100.0 * k as f64)
            }));
        }
        for k in 0..3 {
            let amb = 268.15 + 2.0 * k as f64;
            v.push(DisturbanceTrajectory::from_fn(&format!("cold-{}", k + 1), horizon, 10.0, |t| {
                (amb - 0.5 * (2.0 * pi * t / horizon).sin(), 50.0 * k as f64)
            }));
        }
        Catalog { trajectories: v }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn sample_index(&self, seed: u64) -> usize {
        rng_for(seed, "disturbance", 0).gen_range(0..self.trajectories.len())
    }

    pub fn sample(&self, seed: u64) -> &DisturbanceTrajectory {
        &self.trajectories[self.sample_index(seed)]
    }

    /// Loads every `*.csv` in `dir`, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self, IoError> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        paths.sort();
        let mut trajectories = Vec::new();
        for p in paths {
            let name = p.file_stem().unwrap_or_default().to_string_lossy().to_string();
            trajectories.push(DisturbanceTrajectory::read_csv(&name, fs::File::open(&p)?)?);
        }
        Catalog::new(trajectories).map_err(|e| IoError::Format(e.to_string()))
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), IoError> {
        fs::create_dir_all(dir)?;
        for (k, t) in self.trajectories.iter().enumerate() {
            let file = fs::File::create(dir.join(format!("{:02}-{}.csv", k, t.name)))?;
            t.write_csv(file)?;
        }
        Ok(())
    }
}
