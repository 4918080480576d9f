//! Monte Carlo validation of a policy on fresh episodes.

use std::fs::{self, File};
use std::path::Path;

use ctxtune::cabin::{run_episode, CabinSetup};
use ctxtune::rng::{rng_for, substream, uniform_in_box};
use ctxtune::Policy;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub seed: u64,
    pub s: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub settling_time: Option<f64>,
    pub overshoot: Option<f64>,
    pub satisfied: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub median: f64,
    pub p90: f64,
    pub max: f64,
}

impl Spread {
    fn of(values: &[f64]) -> Option<Spread> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        let q = |p: f64| {
            let pos = p * (n - 1.0);
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Spread { mean, std: var.sqrt(), min: v[0], median: q(0.5), p90: q(0.9), max: v[v.len() - 1] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n_episodes: usize,
    pub completed: usize,
    pub failed: usize,
    pub g_max: f64,
    /// Share of all episodes with overshoot within `g_max`; failures count
    /// as unsatisfied.
    pub satisfaction_rate: Option<f64>,
    pub settling_time: Option<Spread>,
    pub overshoot: Option<Spread>,
}

/// Episode `k` of a validation run: its seed and context.
pub fn episode_draw(seed: u64, k: usize, s_range: (f64, f64)) -> (u64, f64) {
    let mut rng = rng_for(seed, "validate-context", k as u64);
    let s = uniform_in_box(&[s_range.0], &[s_range.1], &mut rng)[0];
    (substream(seed, "validate", k as u64), s)
}

pub fn run(setup: &CabinSetup, policy: &Policy<f64>, n: usize, seed: u64, s_range: (f64, f64), g_max: f64) -> (Vec<EpisodeRow>, ValidationReport) {
    let rows: Vec<EpisodeRow> = (0..n)
        .into_par_iter()
        .map(|k| {
            let (ep_seed, s) = episode_draw(seed, k, s_range);
            let theta = policy.query(s);
            let mut row = EpisodeRow {
                episode: k,
                seed: ep_seed,
                s,
                theta1: theta[0],
                theta2: theta[1],
                settling_time: None,
                overshoot: None,
                satisfied: false,
                error: None,
            };
            match run_episode(setup, &theta, s, ep_seed) {
                Ok(o) => {
                    row.settling_time = Some(o.j_value);
                    row.overshoot = Some(o.g_value);
                    row.satisfied = o.g_value <= g_max;
                }
                Err(e) => {
                    log::warn!("episode {k} failed: {e}");
                    row.error = Some(e.to_string());
                }
            }
            row
        })
        .collect();
    let ts: Vec<f64> = rows.iter().filter_map(|r| r.settling_time).collect();
    let dx: Vec<f64> = rows.iter().filter_map(|r| r.overshoot).collect();
    let report = ValidationReport {
        n_episodes: n,
        completed: ts.len(),
        failed: n - ts.len(),
        g_max,
        satisfaction_rate: (n > 0).then(|| rows.iter().filter(|r| r.satisfied).count() as f64 / n as f64),
        settling_time: Spread::of(&ts),
        overshoot: Spread::of(&dx),
    };
    (rows, report)
}

pub fn write(out: &Path, rows: &[EpisodeRow], report: &ValidationReport) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_writer(File::create(out.join("validation.csv"))?);
    w.write_record(["episode", "seed", "s", "theta1", "theta2", "settling_time", "overshoot", "satisfied", "error"])?;
    for r in rows {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            r.episode.to_string(),
            r.seed.to_string(),
            r.s.to_string(),
            r.theta1.to_string(),
            r.theta2.to_string(),
            opt(r.settling_time),
            opt(r.overshoot),
            r.satisfied.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    fs::write(out.join("validation.json"), serde_json::to_string_pretty(report)? + "\n")?;
    Ok(())
}
