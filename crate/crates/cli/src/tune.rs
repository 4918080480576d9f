//! `tune` and `smooth`: run the loop, then derive the policy from the final models.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ctxtune::cabin::CabinEvaluator;
use ctxtune::smoother::smooth_with_pointwise;
use ctxtune::{ContextSource, Dataset, GpHyperparams, Policy, RunFiles, SmootherError, Tuner, TuningOutcome};
use serde::Serialize;

use crate::config::{Preset, RunConfig};
use crate::error::CliError;

pub const SMOOTHED: &str = "policy_smoothed.csv";
pub const POINTWISE: &str = "policy_pointwise.csv";
pub const SUMMARY: &str = "summary.json";
pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Debug, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum SmoothingReport {
    Feasible {
        gamma: f64,
        max_second_difference: f64,
        pointwise_max_jump: f64,
        min_feasibility: f64,
    },
    Infeasible {
        context: f64,
        max_feasibility: f64,
    },
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub preset: Preset,
    pub delta: f64,
    pub g_max: f64,
    pub seed: u64,
    pub evaluations: usize,
    pub failures: usize,
    pub objective_hyperparams: GpHyperparams<f64>,
    pub constraint_hyperparams: GpHyperparams<f64>,
    pub smoothing: SmoothingReport,
}

fn write_policy(path: &Path, policy: &Policy<f64>) -> Result<(), CliError> {
    policy.write_csv(BufWriter::new(File::create(path)?))?;
    Ok(())
}

fn widths(cfg: &RunConfig) -> Vec<f64> {
    cfg.tuning.theta_min.iter().zip(&cfg.tuning.theta_max).map(|(a, b)| b - a).collect()
}

/// Smooths the final models and writes policies and summary into `out`.
/// Stale policy files are removed when smoothing is infeasible.
pub fn finish(cfg: &RunConfig, outcome: &TuningOutcome<f64>, out: &Path) -> Result<Summary, CliError> {
    fs::create_dir_all(out)?;
    let smoothing = match smooth_with_pointwise(&outcome.objective, &outcome.constraint, &cfg.smoother_config()) {
        Ok((policy, pointwise)) => {
            write_policy(&out.join(SMOOTHED), &policy)?;
            write_policy(&out.join(POINTWISE), &pointwise)?;
            let w = widths(cfg);
            SmoothingReport::Feasible {
                gamma: policy.gamma.unwrap_or(f64::NAN),
                max_second_difference: policy.max_second_difference(&w),
                pointwise_max_jump: pointwise.max_jump(&w),
                min_feasibility: policy.feasibility.iter().copied().fold(f64::INFINITY, f64::min),
            }
        }
        Err(SmootherError::Infeasible { context, max_feasibility }) => {
            for name in [SMOOTHED, POINTWISE] {
                let _ = fs::remove_file(out.join(name));
            }
            SmoothingReport::Infeasible { context, max_feasibility }
        }
        Err(e) => return Err(e.into()),
    };
    let summary = Summary {
        preset: cfg.preset,
        delta: cfg.delta(),
        g_max: cfg.tuning.g_max,
        seed: cfg.tuning.seed,
        evaluations: outcome.dataset.len(),
        failures: outcome.failures,
        objective_hyperparams: outcome.objective.hyperparams().clone(),
        constraint_hyperparams: outcome.constraint.hyperparams().clone(),
        smoothing,
    };
    fs::write(out.join(SUMMARY), serde_json::to_string_pretty(&summary)? + "\n")?;
    let text = toml::to_string(cfg).map_err(|e| CliError::Other(e.into()))?;
    fs::write(out.join(RESOLVED_CONFIG), text)?;
    Ok(summary)
}

fn run_loop(cfg: &RunConfig, files: RunFiles, resume: bool) -> Result<TuningOutcome<f64>, CliError> {
    let tc = cfg.tuning_config();
    let contexts = ContextSource::uniform((tc.s_min, tc.s_max), tc.seed);
    let evaluator = CabinEvaluator::new(cfg.setup()?);
    let budget = tc.budget;
    let outcome = Tuner::new(&tc, &contexts, &evaluator)
        .with_files(files, resume)
        .on_fit(|snap| {
            if snap.evaluations % 10 == 0 || snap.evaluations == budget {
                log::info!("{}/{} evaluations", snap.evaluations, budget);
            }
        })
        .run()?;
    Ok(outcome)
}

fn check(summary: &Summary) -> Result<(), CliError> {
    match summary.smoothing {
        SmoothingReport::Feasible { .. } => Ok(()),
        SmoothingReport::Infeasible { context, max_feasibility } => Err(CliError::Infeasible(format!(
            "no parameters reach feasibility {} at context {context} (best {max_feasibility:.4}); dataset and summary written",
            summary.delta
        ))),
    }
}

pub fn tune(cfg: &RunConfig, resume: bool) -> Result<Summary, CliError> {
    let outcome = run_loop(cfg, RunFiles::new(&cfg.out), resume)?;
    let summary = finish(cfg, &outcome, &cfg.out)?;
    check(&summary)?;
    Ok(summary)
}

/// Rebuilds the final models of the run in `cfg.out` without new
/// evaluations and smooths them under `cfg`'s probability level. The tuning
/// data do not depend on that level, so one run serves both presets.
pub fn smooth(cfg: &RunConfig, out: &Path) -> Result<Summary, CliError> {
    let files = RunFiles::new(&cfg.out);
    let dataset = Dataset::<f64>::read_csv(File::open(files.dataset())?)?;
    let mut cfg = cfg.clone();
    cfg.tuning.budget = dataset.len();
    cfg.validate()?;
    let outcome = run_loop(&cfg, files, true)?;
    cfg.out = PathBuf::from(out);
    let summary = finish(&cfg, &outcome, out)?;
    check(&summary)?;
    Ok(summary)
}

