//! Synthetic benchmark runs gated by committed thresholds.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ctxtune::bench::{golden_contexts, load_golden, oracle_policy, run_seed, summarize, BenchReport, SyntheticProblem, GOLDEN_DELTA, ORACLE_RESOLUTION};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Regression limits for one problem, applied when a run matches the
/// recorded budget and probability level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub budget: usize,
    pub delta: f64,
    pub max_median_suboptimality: Option<f64>,
    pub max_worst_suboptimality: Option<f64>,
    pub max_violations: Option<usize>,
    /// Fraction of box width, checked on every seed.
    pub max_second_difference: Option<f64>,
    pub require_surrogate_feasible: Option<bool>,
}

pub type ThresholdFile = BTreeMap<String, Thresholds>;

pub fn load_thresholds(path: &Path) -> Result<ThresholdFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn run(problem: &SyntheticProblem, seeds: u64, budget: usize, delta: f64) -> Result<BenchReport, CliError> {
    let oracle = if delta == GOLDEN_DELTA {
        load_golden(problem)?
    } else {
        oracle_policy(problem, delta, problem.g_max, &golden_contexts(), ORACLE_RESOLUTION)
    };
    let results = (1..=seeds)
        .into_par_iter()
        .map(|seed| run_seed(problem, budget, delta, seed, &oracle).map(|r| r.0))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(problem, budget, delta, results))
}

/// Human-readable breaches of `limits`; empty when the report passes.
pub fn regressions(report: &BenchReport, limits: &Thresholds) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(m) = limits.max_median_suboptimality {
        if !(report.median_suboptimality <= m) {
            out.push(format!("median suboptimality {:.4} > {m}", report.median_suboptimality));
        }
    }
    if let Some(m) = limits.max_worst_suboptimality {
        if !(report.worst_suboptimality <= m) {
            out.push(format!("worst suboptimality {:.4} > {m}", report.worst_suboptimality));
        }
    }
    if let Some(m) = limits.max_violations {
        if report.violations > m {
            out.push(format!("{} constraint violations > {m}", report.violations));
        }
    }
    for r in &report.seeds {
        if let Some(m) = limits.max_second_difference {
            if !(r.max_second_difference <= m) {
                out.push(format!("seed {}: max second difference {:.4} > {m}", r.seed, r.max_second_difference));
            }
        }
        if limits.require_surrogate_feasible == Some(true) && !r.surrogate_feasible {
            out.push(format!("seed {}: smoothed policy leaves the feasible set", r.seed));
        }
    }
    out
}
