//! Constant versus contextual parameters on the nominal plant.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use ctxtune::cabin::episode::simulate;
use ctxtune::cabin::{CabinSetup, DisturbanceTrajectory, MismatchSample};
use ctxtune::Policy;
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Constant,
    Contextual,
}

impl Variant {
    fn label(self) -> &'static str {
        match self {
            Variant::Constant => "constant",
            Variant::Contextual => "contextual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub s: f64,
    pub variant: Variant,
    pub theta1: f64,
    pub theta2: f64,
    pub settling_time: Option<f64>,
    pub overshoot: Option<f64>,
    pub violates: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub constant_theta: Vec<f64>,
    pub g_max: f64,
    pub rows: Vec<CompareRow>,
    /// Worst overshoot per variant; `None` when an episode failed.
    pub worst_constant: Option<f64>,
    pub worst_contextual: Option<f64>,
    /// Contexts where either variant exceeds `g_max` or fails.
    pub flagged: Vec<f64>,
}

fn worst(rows: &[CompareRow], variant: Variant) -> Option<f64> {
    rows.iter().filter(|r| r.variant == variant).try_fold(0.0f64, |acc, r| r.overshoot.map(|v| acc.max(v)))
}

/// Runs one nominal episode per context and variant; writes trajectory
/// dumps into `dump` when given.
pub fn run(
    setup: &CabinSetup,
    policy: &Policy<f64>,
    constant: &[f64],
    contexts: &[f64],
    disturbance: &DisturbanceTrajectory,
    g_max: f64,
    dump: Option<&Path>,
) -> Result<CompareReport, CliError> {
    let nominal = MismatchSample::nominal();
    let mut rows = Vec::new();
    for &s in contexts {
        for variant in [Variant::Constant, Variant::Contextual] {
            let theta = match variant {
                Variant::Constant => constant.to_vec(),
                Variant::Contextual => policy.query(s),
            };
            let mut row = CompareRow {
                s,
                variant,
                theta1: theta[0],
                theta2: theta[1],
                settling_time: None,
                overshoot: None,
                violates: true,
                error: None,
            };
            match simulate(setup, &theta, s, &nominal, disturbance) {
                Ok(o) => {
                    row.settling_time = Some(o.j_value);
                    row.overshoot = Some(o.g_value);
                    row.violates = o.g_value > g_max;
                    if let Some(dir) = dump {
                        fs::create_dir_all(dir)?;
                        let file = File::create(dir.join(format!("trajectory_{}_{s}.csv", variant.label())))?;
                        o.trajectory.write_csv(BufWriter::new(file))?;
                    }
                }
                Err(e) => {
                    log::warn!("{} episode at s = {s} failed: {e}", variant.label());
                    row.error = Some(e.to_string());
                }
            }
            rows.push(row);
        }
    }
    let mut flagged: Vec<f64> = rows.iter().filter(|r| r.violates).map(|r| r.s).collect();
    flagged.dedup();
    Ok(CompareReport {
        constant_theta: constant.to_vec(),
        g_max,
        worst_constant: worst(&rows, Variant::Constant),
        worst_contextual: worst(&rows, Variant::Contextual),
        flagged,
        rows,
    })
}

pub fn write(out: &Path, report: &CompareReport) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_writer(File::create(out.join("compare.csv"))?);
    w.write_record(["s", "variant", "theta1", "theta2", "settling_time", "overshoot", "violates", "error"])?;
    for r in &report.rows {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            r.s.to_string(),
            r.variant.label().to_string(),
            r.theta1.to_string(),
            r.theta2.to_string(),
            opt(r.settling_time),
            opt(r.overshoot),
            r.violates.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    fs::write(out.join("compare.json"), serde_json::to_string_pretty(report)? + "\n")?;
    Ok(())
}
