#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod bench;
mod compare;
mod config;
mod error;
mod tune;
mod validate;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctxtune::bench::{golden_contexts, oracle_policy, write_oracle, SyntheticProblem, GOLDEN_DELTA, ORACLE_RESOLUTION};
use ctxtune::cabin::Catalog;
use ctxtune::Policy;
use serde::Serialize;

use crate::config::{Preset, RunConfig};
use crate::error::CliError;

const DEFAULT_THRESHOLDS: &str = include_str!("../../../configs/bench-thresholds.toml");

#[derive(Debug, Parser)]
#[command(name = "ctxtune", version, about = "Contextual constrained tuning of controller-parameter policies")]
struct Cli {
    /// Worker threads for episode and seed parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget: Option<usize>,
    /// Probability level of the chance constraint; overrides the preset.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    preset: Option<Preset>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.tuning.seed = seed;
        }
        if let Some(budget) = self.budget {
            cfg.tuning.budget = budget;
        }
        if let Some(preset) = self.preset {
            cfg.preset = preset;
            cfg.tuning.delta = None;
        }
        if let Some(delta) = self.delta {
            cfg.tuning.delta = Some(delta);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the tuning loop and smooth the resulting policy.
    Tune {
        #[command(flatten)]
        run: RunArgs,
        /// Run directory (default: the config's `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from the checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Re-smooth a finished run, e.g. under another probability level.
    Smooth {
        #[command(flatten)]
        run: RunArgs,
        /// Run directory holding the dataset and checkpoint (default: the config's `out`).
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Where to write policies and summary (default: the run directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo episodes with fresh mismatch, disturbance and context.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: next to the policy).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Constant versus contextual parameters on the nominal plant.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        /// Constant parameters `a,b`.
        #[arg(long, value_delimiter = ',', num_args = 2, conflicts_with = "constant_at")]
        theta: Option<Vec<f64>>,
        /// Use the policy's parameters at this context as the constant (default: the lowest compared context).
        #[arg(long)]
        constant_at: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        contexts: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tune and smooth a synthetic problem over several seeds and score it against its oracle.
    Bench {
        problem: String,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 120)]
        budget: usize,
        #[arg(long, default_value_t = GOLDEN_DELTA)]
        delta: f64,
        /// Regression limits (default: the committed thresholds).
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid-search oracle policy of a synthetic problem.
    Oracle {
        problem: String,
        #[arg(long, default_value_t = GOLDEN_DELTA)]
        delta: f64,
        #[arg(long, default_value_t = ORACLE_RESOLUTION)]
        resolution: usize,
        /// Output CSV (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the built-in disturbance catalog as CSV files.
    Catalog {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 600.0)]
        horizon: f64,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn load_policy(path: &Path) -> Result<Policy<f64>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let policy = Policy::read_csv(file).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if policy.param_dim() != 2 {
        return Err(CliError::Config(format!("{}: expected two parameters per row", path.display())));
    }
    Ok(policy)
}

fn beside(policy: &Path, name: &str) -> PathBuf {
    policy.parent().unwrap_or(Path::new(".")).join(name)
}

fn problem(name: &str) -> Result<SyntheticProblem, CliError> {
    SyntheticProblem::by_name(name).ok_or_else(|| {
        let known: Vec<&str> = SyntheticProblem::all().iter().map(|p| p.name()).collect();
        CliError::Config(format!("unknown problem {name:?}; expected one of {known:?}"))
    })
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Other(e.into()))?;
    }
    match cli.command {
        Command::Tune { run, out, resume } => {
            let mut cfg = run.load()?;
            if let Some(out) = out {
                cfg.out = out;
            }
            let result = tune::tune(&cfg, resume);
            if let Ok(summary) = &result {
                print_json(summary)?;
            }
            result.map(|_| ())
        }
        Command::Smooth { run, run_dir, out } => {
            let mut cfg = run.load()?;
            if let Some(dir) = run_dir {
                cfg.out = dir;
            }
            let out = out.unwrap_or_else(|| cfg.out.clone());
            print_json(&tune::smooth(&cfg, &out)?)
        }
        Command::Validate { config, policy, episodes, seed, out } => {
            let cfg = RunConfig::load(&config)?;
            let p = load_policy(&policy)?;
            let n = episodes.unwrap_or(cfg.validation.n_episodes);
            let seed = seed.unwrap_or(cfg.tuning.seed);
            let range = (cfg.tuning.s_min, cfg.tuning.s_max);
            let (rows, report) = validate::run(&cfg.setup()?, &p, n, seed, range, cfg.tuning.g_max);
            validate::write(&out.unwrap_or_else(|| beside(&policy, "validation")), &rows, &report)?;
            print_json(&report)
        }
        Command::Compare { config, policy, theta, constant_at, contexts, out } => {
            let cfg = RunConfig::load(&config)?;
            let p = load_policy(&policy)?;
            let contexts = contexts.unwrap_or_else(|| cfg.compare.contexts.clone());
            let (lo, hi) = (cfg.tuning.s_min, cfg.tuning.s_max);
            if contexts.is_empty() || contexts.iter().any(|s| !(*s >= lo && *s <= hi)) {
                return Err(CliError::Config(format!("contexts {contexts:?} must be non-empty and within [{lo}, {hi}]")));
            }
            let constant = match theta {
                Some(t) => t,
                None => p.query(constant_at.unwrap_or_else(|| contexts.iter().copied().fold(f64::INFINITY, f64::min))),
            };
            let out = out.unwrap_or_else(|| beside(&policy, "compare"));
            let report = compare::run(&cfg.setup()?, &p, &constant, &contexts, &cfg.compare_disturbance(), cfg.tuning.g_max, Some(&out))?;
            compare::write(&out, &report)?;
            print_json(&report)
        }
        Command::Bench { problem: name, seeds, budget, delta, thresholds, out } => {
            let problem = problem(&name)?;
            let limits = match thresholds {
                Some(path) => bench::load_thresholds(&path)?,
                None => toml::from_str(DEFAULT_THRESHOLDS).map_err(|e| CliError::Config(e.to_string()))?,
            };
            let report = bench::run(&problem, seeds, budget, delta)?;
            if let Some(out) = out {
                std::fs::create_dir_all(&out)?;
                std::fs::write(out.join(format!("bench-{name}.json")), serde_json::to_string_pretty(&report)? + "\n")?;
            }
            print_json(&report)?;
            match limits.get(&name) {
                Some(l) if l.budget == budget && l.delta == delta => {
                    let found = bench::regressions(&report, l);
                    if found.is_empty() {
                        Ok(())
                    } else {
                        Err(CliError::Regression(found.join("; ")))
                    }
                }
                Some(l) => {
                    log::info!("thresholds for {name} apply at budget {} and delta {}; not checked", l.budget, l.delta);
                    Ok(())
                }
                None => Ok(()),
            }
        }
        Command::Oracle { problem: name, delta, resolution, out } => {
            let problem = problem(&name)?;
            if resolution < 2 || !(delta > 0.0 && delta < 1.0) {
                return Err(CliError::Config("resolution must be at least 2 and delta in (0, 1)".into()));
            }
            let rows = oracle_policy(&problem, delta, problem.g_max, &golden_contexts(), resolution);
            match out {
                Some(path) => write_oracle(&rows, BufWriter::new(File::create(path)?))?,
                None => write_oracle(&rows, io::stdout().lock())?,
            }
            Ok(())
        }
        Command::Catalog { out, horizon } => {
            if !(horizon > 0.0) {
                return Err(CliError::Config("horizon must be positive".into()));
            }
            Catalog::synthetic(horizon).write_dir(&out)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
