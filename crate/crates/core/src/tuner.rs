//! The outer optimization loop: initial space-filling design, then per
//! evaluation a surrogate refit, context arrival, acquisition maximization
//! and a black-box query.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::acquisition::{optimize_acquisition, AcquisitionConfig};
use crate::dataset::{parse_real, Dataset, TargetSelector};
use crate::error::{EvaluationFailure, IoError, TunerError};
use crate::gp::{GpConfig, GpHyperparams, GpModel, Posterior};
use crate::rng::{latin_hypercube, rng_for, substream};
use crate::scalar::Real;
use crate::stats::prob_below;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct TuningConfig<T> {
    pub theta_min: Vec<T>,
    pub theta_max: Vec<T>,
    pub s_min: T,
    pub s_max: T,
    pub g_max: T,
    pub delta: T,
    pub budget: usize,
    pub n_initial: usize,
    /// Smoothing weight; `None` selects it automatically.
    #[serde(default)]
    pub gamma: Option<T>,
    pub n_grid: usize,
    pub seed: u64,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
}

impl<T: Real> TuningConfig<T> {
    pub fn validate(&self) -> Result<(), TunerError> {
        let bad = |m: String| Err(TunerError::Config(m));
        if self.theta_min.is_empty() || self.theta_min.len() != self.theta_max.len() {
            return bad("theta_min and theta_max must be non-empty and equally long".into());
        }
        if self.theta_min.iter().zip(&self.theta_max).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return bad(format!("need theta_min < theta_max, got {:?} / {:?}", self.theta_min, self.theta_max));
        }
        if !(self.s_min < self.s_max) || !self.s_min.is_finite() || !self.s_max.is_finite() {
            return bad(format!("need s_min < s_max, got {} / {}", self.s_min, self.s_max));
        }
        if !(self.delta > T::zero() && self.delta < T::one()) {
            return bad(format!("delta {} outside (0, 1)", self.delta));
        }
        if self.n_initial < 2 || self.n_initial > self.budget {
            return bad(format!("need 2 <= n_initial <= budget, got {} / {}", self.n_initial, self.budget));
        }
        if self.n_grid < 3 {
            return bad(format!("n_grid {} < 3", self.n_grid));
        }
        if self.gamma.is_some_and(|g| !(g >= T::zero())) {
            return bad("gamma must be non-negative".into());
        }
        if self.g_max.is_nan() {
            return bad("g_max is NaN".into());
        }
        self.acquisition.validate().map_err(TunerError::Config)
    }

    pub fn param_dim(&self) -> usize {
        self.theta_min.len()
    }

    /// Joint (θ, s) box used for surrogate normalization.
    pub fn joint_bounds(&self) -> Vec<(T, T)> {
        let mut b: Vec<(T, T)> = self.theta_min.iter().copied().zip(self.theta_max.iter().copied()).collect();
        b.push((self.s_min, self.s_max));
        b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContextMode<T> {
    /// Replay recorded contexts in order, cycling when exhausted.
    Replay(Vec<T>),
    UniformRandom,
}

/// Supplies the context for each evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSource<T> {
    pub mode: ContextMode<T>,
    pub bounds: (T, T),
    pub seed: u64,
}

impl<T: Real> ContextSource<T> {
    pub fn uniform(bounds: (T, T), seed: u64) -> Self {
        ContextSource { mode: ContextMode::UniformRandom, bounds, seed }
    }

    pub fn replay(values: Vec<T>, bounds: (T, T)) -> Result<Self, TunerError> {
        if values.is_empty() {
            return Err(TunerError::Config("context replay list is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= bounds.0 && **v <= bounds.1)) {
            return Err(TunerError::Config(format!("replayed context {v} outside [{}, {}]", bounds.0, bounds.1)));
        }
        Ok(ContextSource { mode: ContextMode::Replay(values), bounds, seed: 0 })
    }

    /// Reads one context per line; blank lines, `#` comments and a
    /// non-numeric first line (header) are skipped.
    pub fn replay_file(path: &Path, bounds: (T, T)) -> Result<Self, TunerError> {
        let text = fs::read_to_string(path).map_err(IoError::from)?;
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let field = line.split(',').next().unwrap_or("").trim();
            if field.is_empty() || field.starts_with('#') {
                continue;
            }
            match parse_real::<T>(field) {
                Some(v) => values.push(v),
                None if i == 0 => {}
                None => return Err(TunerError::Config(format!("{}:{}: bad context {field:?}", path.display(), i + 1))),
            }
        }
        Self::replay(values, bounds)
    }

    /// Context for evaluation number `index`.
    pub fn context(&self, index: usize) -> T {
        match &self.mode {
            ContextMode::Replay(v) => v[index % v.len()],
            ContextMode::UniformRandom => {
                use rand::Rng;
                let mut rng = rng_for(self.seed, "context", index as u64);
                let u: f64 = rng.gen();
                self.bounds.0 + (self.bounds.1 - self.bounds.0) * T::lit(u)
            }
        }
    }
}

/// Black-box objective and constraint `(θ, s) → (j, g)`.
pub trait Evaluator<T>: Sync {
    fn evaluate(&self, theta: &[T], context: T, seed: u64) -> Result<(T, T), EvaluationFailure>;
}

impl<T, F> Evaluator<T> for F
where
    F: Fn(&[T], T, u64) -> Result<(T, T), EvaluationFailure> + Sync,
{
    fn evaluate(&self, theta: &[T], context: T, seed: u64) -> Result<(T, T), EvaluationFailure> {
        self(theta, context, seed)
    }
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub index: usize,
    pub phase: String,
    pub theta: Vec<f64>,
    pub s: f64,
    pub j: f64,
    pub g: f64,
    pub acquisition: Option<f64>,
    pub feasibility: Option<f64>,
    pub exploration_fallback: bool,
    pub min_value_fallback: bool,
    pub surrogate_fallback: bool,
    pub failed_attempts: u32,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
struct ResumeState<T> {
    evaluations: usize,
    objective: Option<GpHyperparams<T>>,
    constraint: Option<GpHyperparams<T>>,
}

/// Output directory layout of a run.
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RunFiles { dir: dir.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.dir.join("dataset.csv")
    }

    pub fn log(&self) -> PathBuf {
        self.dir.join("run_log.jsonl")
    }

    pub fn state(&self) -> PathBuf {
        self.dir.join("state.json")
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Models fitted at one iteration, passed to progress observers.
pub struct Snapshot<'a, T> {
    pub evaluations: usize,
    pub dataset: &'a Dataset<T>,
    pub objective: &'a GpModel<T>,
    pub constraint: &'a GpModel<T>,
}

#[derive(Debug, Clone)]
pub struct TuningOutcome<T> {
    pub dataset: Dataset<T>,
    pub objective: GpModel<T>,
    pub constraint: GpModel<T>,
    /// Failed evaluation attempts (never added to the dataset).
    pub failures: usize,
}

type SnapshotHook<'a, T> = Box<dyn FnMut(&Snapshot<'_, T>) + 'a>;

pub struct Tuner<'a, T: Real, E: Evaluator<T>> {
    config: &'a TuningConfig<T>,
    contexts: &'a ContextSource<T>,
    evaluator: &'a E,
    files: Option<RunFiles>,
    resume: bool,
    hook: Option<SnapshotHook<'a, T>>,
}

impl<'a, T: Real, E: Evaluator<T>> Tuner<'a, T, E> {
    pub fn new(config: &'a TuningConfig<T>, contexts: &'a ContextSource<T>, evaluator: &'a E) -> Self {
        Tuner { config, contexts, evaluator, files: None, resume: false, hook: None }
    }

    /// Persist the dataset checkpoint, run log and resume state in `files`.
    /// With `resume`, an existing checkpoint there is continued.
    pub fn with_files(mut self, files: RunFiles, resume: bool) -> Self {
        self.files = Some(files);
        self.resume = resume;
        self
    }

    /// Called with the freshly fitted models at every iteration.
    pub fn on_fit(mut self, hook: impl FnMut(&Snapshot<'_, T>) + 'a) -> Self {
        self.hook = Some(Box::new(hook));
        self
    }

    pub fn run(mut self) -> Result<TuningOutcome<T>, TunerError> {
        let cfg = self.config;
        cfg.validate()?;
        let (mut dataset, mut warm_j, mut warm_g) = self.load_or_create()?;
        let mut log = match &self.files {
            Some(f) => Some(BufWriter::new(OpenOptions::new().create(true).append(true).open(f.log()).map_err(IoError::from)?)),
            None => None,
        };
        let mut failures = 0;

        let design = self.design();
        while dataset.len() < cfg.n_initial {
            let k = dataset.len();
            let started = Instant::now();
            let s = self.contexts.context(k);
            let (j, g, failed) = self.evaluate_with_retry(k, &design[k], s)?;
            failures += failed as usize;
            dataset.push(&design[k], s, j, g);
            let rec = LogRecord {
                index: k,
                phase: "initial".into(),
                theta: to_f64(&design[k]),
                s: s.to_f64_lossy(),
                j: j.to_f64_lossy(),
                g: g.to_f64_lossy(),
                acquisition: None,
                feasibility: None,
                exploration_fallback: false,
                min_value_fallback: false,
                surrogate_fallback: false,
                failed_attempts: failed,
                wall_time_s: started.elapsed().as_secs_f64(),
            };
            self.checkpoint(&dataset, None, None, log.as_mut(), &rec)?;
        }

        let bounds = cfg.joint_bounds();
        let (lower, upper) = (&cfg.theta_min[..], &cfg.theta_max[..]);
        loop {
            let k = dataset.len();
            let started = Instant::now();
            let inputs = dataset.inputs();
            let (gp_j, fb_j) = fit_or_reuse(&inputs, dataset.objectives(), TargetSelector::Objective, &bounds, &cfg.gp, warm_j.as_ref(), substream(cfg.seed, "gp-objective", k as u64))?;
            let (gp_g, fb_g) = fit_or_reuse(&inputs, dataset.constraints(), TargetSelector::Constraint, &bounds, &cfg.gp, warm_g.as_ref(), substream(cfg.seed, "gp-constraint", k as u64))?;
            warm_j = Some(gp_j.hyperparams().clone());
            warm_g = Some(gp_g.hyperparams().clone());
            if let Some(h) = self.hook.as_mut() {
                h(&Snapshot { evaluations: k, dataset: &dataset, objective: &gp_j, constraint: &gp_g });
            }
            if k >= cfg.budget {
                return Ok(TuningOutcome { dataset, objective: gp_j, constraint: gp_g, failures });
            }

            let s = self.contexts.context(k);
            let mut rng = rng_for(cfg.seed, "acquisition", k as u64);
            let proposal = optimize_acquisition(&gp_j, &gp_g, s, (lower, upper), cfg.g_max, &cfg.acquisition, &mut rng);
            let (j, g, failed) = self.evaluate_with_retry(k, &proposal.theta, s)?;
            failures += failed as usize;
            dataset.push(&proposal.theta, s, j, g);
            let rec = LogRecord {
                index: k,
                phase: "acquisition".into(),
                theta: to_f64(&proposal.theta),
                s: s.to_f64_lossy(),
                j: j.to_f64_lossy(),
                g: g.to_f64_lossy(),
                acquisition: Some(proposal.score.to_f64_lossy()),
                feasibility: Some(proposal.feasibility.to_f64_lossy()),
                exploration_fallback: proposal.exploration_fallback,
                min_value_fallback: proposal.min_value_fallback,
                surrogate_fallback: fb_j || fb_g,
                failed_attempts: failed,
                wall_time_s: started.elapsed().as_secs_f64(),
            };
            self.checkpoint(&dataset, warm_j.as_ref(), warm_g.as_ref(), log.as_mut(), &rec)?;
        }
    }

    fn design(&self) -> Vec<Vec<T>> {
        let mut rng = rng_for(self.config.seed, "initial-design", 0);
        latin_hypercube(self.config.n_initial, &self.config.theta_min, &self.config.theta_max, &mut rng)
    }

    #[allow(clippy::type_complexity)]
    fn load_or_create(&self) -> Result<(Dataset<T>, Option<GpHyperparams<T>>, Option<GpHyperparams<T>>), TunerError> {
        let cfg = self.config;
        let fresh = Dataset::new(cfg.param_dim());
        let Some(files) = &self.files else {
            return Ok((fresh, None, None));
        };
        fs::create_dir_all(&files.dir).map_err(IoError::from)?;
        if !self.resume || !files.dataset().exists() {
            for p in [files.dataset(), files.log(), files.state()] {
                if p.exists() {
                    fs::remove_file(&p).map_err(IoError::from)?;
                }
            }
            return Ok((fresh, None, None));
        }
        let ds = Dataset::read_csv(File::open(files.dataset()).map_err(IoError::from)?)?;
        if ds.param_dim() != cfg.param_dim() {
            return Err(TunerError::Resume(format!("checkpoint has {} parameters, config {}", ds.param_dim(), cfg.param_dim())));
        }
        if ds.len() > cfg.budget {
            return Err(TunerError::Resume(format!("checkpoint holds {} evaluations, budget is {}", ds.len(), cfg.budget)));
        }
        if let Some(i) = ds.first_out_of_bounds(&cfg.theta_min, &cfg.theta_max, cfg.s_min, cfg.s_max) {
            return Err(TunerError::Resume(format!("checkpoint row {i} lies outside the configured box")));
        }
        let state: ResumeState<T> = if files.state().exists() {
            serde_json::from_slice(&fs::read(files.state()).map_err(IoError::from)?).map_err(IoError::from)?
        } else {
            ResumeState { evaluations: ds.len(), objective: None, constraint: None }
        };
        if state.evaluations != ds.len() {
            return Err(TunerError::Resume(format!("state records {} evaluations, dataset {}", state.evaluations, ds.len())));
        }
        log::info!("resuming from {} evaluations", ds.len());
        Ok((ds, state.objective, state.constraint))
    }

    fn checkpoint(
        &self,
        dataset: &Dataset<T>,
        hyper_j: Option<&GpHyperparams<T>>,
        hyper_g: Option<&GpHyperparams<T>>,
        log: Option<&mut BufWriter<File>>,
        record: &LogRecord,
    ) -> Result<(), TunerError> {
        log::debug!("evaluation {}: s={} j={} g={}", record.index, record.s, record.j, record.g);
        let Some(files) = &self.files else {
            return Ok(());
        };
        let state = ResumeState { evaluations: dataset.len(), objective: hyper_j.cloned(), constraint: hyper_g.cloned() };
        write_atomic(&files.state(), &serde_json::to_vec(&state).map_err(IoError::from)?)?;
        let mut buf = Vec::new();
        dataset.write_csv(&mut buf)?;
        write_atomic(&files.dataset(), &buf)?;
        if let Some(w) = log {
            serde_json::to_writer(&mut *w, record).map_err(IoError::from)?;
            w.write_all(b"\n").map_err(IoError::from)?;
            w.flush().map_err(IoError::from)?;
        }
        Ok(())
    }

    /// Evaluates, retrying once with a fresh seed. Returns `(j, g, failed attempts)`.
    fn evaluate_with_retry(&self, index: usize, theta: &[T], s: T) -> Result<(T, T, u32), TunerError> {
        let mut last = String::new();
        for attempt in 0..2u64 {
            let seed = substream(self.config.seed, "episode", 2 * index as u64 + attempt);
            match self.evaluator.evaluate(theta, s, seed) {
                Ok((j, g)) if j.is_finite() && g.is_finite() => return Ok((j, g, attempt as u32)),
                Ok((j, g)) => last = format!("non-finite result j={j}, g={g}"),
                Err(e) => last = e.0,
            }
            log::warn!("evaluation {index} attempt {} failed: {last}", attempt + 1);
        }
        Err(TunerError::EvaluationAborted { index, theta: to_f64(theta), context: s.to_f64_lossy(), message: last })
    }
}

fn to_f64<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

fn fit_or_reuse<T: Real>(
    inputs: &[Vec<T>],
    targets: &[T],
    selector: TargetSelector,
    bounds: &[(T, T)],
    config: &GpConfig,
    previous: Option<&GpHyperparams<T>>,
    seed: u64,
) -> Result<(GpModel<T>, bool), TunerError> {
    match GpModel::fit(inputs, targets, Some(bounds), config, previous, seed) {
        Ok(m) => Ok((m, false)),
        Err(e) => {
            let Some(prev) = previous else {
                return Err(e.into());
            };
            log::warn!("surrogate fit for {selector:?} failed ({e}); reusing previous hyperparameters");
            let m = GpModel::with_hyperparams(inputs, targets, Some(bounds), prev.clone())?;
            Ok((m, true))
        }
    }
}

/// Evaluates the initial design only.
pub fn initial_design<T: Real, E: Evaluator<T>>(
    config: &TuningConfig<T>,
    contexts: &ContextSource<T>,
    evaluator: &E,
) -> Result<Dataset<T>, TunerError> {
    let mut cfg = config.clone();
    cfg.budget = cfg.n_initial;
    Ok(Tuner::new(&cfg, contexts, evaluator).run()?.dataset)
}

/// Runs the full loop without persistence.
pub fn run<T: Real, E: Evaluator<T>>(
    config: &TuningConfig<T>,
    contexts: &ContextSource<T>,
    evaluator: &E,
) -> Result<TuningOutcome<T>, TunerError> {
    Tuner::new(config, contexts, evaluator).run()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent<T> {
    pub theta: Vec<T>,
    pub objective_mean: T,
    pub feasibility: T,
    /// No evaluated parameter reaches `delta`; this is the most feasible one.
    pub infeasible: bool,
}

/// Best evaluated parameter vector for context `s` under the current models.
pub fn incumbent<T: Real, J: Posterior<T> + ?Sized, G: Posterior<T> + ?Sized>(
    dataset: &Dataset<T>,
    objective: &J,
    constraint: &G,
    s: T,
    delta: T,
    g_max: T,
) -> Option<Incumbent<T>> {
    let scored: Vec<Incumbent<T>> = dataset
        .params()
        .iter()
        .map(|theta| {
            let mut x = theta.clone();
            x.push(s);
            let pg = constraint.predict(&x);
            let feasibility = prob_below(g_max, pg.mean, constraint.predict_noisy_std(&x));
            Incumbent { theta: theta.clone(), objective_mean: objective.predict(&x).mean, feasibility, infeasible: false }
        })
        .collect();
    let feasible = scored
        .iter()
        .filter(|c| c.feasibility >= delta)
        .fold(None::<&Incumbent<T>>, |b, c| match b {
            Some(b) if b.objective_mean <= c.objective_mean => Some(b),
            _ => Some(c),
        });
    if let Some(b) = feasible {
        return Some(b.clone());
    }
    let best = scored.iter().fold(None::<&Incumbent<T>>, |b, c| match b {
        Some(b) if b.feasibility >= c.feasibility => Some(b),
        _ => Some(c),
    })?;
    log::warn!("no feasible incumbent at context {s}; reporting the most feasible evaluated point");
    Some(Incumbent { infeasible: true, ..best.clone() })
}
