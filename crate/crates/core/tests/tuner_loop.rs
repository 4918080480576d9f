use std::cell::RefCell;
use std::fs;

use ctxtune::bench::{ProblemKind, SyntheticProblem};
use ctxtune::tuner::{incumbent, LogRecord};
use ctxtune::{ContextSource, EvaluationFailure, RunFiles, Tuner, TunerError};

fn problem() -> SyntheticProblem {
    SyntheticProblem::new(ProblemKind::SinRidge)
}

fn run_to(dir: &std::path::Path, budget: usize, seed: u64, resume: bool) -> ctxtune::TuningOutcome<f64> {
    let p = problem();
    let cfg = p.tuning_config(budget, 0.93, seed);
    let ctx = ContextSource::uniform((cfg.s_min, cfg.s_max), seed);
    Tuner::new(&cfg, &ctx, &p).with_files(RunFiles::new(dir), resume).run().unwrap()
}

#[test]
fn fixed_seed_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_to(a.path(), 24, 11, false);
    run_to(b.path(), 24, 11, false);
    let files = RunFiles::new(a.path());
    let other = RunFiles::new(b.path());
    assert_eq!(fs::read(files.dataset()).unwrap(), fs::read(other.dataset()).unwrap());
    assert_eq!(fs::read(files.state()).unwrap(), fs::read(other.state()).unwrap());
}

#[test]
fn different_seeds_differ() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_to(a.path(), 12, 1, false);
    run_to(b.path(), 12, 2, false);
    assert_ne!(fs::read(RunFiles::new(a.path()).dataset()).unwrap(), fs::read(RunFiles::new(b.path()).dataset()).unwrap());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let full = tempfile::tempdir().unwrap();
    let split = tempfile::tempdir().unwrap();
    let whole = run_to(full.path(), 26, 5, false);
    run_to(split.path(), 17, 5, false);
    let resumed = run_to(split.path(), 26, 5, true);
    assert_eq!(whole.dataset, resumed.dataset);
    assert_eq!(
        fs::read(RunFiles::new(full.path()).dataset()).unwrap(),
        fs::read(RunFiles::new(split.path()).dataset()).unwrap()
    );
    assert_eq!(whole.objective.hyperparams(), resumed.objective.hyperparams());
    let lines = fs::read_to_string(RunFiles::new(split.path()).log()).unwrap();
    assert_eq!(lines.lines().count(), 26);
}

#[test]
fn log_has_one_record_per_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_to(dir.path(), 15, 8, false);
    let text = fs::read_to_string(RunFiles::new(dir.path()).log()).unwrap();
    let records: Vec<LogRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 15);
    for (k, r) in records.iter().enumerate() {
        assert_eq!(r.index, k);
        assert_eq!(r.phase, if k < 10 { "initial" } else { "acquisition" });
        assert_eq!(r.acquisition.is_some(), k >= 10);
        assert_eq!(r.theta, out.dataset.params()[k]);
        assert_eq!(r.j, out.dataset.objectives()[k]);
        assert!(r.wall_time_s >= 0.0);
    }
}

#[test]
fn resume_rejects_mismatched_config() {
    let dir = tempfile::tempdir().unwrap();
    run_to(dir.path(), 12, 3, false);
    let p = problem();
    let mut cfg = p.tuning_config(20, 0.93, 3);
    cfg.theta_max = vec![0.9, 1.0];
    let ctx = ContextSource::uniform((cfg.s_min, cfg.s_max), 3);
    let err = Tuner::new(&cfg, &ctx, &p).with_files(RunFiles::new(dir.path()), true).run().unwrap_err();
    assert!(matches!(err, TunerError::Resume(_)), "{err:?}");
}

#[test]
fn evaluations_stay_in_box_and_causal() {
    let p = problem();
    let cfg = p.tuning_config(30, 0.93, 4);
    let ctx = ContextSource::uniform((cfg.s_min, cfg.s_max), 4);
    let seen = RefCell::new(Vec::new());
    let out = Tuner::new(&cfg, &ctx, &p)
        .on_fit(|snap| {
            // The models at iteration k are trained on exactly the first k rows.
            assert_eq!(snap.objective.len(), snap.evaluations);
            assert_eq!(snap.dataset.len(), snap.evaluations);
            seen.borrow_mut().push(snap.evaluations);
        })
        .run()
        .unwrap();
    assert_eq!(out.dataset.len(), 30);
    assert_eq!(*seen.borrow(), (10..=30).collect::<Vec<_>>());
    assert!(out.dataset.first_out_of_bounds(&cfg.theta_min, &cfg.theta_max, cfg.s_min, cfg.s_max).is_none());
    for (k, &s) in out.dataset.contexts().iter().enumerate() {
        assert_eq!(s, ctx.context(k));
    }
}

#[test]
fn failed_episodes_not_in_dataset() {
    let p = problem();
    let cfg = p.tuning_config(16, 0.93, 9);
    let ctx = ContextSource::uniform((cfg.s_min, cfg.s_max), 9);
    let flaky = |theta: &[f64], s: f64, seed: u64| {
        if seed % 3 == 0 {
            Err(EvaluationFailure("diverged".into()))
        } else {
            Ok(p.evaluate(theta, s, seed))
        }
    };
    match Tuner::new(&cfg, &ctx, &flaky).run() {
        Ok(out) => {
            assert_eq!(out.dataset.len(), 16);
            assert!(out.dataset.objectives().iter().all(|v| v.is_finite()));
        }
        Err(TunerError::EvaluationAborted { .. }) => {}
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn incumbent_mostly_non_increasing() {
    let p = problem();
    let mut steps = 0usize;
    let mut good = 0usize;
    for seed in 0..10 {
        let cfg = p.tuning_config(80, 0.93, seed);
        let ctx = ContextSource::uniform((cfg.s_min, cfg.s_max), seed);
        let trace = RefCell::new(Vec::new());
        Tuner::new(&cfg, &ctx, &p)
            .on_fit(|snap| {
                let inc = incumbent(snap.dataset, snap.objective, snap.constraint, 0.5, cfg.delta, cfg.g_max).unwrap();
                trace.borrow_mut().push(p.objective_exact(&inc.theta, 0.5));
            })
            .run()
            .unwrap();
        for w in trace.borrow().windows(2) {
            steps += 1;
            if w[1] <= w[0] {
                good += 1;
            }
        }
    }
    let rate = good as f64 / steps as f64;
    assert!(rate >= 0.9, "non-increasing in {good}/{steps} steps");
}
