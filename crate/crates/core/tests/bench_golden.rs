//! Committed oracle files must match a fresh brute-force search.
//! Set `CTXTUNE_BLESS=1` to rewrite them.

use ctxtune::bench::{golden_contexts, golden_path, load_golden, oracle_policy, write_oracle, SyntheticProblem, GOLDEN_DELTA, ORACLE_RESOLUTION};

#[test]
fn golden_oracles_reproduce() {
    for problem in SyntheticProblem::all() {
        let rows = oracle_policy(&problem, GOLDEN_DELTA, problem.g_max, &golden_contexts(), ORACLE_RESOLUTION);
        let mut fresh = Vec::new();
        write_oracle(&rows, &mut fresh).unwrap();
        let path = golden_path(&problem);
        if std::env::var_os("CTXTUNE_BLESS").is_some() {
            std::fs::write(&path, &fresh).unwrap();
        }
        let committed = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(String::from_utf8_lossy(&committed), String::from_utf8_lossy(&fresh), "{} drifted", problem.name());
        assert_eq!(load_golden(&problem).unwrap(), rows);
    }
}

#[test]
fn sin_ridge_oracle_is_constrained_beyond_midpoint() {
    let p = SyntheticProblem::by_name("sin-ridge").unwrap();
    let rows = load_golden(&p).unwrap();
    assert!(rows.iter().all(|r| r.feasible));
    let limit = p.constraint_limit(GOLDEN_DELTA, 0.0);
    let late = rows.iter().find(|r| r.s == 1.0).unwrap();
    assert!((p.constraint_exact(&late.theta, 1.0) - limit).abs() < 0.01);
}

#[test]
fn switcher_oracle_jumps_between_basins() {
    let p = SyntheticProblem::by_name("switcher").unwrap();
    let rows = load_golden(&p).unwrap();
    let jump = rows.windows(2).map(|w| (w[1].theta[0] - w[0].theta[0]).abs()).fold(0.0, f64::max);
    assert!(jump >= 0.3, "largest jump {jump}");
}
