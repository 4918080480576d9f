//! Simulated multi-zone cabin climate loop used as a tuning benchmark.

pub mod episode;
pub mod mpc;
pub mod plant;

pub use episode::{run_episode, CabinEvaluator, CabinSetup, EpisodeOutcome, EpisodeSpec};
pub use mpc::{linearize, Mpc, MpcConfig, Observer, TuningVector};
pub use plant::{sample_mismatch, Catalog, DisturbanceTrajectory, MismatchSample, PlantParams, PlantState};
