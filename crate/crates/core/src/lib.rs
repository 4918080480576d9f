//! Constrained contextual Bayesian optimization of controller-parameter
//! policies, with a simulated multi-zone cabin-climate benchmark.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod bench;
pub mod cabin;
pub mod dataset;
pub mod error;
pub mod gp;
pub mod linalg;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod smoother;
pub mod stats;
pub mod tuner;

pub use acquisition::{AcquisitionConfig, MinValueSamples, Proposal};
pub use dataset::{Dataset, Record, TargetSelector};
pub use error::{EvaluationFailure, GpError, IoError, TunerError};
pub use gp::{FnPosterior, GpConfig, GpHyperparams, GpModel, HyperPrior, Posterior, Prediction, PredictionGrad};
pub use scalar::Real;
pub use smoother::{Policy, SigmaMode, SmootherConfig, SmootherError};
pub use tuner::{ContextSource, Evaluator, RunFiles, Tuner, TuningConfig, TuningOutcome};

pub type GpModel64 = GpModel<f64>;
pub type GpModel32 = GpModel<f32>;
pub type Dataset64 = Dataset<f64>;
