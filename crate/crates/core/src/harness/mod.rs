//! Dataset generation, evaluation drivers and metrics.

pub mod dataset;
pub mod eval;

pub use dataset::{generate_demos, generate_demos_at, Demo, Normalization};
pub use eval::{ablate_timestep, evaluate, mode_coverage, EvalConfig, EvalMode, MixtureOracle, PoseModel, TrialReport};
