//! Ensemble studies across an `ℓ`-ladder, their diagnostics and the
//! command layer behind the binary.

pub mod analysis;
pub mod commands;
pub mod ensemble;
pub mod io;
pub mod plan;
pub mod study;

pub use analysis::*;
pub use ensemble::{mean_se, run_ensemble, run_ensemble_with, EnsembleSummary, TrajectorySeed};
pub use plan::{stream_id, trajectory_rng, ExperimentPlan, Precision};
pub use study::{converge, ConvergeResult, Discrimination, EntryStatus};
