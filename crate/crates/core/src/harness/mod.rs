//! Experiment drivers: error metrics, convergence studies, benchmarks and
//! single runs with their output files.

pub mod bench;
pub mod convergence;
pub mod metrics;
pub mod run;

pub use bench::{bench, time_run, BenchReport, BenchRow, Method};
pub use convergence::{converge_particles, converge_timestep, Axis, ConvergenceReport, ConvergenceSample};
pub use metrics::{fit_loglog_slope, relative_l2};
pub use run::{run_method, RunSummary};

use crate::scenario::{builtin, ScenarioSpec};

/// The three named builtin scenarios.
pub fn builtin_scenarios() -> Vec<(&'static str, ScenarioSpec)> {
    builtin::all()
}
