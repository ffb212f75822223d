//! Experiment harness: equivalence at scale, bias, variance, rate and
//! ambient-dimension studies, with CSV/JSON reports.

mod config;
mod fit;
mod report;
mod runs;
mod tasks;

pub use config::{Estimator, ExperimentConfig, TaskFamily};
pub use fit::{fit_loglog_slope, mean_stderr, pairwise_sum, SlopeFit};
pub use report::{Check, ExperimentReport, ReportRow, SlopeSummary, SCHEMA_VERSION};
pub use runs::{
    dump_stages, run_ambient_experiment, run_bias_experiment, run_equivalence_suite,
    run_rate_experiment, run_variance_experiment, AMBIENT_RATIO, EQUIVALENCE_TOL, FRAME_TOL,
};
pub use tasks::{draw_function, TaskDraw};
