//! Metrics, the two synthetic benchmark sweeps, result files and plots.

mod metrics;
mod plot;
mod records;
mod runner;

pub use metrics::{error_tensor, output_error, poly_refit, refit_predict, ScaledPolynomial, REFIT_DEGREE};
pub use plot::{boxplot_svg, quartiles, BoxSeries, Quartiles};
pub use records::{parse_results_csv, results_csv, timings_csv, RunRecord, RunStatus};
pub use runner::{
    certification_table, median, run_experiment, run_mono_experiment, run_trig_experiment, summarize,
    write_outputs, CellSummary, Execution, ExperimentKind, ExperimentSpec,
};
