//! Experiment configuration, grid runs and result files.
//!
//! A sweep writes `output_dir/cells/<method>_noise<pct>_seed<seed>.csv` per
//! cell and `output_dir/summary.csv`. Every file opens with `#` comment
//! lines holding the resolved configuration; cell files then carry a
//! `# status:` line, a `# reported:` line and the columns
//!
//! ```text
//! method,noise,seed,epoch,model,accuracy,recall_0,...,recall_{C-1}
//! ```
//!
//! with one row per model and epoch (1-based) and a final row per model
//! whose epoch is `final`: the mean over the last epoch's evaluations.
//! Summary rows aggregate the `final` rows per (method, noise, model) as
//! mean and sample standard deviation over seeds. Floats are printed in
//! shortest round-trip form, so the summary can be recomputed exactly from
//! the cell files.

mod config;
mod experiment;
mod export;

pub use config::{load_config, parse_config, ExperimentConfig, Method};
pub use experiment::{
    cell_stem, exit_code_for, format_metrics, format_summary, metrics_columns, parse_metrics,
    parse_summary, read_metrics, run_and_write_cell, run_cell, run_experiment, summarize,
    CellOutcome, CellResult, ExperimentOutcome, MetricsFile, MetricsRow, SummaryRow,
    SUMMARY_COLUMNS,
};
pub use export::{export_confusion, format_confusion, import_confusion, parse_confusion};
