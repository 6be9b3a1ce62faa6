//! Correlation metrics, the split/seed evaluation protocol and plots.

mod metrics;
mod plot;
mod protocol;
#[cfg(feature = "nn")]
mod runner;

pub use metrics::{average_ranks, plcc, records_from, srocc, EvaluationRecord, RankCorrelation};
pub use plot::{emit_scatter_plot, read_plot_annotation, PlotAnnotation};
pub use protocol::{
    partition, run_protocol_with, Partition, ProtocolReport, ProtocolSpec, RunContext, RunResult,
    MIN_PROTOCOL_ROWS,
};
#[cfg(feature = "nn")]
pub use runner::{run_protocol, run_protocol_retrain, score_rows, train_and_score};
