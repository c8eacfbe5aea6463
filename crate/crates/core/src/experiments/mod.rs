//! Training streams, experiment configs and the runner that drives a model
//! through them.

mod config;
mod metrics;
mod runner;
mod stream;
mod trace;

pub use config::{
    EvalSetSpec, EvalSpec, ExperimentConfig, ModelSpec, OperatorSpec, OutputSpec, PhaseSpec,
    RootValue, StreamSpec, CONFIG_VERSION,
};
pub use metrics::{evaluate, Metrics};
pub use runner::{
    run_experiment, run_stream, Divergence, MetricsRecord, PhaseSummary, Runner, TraceLog, TraceRow,
};
pub use stream::{
    diamond_label, grid_set, ingest_csv, interval_sweep, read_stream_csv, strided_mask,
    trajectory_2d, BasePoint, EvalSet, SweepTarget, TrainingEvent, TrainingStream, TrajectoryKind,
    Traversal,
};
pub use trace::{read_trace_csv, write_metrics_csv, write_trace_csv, TraceRecord};
