//! Incremental and final-output metrics, policy analysis and throughput
//! measurement.

mod bench;
mod incremental;
mod policy;
mod report;
mod spans;

pub use bench::{throughput_bench, BenchResult};
pub use incremental::{
    correction_time, delayed_view, edit_overhead, incremental_scores, relative_correctness, substitutions,
};
pub use policy::{policy_distribution, PolicyCounts, PolicyDistribution};
pub use report::{metrics_report, MetricsReport};
pub use spans::{is_iob, iob_spans, span_f1_iob, token_accuracy, Span, SpanCounts};
