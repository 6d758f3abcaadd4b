//! Trace replay, metrics, cost accounting, ablation and sweeps.

pub mod harness;
pub mod metrics;
pub mod replay;

pub use harness::{
    run_ablation, run_ablation_on_days, sweep_params, AblationRow, SweepCell, Variant,
};
pub use metrics::{compute_cost, compute_metrics, Confusion, CostBreakdown, CostModel, Metrics};
pub use replay::{replay, ClusterSummary, FeedbackTiming, LogEntry, ReplayConfig, ReplayReport};
