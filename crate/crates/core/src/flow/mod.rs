//! Parameterized Wasserstein gradient flow: the pullback metric, the
//! parameter gradient, kernel projection and time integration.

mod integrate;
mod metric;
mod metrics;

pub use integrate::{
    det_signs, push_batch, streams, Flow, FlowConfig, Integrator, PwgfState, Resampling,
    RunFailure, RunOutput, Snapshot, StageBatch, StepStats,
};
pub use metric::{
    grad_theta_f, kernel_project, metric_matvec, natural_velocity, MetricOperator, Velocity,
};
pub use metrics::{RunMetrics, StepRecord, METRICS_HEADER};
