//! Monte Carlo harness: data-generating processes, superpopulation truths,
//! a parallel replication runner and the performance metrics.

pub mod dgp;
pub mod metrics;
pub mod rng;
pub mod runner;
pub mod truth;

pub use dgp::{DgpConfig, Effect, Family, Scenario, VarianceConvention};
pub use metrics::{compute_metrics, MetricRow, ReConvention};
pub use rng::SimRng;
pub use runner::{run_replications, SimReport, SimRow};
pub use truth::{true_estimands, truth_for_config, TruthTable};
