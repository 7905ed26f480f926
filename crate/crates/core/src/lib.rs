//! Online state estimation for unbalanced multiphase distribution feeders.
//!
//! The state is the stacked per-node power consumption `z = [p; q]`; node
//! voltages follow from the power flow `v = g(p, q)`. Estimators fit `z` to a
//! weighted least-squares objective over voltage-magnitude meters,
//! pseudo-measurements of load, and zero-injection constraints.

// Parameter checks are written as `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod feeder;
pub mod measurement;
pub mod metrics;
pub mod powerflow;
pub mod scenario;

pub use error::{Error, Result};
pub use estimators::{BoundParameters, EstimatorState, LinearWlsProblem, OnlineSettings, VoltageRefresh};
pub use feeder::{load_feeder, FeederModel, FeederTemplate, Node, Phase};
pub use measurement::{ArrivalPolicy, MeasurementBatch, Meter, MeterKind, MeterSet};
pub use metrics::{EstimatorMetrics, MetricsSummary};
pub use powerflow::{InjectionVector, JacobianMethod, PowerFlowOptions, SensitivityMatrix, VoltageSolution};
pub use scenario::{run_online, Algorithm, EstimatorConfig, OnlineRun, RunTrace, Scenario};
