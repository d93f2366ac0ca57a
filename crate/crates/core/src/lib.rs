//! Deterministic discrete-event simulator for asynchronous federated learning.
//!
//! The coordinator picks clients by a staleness-aware utility, screens their
//! training losses for outliers, and paces aggregation so that no update is
//! more than `b` versions stale. Buffered, synchronous, Oort-style and random
//! baselines run on the same engine. Every run writes a line-delimited JSON
//! event log that the [`analysis`] verifiers can check after the fact.

// `!(x > 0.0)` is the NaN-rejecting form used throughout input validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod analysis;
pub mod config;
pub mod engine;
pub mod error;
pub mod events;
pub mod numeric;
pub mod selection;
pub mod tasks;

pub use aggregation::{AggregationEvent, AggregationMode, LocalUpdate};
pub use analysis::{convergence_bound, metrics_summary, verify, BoundParams, MetricsSummary, VerifierReport};
pub use config::{parse_scenario, ScenarioConfig};
pub use engine::{run_scenario, RunOutput, Simulation};
pub use error::{Error, Result};
pub use events::{EventKind, SimEvent};
pub use numeric::{ModelVector, RngStream};
pub use selection::{ClientId, ClientProfile, Policy};
pub use tasks::{Dataset, TaskKind};
