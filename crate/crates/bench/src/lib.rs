//! Benchmarks for replicated event-driven applications.
//!
//! * [`ordering`]: closed-loop clients against a four-replica BFT group.
//! * [`overhead`]: the loadgen → processor → reporter loop over a backlog
//!   sweep, plain and with the processor replicated.
//! * [`leader`]: a paced workload with the ordering leader crashed mid-run.
//!
//! Results are written as CSV plus SVG plots by [`report`].

use repli_core::transform::TransformError;
use repli_harness::transport::TransportError;
use repli_harness::unit_node::BuildError;
use repli_harness::ConfigError;
use thiserror::Error;

pub mod leader;
pub mod metrics;
pub mod ordering;
pub mod output;
pub mod overhead;
pub mod report;
pub mod workload;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Sim(#[from] ConfigError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("{} events lost, {duplicates} duplicated; first missing ids: {:?}", missing.len(), &missing[..missing.len().min(10)])]
    Loss { missing: Vec<u64>, duplicates: u64 },
    #[error("run ended after {done} of {total} events")]
    Incomplete { done: u64, total: u64 },
    #[error("no data points")]
    EmptySeries,
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
