//! Execution harness for replicated applications.
//!
//! [`sim`] is a seeded discrete-event network simulator with fault
//! injection and a message trace. [`unit_node`] runs one deployed unit
//! (components, frontends, replicas) on top of any message transport, and
//! [`transport`]/[`runner`] carry the same nodes over TCP sockets in real time.

pub mod config;
pub mod runner;
pub mod sim;
pub mod transport;
pub mod unit_node;

pub use config::{ConfigError, FaultAction, FaultScript, Partition, PreGst, SimConfig};
pub use sim::{audit_delivery_bound, Node, NodeId, Outbox, Sim, TraceKind, TraceRecord};
pub use unit_node::{
    build_nodes, Probe, ScheduledInput, SharedProbe, Ticker, Timing, UnitNode, WireMsg,
};
