//! Component model and architecture tooling for replicated event-driven
//! applications.
//!
//! An application is a set of deterministic state-machine components wired
//! together by connections and grouped into units (the logical software
//! architecture, [`Lsa`]). A resilience configuration selects components for
//! active replication; [`setup_replication`] turns the LSA into a
//! replication-enriched architecture ([`Resa`]) by inserting frontends,
//! replica proxies and consolidators and rewiring connections. The
//! [`deploy`] module places the resulting units on devices.
//!
//! - [`model`]: events, ports, components, behaviors
//! - [`engine`]: sequential unit execution and routing
//! - [`architecture`]: LSA, resilience config, group sizing
//! - [`transform`]: the LSA → ReSA transformation
//! - [`consolidate`]: output consolidation policies
//! - [`deploy`]: placement, keys, artifacts
//! - [`auth`]: message authentication

pub mod architecture;
pub mod auth;
pub mod consolidate;
pub mod deploy;
pub mod engine;
pub mod model;
pub mod transform;

pub use architecture::{
    group_size, parse_resilience_config, validate_lsa, Connection, Endpoint, FaultModel, Lsa,
    ReplicationGroup, ResilienceConfig, Technology,
};
pub use consolidate::{Consolidator, ConsolidatorPolicy, ConsolidatorRegistry};
pub use engine::{Observer, Outbound, Router, UnitEngine};
pub use model::{
    BehaviorRegistry, BehaviorSpec, ComponentId, ComponentSpec, Delivery, Event, UnitId, UnitSpec,
};
pub use transform::{setup_replication, PlacementHints, Resa};
