//! Total-order multicast for replication groups.
//!
//! Clients ([`Client`]) broadcast signed requests to all `n` replicas. The
//! leader of the current view (`view mod n`) batches pending requests and
//! runs a three-phase agreement (PROPOSE, WRITE, ACCEPT) per slot; a batch is
//! decided once a quorum of matching ACCEPT votes is collected, and decided
//! batches are executed in slot order. Replicas that see no progress start a
//! view change; the next leader re-proposes whatever may have been decided.
//!
//! Both reactors are sans-IO: they consume messages and timer ticks and
//! return what to send, which makes them easy to drive from a simulator or a
//! socket runtime.

pub mod byzantine;
pub mod client;
pub mod config;
pub mod message;
pub mod replica;

pub use byzantine::{ByzantineMode, UnknownMode};
pub use client::Client;
pub use config::{client_principal, quorum, replica_principal, OrderConfig, TICK_MS};
pub use message::{Body, Dest, Envelope, Request, Sender};
pub use replica::{DeliveryLog, Executed, Output, Replica};
