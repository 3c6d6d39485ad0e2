//! Deterministic state-machine components, ports, events and units.
//!
//! A component is described by a [`ComponentSpec`] (identity, ports and a
//! [`BehaviorSpec`] naming its transition logic). At runtime the behavior spec is
//! instantiated into a [`Behavior`] through a [`BehaviorRegistry`]. Behaviors
//! are mutable for speed, but every behavior can be snapshotted into an opaque
//! [`ComponentState`], which gives the pure `(state, event) -> (state, events)`
//! view exposed by [`step`].

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a component (or of a building block acting as a node).
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComponentId(pub String);

impl ComponentId {
    pub fn new(id: impl Into<String>) -> Self {
        ComponentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ComponentId {
    fn from(s: &str) -> Self {
        ComponentId(s.to_string())
    }
}

/// Identifier of a unit, the smallest deployable execution container.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitId(pub String);

impl UnitId {
    pub fn new(id: impl Into<String>) -> Self {
        UnitId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for UnitId {
    fn from(s: &str) -> Self {
        UnitId(s.to_string())
    }
}

/// Identity of an event: the emitting component, its out-port and the
/// per-port sequence number.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventId {
    pub sender: ComponentId,
    pub port: String,
    pub seq: u64,
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}#{}", self.sender, self.port, self.seq)
    }
}

/// The unit of communication between components.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub sender: ComponentId,
    pub sender_port: String,
    pub seq: u64,
    pub payload: Vec<u8>,
    /// Set only when the event was emitted by a member of a replication group.
    pub origin_replica: Option<u32>,
}

impl Event {
    pub fn new(
        sender: impl Into<ComponentId>,
        port: impl Into<String>,
        seq: u64,
        payload: Vec<u8>,
    ) -> Self {
        Event {
            sender: sender.into(),
            sender_port: port.into(),
            seq,
            payload,
            origin_replica: None,
        }
    }

    pub fn id(&self) -> EventId {
        EventId {
            sender: self.sender.clone(),
            port: self.sender_port.clone(),
            seq: self.seq,
        }
    }
}

impl From<String> for ComponentId {
    fn from(s: String) -> Self {
        ComponentId(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    In,
    Out,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Port {
    pub name: String,
    pub direction: Direction,
}

impl Port {
    pub fn input(name: impl Into<String>) -> Self {
        Port {
            name: name.into(),
            direction: Direction::In,
        }
    }

    pub fn output(name: impl Into<String>) -> Self {
        Port {
            name: name.into(),
            direction: Direction::Out,
        }
    }
}

/// Opaque serialized snapshot of a component's internal state.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComponentState(#[serde(with = "hex_bytes")] pub Vec<u8>);

impl ComponentState {
    pub fn empty() -> Self {
        ComponentState(Vec::new())
    }

    pub fn from_u64(v: u64) -> Self {
        ComponentState(v.to_le_bytes().to_vec())
    }

    /// Reads a state written by [`ComponentState::from_u64`]; empty reads as 0.
    pub fn as_u64(&self) -> Option<u64> {
        match self.0.len() {
            0 => Some(0),
            8 => Some(u64::from_le_bytes(self.0[..8].try_into().ok()?)),
            _ => None,
        }
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

/// An event emitted by a transition, before the engine stamps sender and seq.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Emission {
    pub port: String,
    pub payload: Vec<u8>,
}

impl Emission {
    pub fn new(port: impl Into<String>, payload: Vec<u8>) -> Self {
        Emission {
            port: port.into(),
            payload,
        }
    }
}

/// Names the transition logic of a component plus its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub params: serde_json::Value,
}

impl BehaviorSpec {
    pub fn new(kind: impl Into<String>) -> Self {
        BehaviorSpec {
            kind: kind.into(),
            params: serde_json::Value::Null,
        }
    }

    pub fn with_params(kind: impl Into<String>, params: serde_json::Value) -> Self {
        BehaviorSpec {
            kind: kind.into(),
            params,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub id: ComponentId,
    pub ports: Vec<Port>,
    pub behavior: BehaviorSpec,
}

impl ComponentSpec {
    pub fn new(id: impl Into<ComponentId>, behavior: BehaviorSpec) -> Self {
        ComponentSpec {
            id: id.into(),
            ports: Vec::new(),
            behavior,
        }
    }

    pub fn with_input(mut self, name: &str) -> Self {
        self.ports.push(Port::input(name));
        self
    }

    pub fn with_output(mut self, name: &str) -> Self {
        self.ports.push(Port::output(name));
        self
    }

    pub fn has_port(&self, name: &str, direction: Direction) -> bool {
        self.ports
            .iter()
            .any(|p| p.name == name && p.direction == direction)
    }

    pub fn inputs(&self) -> impl Iterator<Item = &Port> {
        self.ports.iter().filter(|p| p.direction == Direction::In)
    }

    pub fn outputs(&self) -> impl Iterator<Item = &Port> {
        self.ports.iter().filter(|p| p.direction == Direction::Out)
    }
}

/// Description of a unit: its id and the components placed on it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSpec {
    pub id: UnitId,
    pub components: Vec<ComponentId>,
}

/// A unit together with its FIFO event queue.
#[derive(Clone, Debug, Default)]
pub struct Unit {
    pub id: UnitId,
    pub component_ids: BTreeSet<ComponentId>,
    pub event_queue: VecDeque<Delivery>,
}

/// An event addressed to one in-port of one component.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub target: ComponentId,
    pub port: String,
    pub event: Event,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StepError {
    #[error("component {component} has no in-port {port}")]
    UnknownInPort {
        component: ComponentId,
        port: String,
    },
    #[error("component {component} emitted on undeclared out-port {port}")]
    UnknownOutPort {
        component: ComponentId,
        port: String,
    },
    #[error("state of component {component} could not be restored: {reason}")]
    BadState {
        component: ComponentId,
        reason: String,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BehaviorError {
    #[error("unknown behavior kind {0:?}")]
    UnknownKind(String),
    #[error("behavior kind {0:?} is already registered")]
    Duplicate(String),
    #[error("invalid parameters for {kind}: {reason}")]
    BadParams { kind: String, reason: String },
}

/// Runtime instance of a component's transition logic.
///
/// `step` must be deterministic: the emitted events and the successor
/// snapshot depend only on the current snapshot and the input event.
pub trait Behavior: Send {
    fn step(&mut self, port: &str, event: &Event) -> Vec<Emission>;

    fn snapshot(&self) -> ComponentState;

    fn restore(&mut self, state: &ComponentState) -> Result<(), String>;

    /// Diagnostics produced since the last call (consolidator mismatch reports).
    fn drain_diagnostics(&mut self) -> Vec<String> {
        Vec::new()
    }
}

pub type BehaviorFactory =
    Arc<dyn Fn(&ComponentSpec) -> Result<Box<dyn Behavior>, BehaviorError> + Send + Sync>;

/// Resolves [`BehaviorSpec`] kinds into behavior instances.
#[derive(Clone)]
pub struct BehaviorRegistry {
    factories: BTreeMap<String, BehaviorFactory>,
}

impl fmt::Debug for BehaviorRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BehaviorRegistry")
            .field("kinds", &self.factories.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Default for BehaviorRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl BehaviorRegistry {
    pub fn empty() -> Self {
        BehaviorRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// Registry holding `forward`, `sink`, `counter`, `tag`, `numbering` and
    /// `consolidator`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register_fn("forward", |spec| {
            Ok(Box::new(Forward::for_spec(spec)) as Box<dyn Behavior>)
        });
        r.register_fn("sink", |_| Ok(Box::new(Sink) as Box<dyn Behavior>));
        r.register_fn("counter", |_| {
            Ok(Box::new(Counter::default()) as Box<dyn Behavior>)
        });
        r.register_fn("tag", |spec| {
            Ok(Box::new(Tag::for_spec(spec)) as Box<dyn Behavior>)
        });
        r.register_fn("numbering", |spec| {
            Ok(Box::new(Numbering::for_spec(spec)) as Box<dyn Behavior>)
        });
        r.register_fn("consolidator", |spec| {
            crate::consolidate::ConsolidatorBehavior::from_spec(spec)
                .map(|b| Box::new(b) as Box<dyn Behavior>)
        });
        r
    }

    pub fn register(&mut self, kind: &str, factory: BehaviorFactory) -> Result<(), BehaviorError> {
        if self.factories.contains_key(kind) {
            return Err(BehaviorError::Duplicate(kind.to_string()));
        }
        self.factories.insert(kind.to_string(), factory);
        Ok(())
    }

    /// Registers or replaces a factory.
    pub fn register_fn<F>(&mut self, kind: &str, f: F)
    where
        F: Fn(&ComponentSpec) -> Result<Box<dyn Behavior>, BehaviorError> + Send + Sync + 'static,
    {
        self.factories.insert(kind.to_string(), Arc::new(f));
    }

    pub fn contains(&self, kind: &str) -> bool {
        self.factories.contains_key(kind)
    }

    pub fn instantiate(&self, spec: &ComponentSpec) -> Result<Box<dyn Behavior>, BehaviorError> {
        let factory = self
            .factories
            .get(&spec.behavior.kind)
            .ok_or_else(|| BehaviorError::UnknownKind(spec.behavior.kind.clone()))?;
        factory(spec)
    }

    pub fn initial_state(&self, spec: &ComponentSpec) -> Result<ComponentState, BehaviorError> {
        Ok(self.instantiate(spec)?.snapshot())
    }
}

/// Pure transition: applies `event` on `port` to a component in `state`.
///
/// A fresh behavior instance is restored from `state`, so the call has no
/// effects beyond its return value. On error the caller keeps its state.
pub fn step(
    registry: &BehaviorRegistry,
    spec: &ComponentSpec,
    state: &ComponentState,
    port: &str,
    event: &Event,
) -> Result<(ComponentState, Vec<Emission>), StepError> {
    if !spec.has_port(port, Direction::In) {
        return Err(StepError::UnknownInPort {
            component: spec.id.clone(),
            port: port.to_string(),
        });
    }
    let mut behavior = registry
        .instantiate(spec)
        .map_err(|e| StepError::BadState {
            component: spec.id.clone(),
            reason: e.to_string(),
        })?;
    behavior
        .restore(state)
        .map_err(|reason| StepError::BadState {
            component: spec.id.clone(),
            reason,
        })?;
    let emitted = behavior.step(port, event);
    check_emissions(spec, &emitted)?;
    Ok((behavior.snapshot(), emitted))
}

pub(crate) fn check_emissions(spec: &ComponentSpec, emitted: &[Emission]) -> Result<(), StepError> {
    for e in emitted {
        if !spec.has_port(&e.port, Direction::Out) {
            return Err(StepError::UnknownOutPort {
                component: spec.id.clone(),
                port: e.port.clone(),
            });
        }
    }
    Ok(())
}

fn out_ports(spec: &ComponentSpec) -> Vec<String> {
    spec.outputs().map(|p| p.name.clone()).collect()
}

fn broadcast(outputs: &[String], payload: &[u8]) -> Vec<Emission> {
    outputs
        .iter()
        .map(|p| Emission::new(p.clone(), payload.to_vec()))
        .collect()
}

/// Forwards every received payload to every out-port. Stateless.
#[derive(Debug, Clone, Default)]
pub struct Forward {
    outputs: Vec<String>,
}

impl Forward {
    pub fn for_spec(spec: &ComponentSpec) -> Self {
        Forward {
            outputs: out_ports(spec),
        }
    }
}

impl Behavior for Forward {
    fn step(&mut self, _port: &str, event: &Event) -> Vec<Emission> {
        broadcast(&self.outputs, &event.payload)
    }

    fn snapshot(&self) -> ComponentState {
        ComponentState::empty()
    }

    fn restore(&mut self, _state: &ComponentState) -> Result<(), String> {
        Ok(())
    }
}

/// Consumes events without reacting.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sink;

impl Behavior for Sink {
    fn step(&mut self, _port: &str, _event: &Event) -> Vec<Emission> {
        Vec::new()
    }

    fn snapshot(&self) -> ComponentState {
        ComponentState::empty()
    }

    fn restore(&mut self, _state: &ComponentState) -> Result<(), String> {
        Ok(())
    }
}

/// Counts received events; emits nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct Counter {
    pub count: u64,
}

impl Behavior for Counter {
    fn step(&mut self, _port: &str, _event: &Event) -> Vec<Emission> {
        self.count += 1;
        Vec::new()
    }

    fn snapshot(&self) -> ComponentState {
        ComponentState::from_u64(self.count)
    }

    fn restore(&mut self, state: &ComponentState) -> Result<(), String> {
        self.count = state.as_u64().ok_or("counter state must be 8 bytes")?;
        Ok(())
    }
}

/// Prefixes each payload with `<component-id>:` and forwards it on all out-ports.
/// Replicas use the id of their base component, so all replicas agree.
#[derive(Debug, Clone, Default)]
pub struct Tag {
    label: String,
    outputs: Vec<String>,
}

impl Tag {
    pub fn for_spec(spec: &ComponentSpec) -> Self {
        let label = crate::architecture::parse_replica_id(&spec.id)
            .map_or_else(|| spec.id.0.clone(), |(base, _)| base.0);
        Tag {
            label,
            outputs: out_ports(spec),
        }
    }
}

impl Behavior for Tag {
    fn step(&mut self, _port: &str, event: &Event) -> Vec<Emission> {
        let mut payload = Vec::with_capacity(self.label.len() + 1 + event.payload.len());
        payload.extend_from_slice(self.label.as_bytes());
        payload.push(b':');
        payload.extend_from_slice(&event.payload);
        broadcast(&self.outputs, &payload)
    }

    fn snapshot(&self) -> ComponentState {
        ComponentState::empty()
    }

    fn restore(&mut self, _state: &ComponentState) -> Result<(), String> {
        Ok(())
    }
}

/// Emits the running count of received events (decimal text) on all out-ports.
///
/// The multiset of emitted payloads is independent of input interleaving.
#[derive(Debug, Clone, Default)]
pub struct Numbering {
    count: u64,
    outputs: Vec<String>,
}

impl Numbering {
    pub fn for_spec(spec: &ComponentSpec) -> Self {
        Numbering {
            count: 0,
            outputs: out_ports(spec),
        }
    }
}

impl Behavior for Numbering {
    fn step(&mut self, _port: &str, _event: &Event) -> Vec<Emission> {
        self.count += 1;
        broadcast(&self.outputs, self.count.to_string().as_bytes())
    }

    fn snapshot(&self) -> ComponentState {
        ComponentState::from_u64(self.count)
    }

    fn restore(&mut self, state: &ComponentState) -> Result<(), String> {
        self.count = state.as_u64().ok_or("numbering state must be 8 bytes")?;
        Ok(())
    }
}
