//! Sequential step-loop execution of a unit.
//!
//! A unit pops one event at a time from its FIFO queue and runs the target
//! component's transition to completion before touching the next event.
//! Emitted events addressed to components on the same unit are appended to
//! the queue; everything else is handed to the caller as [`Outbound`].

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use thiserror::Error;

use crate::architecture::{Connection, Endpoint, Technology};
use crate::model::{
    check_emissions, Behavior, BehaviorError, BehaviorRegistry, ComponentId, ComponentSpec,
    ComponentState, Delivery, Direction, Event, StepError, UnitId,
};

pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;

/// A delivery target resolved from a connection.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Target {
    /// Unit hosting the target node, if known.
    pub unit: Option<UnitId>,
    pub node: ComponentId,
    pub port: String,
    pub technology: Technology,
}

/// Precomputed connection table.
#[derive(Clone, Debug, Default)]
pub struct Router {
    table: BTreeMap<(ComponentId, String), Vec<Target>>,
}

impl Router {
    pub fn new(connections: &[Connection], placement: &BTreeMap<ComponentId, UnitId>) -> Self {
        let mut table: BTreeMap<(ComponentId, String), Vec<Target>> = BTreeMap::new();
        for c in connections {
            table
                .entry((c.source.node.clone(), c.source.port.clone()))
                .or_default()
                .push(Target {
                    unit: placement.get(&c.target.node).cloned(),
                    node: c.target.node.clone(),
                    port: c.target.port.clone(),
                    technology: c.technology,
                });
        }
        Router { table }
    }

    /// Targets reachable from `source` over exactly one connection.
    pub fn targets(&self, source: &ComponentId, port: &str) -> &[Target] {
        self.table
            .get(&(source.clone(), port.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

/// Resolves the delivery targets of `event` over `connections`. An event
/// leaving an unconnected out-port yields no targets and bumps `unconnected`.
pub fn route(
    event: &Event,
    connections: &[Connection],
    placement: &BTreeMap<ComponentId, UnitId>,
    unconnected: &mut u64,
) -> Vec<Target> {
    let targets: Vec<Target> = connections
        .iter()
        .filter(|c| c.source.node == event.sender && c.source.port == event.sender_port)
        .map(|c| Target {
            unit: placement.get(&c.target.node).cloned(),
            node: c.target.node.clone(),
            port: c.target.port.clone(),
            technology: c.technology,
        })
        .collect();
    if targets.is_empty() {
        *unconnected += 1;
    }
    targets
}

/// An event leaving the unit, or addressed to a non-component node on it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outbound {
    pub target: Target,
    pub event: Event,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("unit {unit}: exceeded {limit} steps in one run (possible event cycle, last component {last})")]
    StepLimit {
        unit: UnitId,
        limit: u64,
        last: ComponentId,
    },
    #[error("unit {unit}: cannot instantiate {component}: {source}")]
    Instantiate {
        unit: UnitId,
        component: ComponentId,
        source: BehaviorError,
    },
}

/// Counters maintained by a [`UnitEngine`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub steps: u64,
    pub enqueued: u64,
    pub consumed: u64,
    /// Events emitted on out-ports without any connection.
    pub unconnected: u64,
    /// Deliveries rejected because the target port is not a declared in-port.
    pub rejected: u64,
    /// Deepest nesting of transitions observed; sequential execution keeps it at 1.
    pub max_depth: u32,
}

/// Hooks for measurement; called synchronously inside the step loop.
pub trait Observer {
    fn delivered(&mut self, _unit: &UnitId, _delivery: &Delivery) {}
    fn emitted(&mut self, _unit: &UnitId, _from: &ComponentId, _event: &Event) {}
    fn diagnostic(&mut self, _unit: &UnitId, _component: &ComponentId, _message: &str) {}
}

/// Observer that ignores everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoObserver;

impl Observer for NoObserver {}

struct Slot {
    spec: ComponentSpec,
    behavior: Box<dyn Behavior>,
    next_seq: BTreeMap<String, u64>,
    /// Replica instances stamp their events with the group's base id.
    stamp: Option<(ComponentId, u32)>,
}

/// The runtime of one unit.
pub struct UnitEngine {
    id: UnitId,
    slots: BTreeMap<ComponentId, Slot>,
    queue: VecDeque<Delivery>,
    router: Arc<Router>,
    max_steps: u64,
    stats: EngineStats,
    depth: u32,
    diagnostics: Vec<String>,
}

impl std::fmt::Debug for UnitEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UnitEngine")
            .field("id", &self.id)
            .field("components", &self.slots.keys().collect::<Vec<_>>())
            .field("queued", &self.queue.len())
            .field("stats", &self.stats)
            .finish()
    }
}

impl UnitEngine {
    /// Builds the runtime for `components`. `stamps` maps replica instance
    /// ids to their (base id, replica index).
    pub fn new(
        id: UnitId,
        components: &[ComponentSpec],
        registry: &BehaviorRegistry,
        router: Arc<Router>,
        stamps: &BTreeMap<ComponentId, (ComponentId, u32)>,
    ) -> Result<Self, EngineError> {
        let mut slots = BTreeMap::new();
        for spec in components {
            let behavior =
                registry
                    .instantiate(spec)
                    .map_err(|source| EngineError::Instantiate {
                        unit: id.clone(),
                        component: spec.id.clone(),
                        source,
                    })?;
            slots.insert(
                spec.id.clone(),
                Slot {
                    spec: spec.clone(),
                    behavior,
                    next_seq: BTreeMap::new(),
                    stamp: stamps.get(&spec.id).cloned(),
                },
            );
        }
        Ok(UnitEngine {
            id,
            slots,
            queue: VecDeque::new(),
            router,
            max_steps: DEFAULT_MAX_STEPS,
            stats: EngineStats::default(),
            depth: 0,
            diagnostics: Vec::new(),
        })
    }

    pub fn with_max_steps(mut self, max_steps: u64) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn id(&self) -> &UnitId {
        &self.id
    }

    pub fn stats(&self) -> &EngineStats {
        &self.stats
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn hosts(&self, component: &ComponentId) -> bool {
        self.slots.contains_key(component)
    }

    pub fn component_ids(&self) -> impl Iterator<Item = &ComponentId> {
        self.slots.keys()
    }

    pub fn snapshot(&self, component: &ComponentId) -> Option<ComponentState> {
        self.slots.get(component).map(|s| s.behavior.snapshot())
    }

    /// Serialized states of all hosted components, keyed by id.
    pub fn snapshots(&self) -> BTreeMap<ComponentId, ComponentState> {
        self.slots
            .iter()
            .map(|(id, s)| (id.clone(), s.behavior.snapshot()))
            .collect()
    }

    pub fn take_diagnostics(&mut self) -> Vec<String> {
        std::mem::take(&mut self.diagnostics)
    }

    /// Appends a delivery to the queue.
    pub fn enqueue(&mut self, delivery: Delivery) {
        self.stats.enqueued += 1;
        self.queue.push_back(delivery);
    }

    /// Routes `event` as if it left `source` (used for events that enter the
    /// unit through a proxy and keep their original identity).
    pub fn inject(&mut self, source: &Endpoint, event: Event, out: &mut Vec<Outbound>) {
        self.dispatch(&source.node, &source.port, event, out);
    }

    fn dispatch(&mut self, node: &ComponentId, port: &str, event: Event, out: &mut Vec<Outbound>) {
        let router = Arc::clone(&self.router);
        let targets = router.targets(node, port);
        if targets.is_empty() {
            self.stats.unconnected += 1;
            return;
        }
        for t in targets {
            if self.slots.contains_key(&t.node) && t.technology != Technology::TotalOrderMulticast {
                self.enqueue(Delivery {
                    target: t.node.clone(),
                    port: t.port.clone(),
                    event: event.clone(),
                });
            } else {
                out.push(Outbound {
                    target: t.clone(),
                    event: event.clone(),
                });
            }
        }
    }

    /// Executes queued events until the queue is empty.
    ///
    /// Returns the number of steps executed. Remote and non-component
    /// targets are appended to `out`.
    pub fn run_to_stable(
        &mut self,
        out: &mut Vec<Outbound>,
        observer: &mut dyn Observer,
    ) -> Result<u64, EngineError> {
        let mut steps = 0u64;
        while let Some(delivery) = self.queue.pop_front() {
            self.stats.consumed += 1;
            if steps >= self.max_steps {
                self.queue.push_front(delivery);
                self.stats.consumed -= 1;
                let last = self
                    .queue
                    .front()
                    .map(|d| d.target.clone())
                    .unwrap_or_else(|| ComponentId::new("?"));
                return Err(EngineError::StepLimit {
                    unit: self.id.clone(),
                    limit: self.max_steps,
                    last,
                });
            }
            steps += 1;
            self.execute(delivery, out, observer);
        }
        Ok(steps)
    }

    fn execute(
        &mut self,
        delivery: Delivery,
        out: &mut Vec<Outbound>,
        observer: &mut dyn Observer,
    ) {
        let Some(slot) = self.slots.get_mut(&delivery.target) else {
            self.stats.rejected += 1;
            self.diagnostics.push(format!(
                "unit {}: no component {}",
                self.id, delivery.target
            ));
            return;
        };
        if !slot.spec.has_port(&delivery.port, Direction::In) {
            self.stats.rejected += 1;
            let err = StepError::UnknownInPort {
                component: delivery.target.clone(),
                port: delivery.port.clone(),
            };
            self.diagnostics.push(err.to_string());
            observer.diagnostic(&self.id, &delivery.target, &err.to_string());
            return;
        }
        self.depth += 1;
        self.stats.max_depth = self.stats.max_depth.max(self.depth);
        self.stats.steps += 1;
        observer.delivered(&self.id, &delivery);
        let emitted = slot.behavior.step(&delivery.port, &delivery.event);
        for d in slot.behavior.drain_diagnostics() {
            observer.diagnostic(&self.id, &delivery.target, &d);
            self.diagnostics.push(d);
        }
        if let Err(e) = check_emissions(&slot.spec, &emitted) {
            self.diagnostics.push(e.to_string());
        }
        let source = delivery.target;
        let mut stamped = Vec::with_capacity(emitted.len());
        for em in emitted {
            if !slot.spec.has_port(&em.port, Direction::Out) {
                continue;
            }
            let seq = slot.next_seq.entry(em.port.clone()).or_insert(0);
            let (sender, origin) = match &slot.stamp {
                Some((base, idx)) => (base.clone(), Some(*idx)),
                None => (source.clone(), None),
            };
            let event = Event {
                sender,
                sender_port: em.port,
                seq: *seq,
                payload: em.payload,
                origin_replica: origin,
            };
            *seq += 1;
            stamped.push(event);
        }
        self.depth -= 1;
        for event in stamped {
            observer.emitted(&self.id, &source, &event);
            let port = event.sender_port.clone();
            self.dispatch(&source, &port, event, out);
        }
    }
}

/// Convenience: all component ids named in `connections`.
pub fn nodes_of(connections: &[Connection]) -> BTreeSet<ComponentId> {
    connections
        .iter()
        .flat_map(|c| [c.source.node.clone(), c.target.node.clone()])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{step, BehaviorSpec};

    fn spec(id: &str, kind: &str) -> ComponentSpec {
        ComponentSpec::new(id, BehaviorSpec::new(kind))
            .with_input("in")
            .with_output("out")
    }

    fn conn(a: &str, b: &str) -> Connection {
        Connection::new(
            Endpoint::new(a, "out"),
            Endpoint::new(b, "in"),
            Technology::Local,
        )
    }

    fn engine(components: &[ComponentSpec], connections: &[Connection]) -> UnitEngine {
        let placement = components
            .iter()
            .map(|c| (c.id.clone(), UnitId::new("u")))
            .collect();
        let router = Arc::new(Router::new(connections, &placement));
        UnitEngine::new(
            UnitId::new("u"),
            components,
            &BehaviorRegistry::with_builtins(),
            router,
            &BTreeMap::new(),
        )
        .unwrap()
    }

    fn input(target: &str, payload: &[u8]) -> Delivery {
        Delivery {
            target: target.into(),
            port: "in".into(),
            event: Event::new("env", "out", 0, payload.to_vec()),
        }
    }

    #[derive(Default)]
    struct Log(Vec<(ComponentId, Vec<u8>)>);

    impl Observer for Log {
        fn delivered(&mut self, _unit: &UnitId, d: &Delivery) {
            self.0.push((d.target.clone(), d.event.payload.clone()));
        }
    }

    #[test]
    fn forward_keeps_payload_with_fresh_seq() {
        let reg = BehaviorRegistry::with_builtins();
        let s = spec("P", "forward");
        let st = reg.initial_state(&s).unwrap();
        let e = Event::new("L", "out", 41, b"hello".to_vec());
        let (st2, out) = step(&reg, &s, &st, "in", &e).unwrap();
        assert_eq!(st2, st);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].payload, b"hello");

        let mut eng = engine(&[s, spec("S", "sink")], &[conn("P", "S")]);
        eng.enqueue(Delivery {
            target: "P".into(),
            port: "in".into(),
            event: e.clone(),
        });
        eng.enqueue(Delivery {
            target: "P".into(),
            port: "in".into(),
            event: e,
        });
        let mut emitted = Vec::new();
        struct Em<'a>(&'a mut Vec<Event>);
        impl Observer for Em<'_> {
            fn emitted(&mut self, _u: &UnitId, _c: &ComponentId, e: &Event) {
                self.0.push(e.clone());
            }
        }
        eng.run_to_stable(&mut Vec::new(), &mut Em(&mut emitted))
            .unwrap();
        assert_eq!(
            emitted.iter().map(|e| e.seq).collect::<Vec<_>>(),
            vec![0, 1]
        );
        assert!(emitted.iter().all(|e| e.sender.as_str() == "P"));
    }

    #[test]
    fn sink_is_noop() {
        let reg = BehaviorRegistry::with_builtins();
        let s = spec("S", "sink");
        let st = reg.initial_state(&s).unwrap();
        let (st2, out) = step(&reg, &s, &st, "in", &Event::new("x", "out", 0, vec![1])).unwrap();
        assert_eq!(st2, st);
        assert!(out.is_empty());
    }

    #[test]
    fn counter_replay_is_deterministic() {
        let reg = BehaviorRegistry::with_builtins();
        let s = spec("C", "counter");
        let trace: Vec<Event> = (0..10)
            .map(|i| Event::new("x", "out", i, vec![i as u8]))
            .collect();
        let run = || {
            let mut st = reg.initial_state(&s).unwrap();
            for e in &trace {
                st = step(&reg, &s, &st, "in", e).unwrap().0;
            }
            st
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.as_u64(), Some(10));
    }

    #[test]
    fn unknown_port_rejected_state_unchanged() {
        let reg = BehaviorRegistry::with_builtins();
        let s = spec("C", "counter");
        let st = ComponentState::from_u64(3);
        let err = step(&reg, &s, &st, "nope", &Event::new("x", "out", 0, vec![])).unwrap_err();
        assert!(matches!(err, StepError::UnknownInPort { .. }));

        let mut eng = engine(&[s], &[]);
        eng.enqueue(Delivery {
            target: "C".into(),
            port: "nope".into(),
            event: Event::new("x", "out", 0, vec![]),
        });
        eng.run_to_stable(&mut Vec::new(), &mut NoObserver).unwrap();
        assert_eq!(eng.snapshot(&"C".into()).unwrap().as_u64(), Some(0));
        assert_eq!(eng.stats().rejected, 1);
        assert_eq!(eng.take_diagnostics().len(), 1);
    }

    #[test]
    fn single_sink_one_step() {
        let mut eng = engine(&[spec("S", "sink")], &[]);
        eng.enqueue(input("S", b"e"));
        assert_eq!(
            eng.run_to_stable(&mut Vec::new(), &mut NoObserver).unwrap(),
            1
        );
        assert_eq!(eng.queue_len(), 0);
    }

    #[test]
    fn two_hop_routing() {
        let mut eng = engine(
            &[spec("A", "forward"), spec("B", "sink")],
            &[conn("A", "B")],
        );
        eng.enqueue(input("A", b"x"));
        let mut log = Log::default();
        assert_eq!(eng.run_to_stable(&mut Vec::new(), &mut log).unwrap(), 2);
        assert_eq!(
            log.0,
            vec![("A".into(), b"x".to_vec()), ("B".into(), b"x".to_vec())]
        );
    }

    #[test]
    fn empty_queue_returns_immediately() {
        let mut eng = engine(&[spec("S", "sink")], &[]);
        assert_eq!(
            eng.run_to_stable(&mut Vec::new(), &mut NoObserver).unwrap(),
            0
        );
    }

    #[test]
    fn route_examples() {
        let placement: BTreeMap<ComponentId, UnitId> = [("B", "ub"), ("C", "uc")]
            .iter()
            .map(|(c, u)| (ComponentId::new(*c), UnitId::new(*u)))
            .collect();
        let e = Event::new("A", "out", 0, vec![]);
        let mut warn = 0;
        let t = route(&e, &[conn("A", "B")], &placement, &mut warn);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].unit, Some(UnitId::new("ub")));
        assert_eq!((t[0].node.as_str(), t[0].port.as_str()), ("B", "in"));
        assert_eq!(warn, 0);

        assert!(route(&e, &[conn("X", "B")], &placement, &mut warn).is_empty());
        assert_eq!(warn, 1);

        let mut t = route(&e, &[conn("A", "C"), conn("A", "B")], &placement, &mut warn);
        t.sort();
        assert_eq!(
            t.iter().map(|t| t.node.as_str()).collect::<Vec<_>>(),
            vec!["B", "C"]
        );
    }

    #[test]
    fn unconnected_out_port_is_counted() {
        let mut eng = engine(&[spec("A", "forward")], &[]);
        eng.enqueue(input("A", b"x"));
        eng.run_to_stable(&mut Vec::new(), &mut NoObserver).unwrap();
        assert_eq!(eng.stats().unconnected, 1);
    }

    #[test]
    fn cycle_hits_step_limit() {
        let mut eng = engine(
            &[spec("A", "forward"), spec("B", "forward")],
            &[conn("A", "B"), conn("B", "A")],
        )
        .with_max_steps(1000);
        eng.enqueue(input("A", b"loop"));
        let err = eng
            .run_to_stable(&mut Vec::new(), &mut NoObserver)
            .unwrap_err();
        assert!(matches!(err, EngineError::StepLimit { limit: 1000, .. }));
    }

    #[test]
    fn remote_targets_are_outbound() {
        let placement: BTreeMap<ComponentId, UnitId> = [("A", "u"), ("R", "v")]
            .iter()
            .map(|(c, u)| (ComponentId::new(*c), UnitId::new(*u)))
            .collect();
        let router = Arc::new(Router::new(
            &[Connection::new(
                Endpoint::new("A", "out"),
                Endpoint::new("R", "in"),
                Technology::Socket,
            )],
            &placement,
        ));
        let mut eng = UnitEngine::new(
            UnitId::new("u"),
            &[spec("A", "forward")],
            &BehaviorRegistry::with_builtins(),
            router,
            &BTreeMap::new(),
        )
        .unwrap();
        eng.enqueue(input("A", b"x"));
        let mut out = Vec::new();
        eng.run_to_stable(&mut out, &mut NoObserver).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].target.unit, Some(UnitId::new("v")));
        assert_eq!(eng.stats().max_depth, 1);
        assert_eq!(eng.stats().enqueued, eng.stats().consumed);
    }

    #[test]
    fn replica_stamp_uses_base_id() {
        let b0 = spec("B#0", "forward");
        let placement = [(ComponentId::new("B#0"), UnitId::new("u"))]
            .into_iter()
            .collect();
        let router = Arc::new(Router::new(
            &[Connection::new(
                Endpoint::new("B#0", "out"),
                Endpoint::new("K", "out"),
                Technology::Socket,
            )],
            &placement,
        ));
        let stamps = [(ComponentId::new("B#0"), (ComponentId::new("B"), 0))]
            .into_iter()
            .collect();
        let mut eng = UnitEngine::new(
            UnitId::new("u"),
            &[b0],
            &BehaviorRegistry::with_builtins(),
            router,
            &stamps,
        )
        .unwrap();
        eng.enqueue(input("B#0", b"x"));
        let mut out = Vec::new();
        eng.run_to_stable(&mut out, &mut NoObserver).unwrap();
        assert_eq!(out[0].event.sender.as_str(), "B");
        assert_eq!(out[0].event.origin_replica, Some(0));
    }
}
