//! Runtime of one deployed unit: its component engine plus the ordering
//! endpoints of the frontends and replica proxies placed on it.
//!
//! Component events travel between units as [`WireMsg::Event`]. Events sent
//! to a frontend are wrapped into ordering requests; requests decided by a
//! replica are unwrapped and injected at the co-located replica proxy, whose
//! connections lead to the replica (and, between groups, to a consolidator).
//!
//! Under simulated timing, events between units are numbered per link and
//! acknowledged, and unacknowledged ones are resent, so that a lossy
//! simulated network behaves like the TCP links of a deployment.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use repli_core::architecture::{Endpoint, ReplicationGroup};
use repli_core::auth::KeyedHash;
use repli_core::engine::{EngineError, Observer, Outbound, Router, UnitEngine};
use repli_core::model::{BehaviorRegistry, ComponentId, Delivery, Event, UnitId};
use repli_core::transform::{origin_label, proxy_id, Resa};
use repli_order::byzantine::flip_byte;
use repli_order::{
    client_principal, ByzantineMode, Client, Dest, Envelope, OrderConfig, Output, Replica,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{Node, NodeId, Outbox};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WireMsg {
    Event {
        target: ComponentId,
        port: String,
        event: Event,
    },
    /// An event numbered on its link.
    Linked {
        seq: u64,
        target: ComponentId,
        port: String,
        event: Event,
    },
    /// All linked events below `upto` arrived.
    LinkAck { upto: u64 },
    Order {
        group: ComponentId,
        dest: Dest,
        env: Envelope,
    },
}

/// Ticks after which an unacknowledged linked event is resent.
pub const LINK_RESEND: u64 = 10;

#[derive(Default)]
struct OutLink {
    next: u64,
    /// seq → (last send tick, message)
    unacked: BTreeMap<u64, (u64, WireMsg)>,
}

#[derive(Default)]
struct InLink {
    next: u64,
    held: BTreeMap<u64, Delivery>,
}

/// Measurement hooks, shared by all units of a run.
pub trait Probe: Send {
    fn delivered(&mut self, _now: u64, _unit: &UnitId, _delivery: &Delivery) {}
    fn emitted(&mut self, _now: u64, _unit: &UnitId, _from: &ComponentId, _event: &Event) {}
    fn executed(
        &mut self,
        _now: u64,
        _unit: &UnitId,
        _group: &ComponentId,
        _replica: u32,
        _slot: u64,
    ) {
    }
    fn failed(&mut self, _now: u64, _unit: &UnitId, _frontend: &ComponentId, _seq: u64) {}
}

pub type SharedProbe = Arc<Mutex<dyn Probe>>;

/// An event fed to a component from outside the architecture.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScheduledInput {
    pub tick: u64,
    pub target: ComponentId,
    pub port: String,
    pub payload: Vec<u8>,
}

/// A periodic external input (e.g. a rate-limiting credit source).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ticker {
    pub every: u64,
    pub target: ComponentId,
    pub port: String,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UnitStats {
    pub events_in: u64,
    pub events_out: u64,
    pub requests: u64,
    pub executed: u64,
    pub delivery_failures: u64,
    pub undeliverable: u64,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("unit {0} is not part of the architecture")]
    UnknownUnit(UnitId),
    #[error("replica proxy {0} refers to an unknown group")]
    UnknownGroup(ComponentId),
}

/// Clock domain of a run; selects ordering timeouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Timing {
    /// Simulator ticks.
    Simulated,
    /// Milliseconds.
    Realtime,
}

impl Timing {
    pub fn order_config(self, g: &ReplicationGroup) -> OrderConfig {
        let name = g.base_component.to_string();
        match self {
            Timing::Simulated => OrderConfig::simulated(name, g.n, g.f, g.fault_model),
            Timing::Realtime => OrderConfig::realtime(name, g.n, g.f, g.fault_model),
        }
    }
}

/// Where every node of the architecture lives.
#[derive(Debug)]
pub struct Directory {
    pub node_of_unit: BTreeMap<UnitId, NodeId>,
    pub unit_of: BTreeMap<ComponentId, UnitId>,
    /// (group, replica index) → node.
    pub replica_node: BTreeMap<(ComponentId, u32), NodeId>,
    /// Frontend id → node.
    pub client_node: BTreeMap<String, NodeId>,
}

impl Directory {
    pub fn new(resa: &Resa) -> Self {
        let node_of_unit: BTreeMap<UnitId, NodeId> = resa
            .units
            .iter()
            .enumerate()
            .map(|(i, u)| (u.id.clone(), i))
            .collect();
        let replica_node = resa
            .replica_proxies
            .iter()
            .map(|p| ((p.group.clone(), p.replica_index), node_of_unit[&p.on_unit]))
            .collect();
        let client_node = resa
            .frontends
            .iter()
            .map(|f| (f.id.to_string(), node_of_unit[&f.on_unit]))
            .collect();
        Directory {
            node_of_unit,
            unit_of: resa.placement(),
            replica_node,
            client_node,
        }
    }
}

struct HostedReplica {
    replica: Replica,
    proxy: ComponentId,
}

pub struct UnitNode {
    unit: UnitId,
    engine: UnitEngine,
    directory: Arc<Directory>,
    replicas: BTreeMap<ComponentId, HostedReplica>,
    clients: BTreeMap<ComponentId, (ComponentId, Client)>,
    inputs: Vec<ScheduledInput>,
    tickers: Vec<Ticker>,
    input_seq: u64,
    probe: Option<SharedProbe>,
    byzantine: Option<ByzantineMode>,
    stats: UnitStats,
    reliable: bool,
    out_links: BTreeMap<NodeId, OutLink>,
    in_links: BTreeMap<NodeId, InLink>,
}

impl std::fmt::Debug for UnitNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UnitNode")
            .field("unit", &self.unit)
            .field("engine", &self.engine)
            .finish()
    }
}

struct ProbeObserver<'a> {
    now: u64,
    probe: Option<&'a SharedProbe>,
}

impl Observer for ProbeObserver<'_> {
    fn delivered(&mut self, unit: &UnitId, delivery: &Delivery) {
        if let Some(p) = self.probe {
            p.lock()
                .expect("probe lock")
                .delivered(self.now, unit, delivery);
        }
    }

    fn emitted(&mut self, unit: &UnitId, from: &ComponentId, event: &Event) {
        if let Some(p) = self.probe {
            p.lock()
                .expect("probe lock")
                .emitted(self.now, unit, from, event);
        }
    }
}

impl UnitNode {
    pub fn new(
        resa: &Resa,
        unit: &UnitId,
        registry: &BehaviorRegistry,
        router: Arc<Router>,
        directory: Arc<Directory>,
        keys: Arc<KeyedHash>,
        timing: Timing,
    ) -> Result<Self, BuildError> {
        let spec = resa
            .units
            .iter()
            .find(|u| &u.id == unit)
            .ok_or_else(|| BuildError::UnknownUnit(unit.clone()))?;
        let components: Vec<_> = resa
            .components
            .iter()
            .filter(|c| spec.components.contains(&c.id))
            .cloned()
            .collect();
        let engine = UnitEngine::new(
            unit.clone(),
            &components,
            registry,
            router,
            &resa.replica_stamps(),
        )?;
        let mut replicas = BTreeMap::new();
        for p in resa.replica_proxies.iter().filter(|p| &p.on_unit == unit) {
            let g = resa
                .group(&p.group)
                .ok_or_else(|| BuildError::UnknownGroup(p.group.clone()))?;
            let cfg = timing.order_config(g);
            let signer = Arc::new(keys.signer(&cfg.replica_principal(p.replica_index)));
            let replica = Replica::new(cfg, p.replica_index, signer, keys.clone());
            replicas.insert(
                p.group.clone(),
                HostedReplica {
                    replica,
                    proxy: p.id.clone(),
                },
            );
        }
        let mut clients = BTreeMap::new();
        for f in resa.frontends.iter().filter(|f| &f.on_unit == unit) {
            let g = resa
                .group(&f.target_group)
                .ok_or_else(|| BuildError::UnknownGroup(f.target_group.clone()))?;
            let cfg = timing.order_config(g);
            let signer = Arc::new(keys.signer(&client_principal(f.id.as_str())));
            clients.insert(
                f.id.clone(),
                (
                    f.target_group.clone(),
                    Client::new(f.id.to_string(), cfg, signer, keys.clone()),
                ),
            );
        }
        Ok(UnitNode {
            unit: unit.clone(),
            engine,
            directory,
            replicas,
            clients,
            inputs: Vec::new(),
            tickers: Vec::new(),
            input_seq: 0,
            probe: None,
            byzantine: None,
            stats: UnitStats::default(),
            reliable: timing == Timing::Simulated,
            out_links: BTreeMap::new(),
            in_links: BTreeMap::new(),
        })
    }

    pub fn unit(&self) -> &UnitId {
        &self.unit
    }

    pub fn engine(&self) -> &UnitEngine {
        &self.engine
    }

    pub fn stats(&self) -> &UnitStats {
        &self.stats
    }

    pub fn replica(&self, group: &ComponentId) -> Option<&Replica> {
        self.replicas.get(group).map(|h| &h.replica)
    }

    pub fn replicas(&self) -> impl Iterator<Item = (&ComponentId, &Replica)> {
        self.replicas.iter().map(|(g, h)| (g, &h.replica))
    }

    pub fn client(&self, frontend: &ComponentId) -> Option<&Client> {
        self.clients.get(frontend).map(|(_, c)| c)
    }

    pub fn set_probe(&mut self, probe: SharedProbe) {
        self.probe = Some(probe);
    }

    pub fn add_input(&mut self, input: ScheduledInput) {
        let at = self.inputs.partition_point(|i| i.tick <= input.tick);
        self.inputs.insert(at, input);
    }

    pub fn add_ticker(&mut self, ticker: Ticker) {
        self.tickers.push(ticker);
    }

    /// Delivers an external event to a hosted component right away.
    pub fn inject_input(
        &mut self,
        now: u64,
        target: ComponentId,
        port: &str,
        payload: Vec<u8>,
        out: &mut Outbox<WireMsg>,
    ) {
        let event = Event::new(
            format!("input:{}", self.unit),
            port,
            self.input_seq,
            payload,
        );
        self.input_seq += 1;
        self.engine.enqueue(Delivery {
            target,
            port: port.to_string(),
            event,
        });
        self.run_engine(now, Vec::new(), out);
    }

    fn run_engine(&mut self, now: u64, mut pending: Vec<Outbound>, out: &mut Outbox<WireMsg>) {
        let mut obs = ProbeObserver {
            now,
            probe: self.probe.as_ref(),
        };
        if let Err(e) = self.engine.run_to_stable(&mut pending, &mut obs) {
            self.stats.diagnostics.push(e.to_string());
        }
        for d in self.engine.take_diagnostics() {
            self.stats.diagnostics.push(d);
        }
        for ob in pending {
            self.route_outbound(now, ob, out);
        }
    }

    fn route_outbound(&mut self, now: u64, ob: Outbound, out: &mut Outbox<WireMsg>) {
        let Outbound { target, mut event } = ob;
        if event.origin_replica.is_some() {
            match self.byzantine {
                Some(ByzantineMode::Mute) => return,
                Some(ByzantineMode::FlipPayloadByte) => flip_byte(&mut event.payload),
                _ => {}
            }
        }
        if let Some((group, client)) = self.clients.get_mut(&target.node) {
            let group = group.clone();
            let payload = bincode::serialize(&event).expect("event serializes");
            let (_, o) = client.invoke(now, payload);
            self.stats.requests += 1;
            self.send_order(&group, o, out);
            return;
        }
        let node = target
            .unit
            .as_ref()
            .and_then(|u| self.directory.node_of_unit.get(u));
        match node {
            Some(&n) if self.reliable => {
                self.stats.events_out += 1;
                let link = self.out_links.entry(n).or_default();
                let msg = WireMsg::Linked {
                    seq: link.next,
                    target: target.node,
                    port: target.port,
                    event,
                };
                link.unacked.insert(link.next, (now, msg.clone()));
                link.next += 1;
                out.send(n, msg);
            }
            Some(&n) => {
                self.stats.events_out += 1;
                out.send(
                    n,
                    WireMsg::Event {
                        target: target.node,
                        port: target.port,
                        event,
                    },
                );
            }
            None => {
                self.stats.undeliverable += 1;
                self.stats
                    .diagnostics
                    .push(format!("no unit hosts {}", target.node));
            }
        }
    }

    fn send_order(&mut self, group: &ComponentId, o: Output, out: &mut Outbox<WireMsg>) {
        for (dest, env) in o.sends {
            let node = match &dest {
                Dest::Replica(i) => self
                    .directory
                    .replica_node
                    .get(&(group.clone(), *i))
                    .copied(),
                Dest::Client(c) => self.directory.client_node.get(c).copied(),
            };
            match node {
                Some(n) => out.send(
                    n,
                    WireMsg::Order {
                        group: group.clone(),
                        dest,
                        env,
                    },
                ),
                None => self.stats.undeliverable += 1,
            }
        }
    }

    fn on_replica_output(
        &mut self,
        now: u64,
        group: &ComponentId,
        o: Output,
        out: &mut Outbox<WireMsg>,
    ) {
        let mut o = o;
        let executed = std::mem::take(&mut o.executed);
        self.send_order(group, o, out);
        if executed.is_empty() {
            return;
        }
        let (proxy, index) = {
            let h = &self.replicas[group];
            (h.proxy.clone(), h.replica.index())
        };
        let mut pending = Vec::new();
        for ex in executed {
            self.stats.executed += 1;
            if let Some(p) = &self.probe {
                p.lock()
                    .expect("probe lock")
                    .executed(now, &self.unit, group, index, ex.slot);
            }
            let Ok(event) = bincode::deserialize::<Event>(&ex.request.payload) else {
                self.stats
                    .diagnostics
                    .push(format!("undecodable request from {}", ex.request.client));
                continue;
            };
            let label = origin_label(&event.sender, &event.sender_port);
            self.engine
                .inject(&Endpoint::new(proxy.clone(), label), event, &mut pending);
        }
        self.run_engine(now, pending, out);
    }

    fn on_client_output(
        &mut self,
        now: u64,
        frontend: &ComponentId,
        group: &ComponentId,
        o: Output,
        out: &mut Outbox<WireMsg>,
    ) {
        for seq in &o.failed {
            self.stats.delivery_failures += 1;
            if let Some(p) = &self.probe {
                p.lock()
                    .expect("probe lock")
                    .failed(now, &self.unit, frontend, *seq);
            }
        }
        self.send_order(group, o, out);
    }
}

impl Node for UnitNode {
    type Msg = WireMsg;

    fn on_message(&mut self, now: u64, from: NodeId, msg: WireMsg, out: &mut Outbox<WireMsg>) {
        match msg {
            WireMsg::Event {
                target,
                port,
                event,
            } => {
                self.stats.events_in += 1;
                self.engine.enqueue(Delivery {
                    target,
                    port,
                    event,
                });
                self.run_engine(now, Vec::new(), out);
            }
            WireMsg::Linked {
                seq,
                target,
                port,
                event,
            } => {
                let link = self.in_links.entry(from).or_default();
                if seq >= link.next {
                    link.held.insert(
                        seq,
                        Delivery {
                            target,
                            port,
                            event,
                        },
                    );
                }
                let mut ready = Vec::new();
                while let Some(d) = link.held.remove(&link.next) {
                    ready.push(d);
                    link.next += 1;
                }
                out.send(from, WireMsg::LinkAck { upto: link.next });
                if !ready.is_empty() {
                    self.stats.events_in += ready.len() as u64;
                    for d in ready {
                        self.engine.enqueue(d);
                    }
                    self.run_engine(now, Vec::new(), out);
                }
            }
            WireMsg::LinkAck { upto } => {
                if let Some(link) = self.out_links.get_mut(&from) {
                    link.unacked = link.unacked.split_off(&upto);
                }
            }
            WireMsg::Order {
                group,
                dest: Dest::Replica(_),
                env,
            } => {
                let Some(h) = self.replicas.get_mut(&group) else {
                    self.stats.undeliverable += 1;
                    return;
                };
                let o = h.replica.handle(now, env);
                self.on_replica_output(now, &group, o, out);
            }
            WireMsg::Order {
                group,
                dest: Dest::Client(c),
                env,
            } => {
                let id = ComponentId::new(c);
                let Some((_, client)) = self.clients.get_mut(&id) else {
                    self.stats.undeliverable += 1;
                    return;
                };
                let o = client.handle(now, env);
                self.on_client_output(now, &id, &group, o, out);
            }
        }
    }

    fn on_tick(&mut self, now: u64, out: &mut Outbox<WireMsg>) {
        for (&to, link) in &mut self.out_links {
            for (sent, msg) in link.unacked.values_mut() {
                if now >= *sent + LINK_RESEND {
                    *sent = now;
                    out.send(to, msg.clone());
                }
            }
        }
        while self.inputs.first().is_some_and(|i| i.tick <= now) {
            let i = self.inputs.remove(0);
            self.inject_input(now, i.target, &i.port, i.payload, out);
        }
        for k in 0..self.tickers.len() {
            let t = self.tickers[k].clone();
            if t.every > 0 && now.is_multiple_of(t.every) {
                self.inject_input(now, t.target, &t.port, t.payload, out);
            }
        }
        let groups: Vec<ComponentId> = self.replicas.keys().cloned().collect();
        for g in groups {
            let o = self.replicas.get_mut(&g).expect("hosted").replica.tick(now);
            self.on_replica_output(now, &g, o, out);
        }
        let fronts: Vec<ComponentId> = self.clients.keys().cloned().collect();
        for f in fronts {
            let (g, c) = self.clients.get_mut(&f).expect("hosted");
            let g = g.clone();
            let o = c.tick(now);
            self.on_client_output(now, &f, &g, o, out);
        }
    }

    fn set_byzantine(&mut self, mode: Option<ByzantineMode>) {
        self.byzantine = mode;
        for h in self.replicas.values_mut() {
            h.replica.set_byzantine(mode);
        }
    }
}

/// Builds one node per unit of `resa`, in unit order.
pub fn build_nodes(
    resa: &Resa,
    registry: &BehaviorRegistry,
    keys: Arc<KeyedHash>,
    timing: Timing,
) -> Result<Vec<(String, UnitNode)>, BuildError> {
    let placement = resa.placement();
    let router = Arc::new(Router::new(&resa.connections, &placement));
    let directory = Arc::new(Directory::new(resa));
    resa.units
        .iter()
        .map(|u| {
            let node = UnitNode::new(
                resa,
                &u.id,
                registry,
                router.clone(),
                directory.clone(),
                keys.clone(),
                timing,
            )?;
            Ok((u.id.to_string(), node))
        })
        .collect()
}

/// A ReSA without replication: the LSA itself.
pub fn plain_resa(lsa: &repli_core::architecture::Lsa) -> Resa {
    Resa {
        components: lsa.components.clone(),
        connections: lsa.connections.clone(),
        units: lsa.units.clone(),
        ..Resa::default()
    }
}

/// Id of the replica proxy in front of replica `index` of `group`.
pub fn proxy_for(resa: &Resa, group: &ComponentId, index: u32) -> Option<ComponentId> {
    resa.proxy_of(group, index)
        .map(|p| p.id.clone())
        .or_else(|| {
            resa.group(group)
                .and_then(|g| g.replica_ids.get(index as usize))
                .map(proxy_id)
        })
}
