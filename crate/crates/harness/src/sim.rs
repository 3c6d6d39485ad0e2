//! Seeded discrete-event simulator with partial synchrony.
//!
//! Time advances in integer ticks. Within a tick the simulator first applies
//! scheduled faults, then delivers every message due at that tick (in send
//! order), then ticks every live node. Links are FIFO per ordered pair.
//! Before GST messages may be dropped or delayed by up to
//! `preGst.maxDelay` ticks, but never past `gstTick + deltaBound`; after GST
//! every message arrives within `deltaBound` ticks.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use repli_order::ByzantineMode;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, FaultAction, FaultScript, SimConfig};

pub type NodeId = usize;

/// Messages produced by a node during one callback.
#[derive(Debug)]
pub struct Outbox<M> {
    pub msgs: Vec<(NodeId, M)>,
}

impl<M> Default for Outbox<M> {
    fn default() -> Self {
        Outbox { msgs: Vec::new() }
    }
}

impl<M> Outbox<M> {
    pub fn send(&mut self, to: NodeId, msg: M) {
        self.msgs.push((to, msg));
    }
}

/// A deterministic reactor driven by the simulator or a real-time runner.
pub trait Node {
    type Msg: Clone + Serialize;

    fn on_message(&mut self, now: u64, from: NodeId, msg: Self::Msg, out: &mut Outbox<Self::Msg>);

    fn on_tick(&mut self, now: u64, out: &mut Outbox<Self::Msg>);

    /// Switches corruption of the node's outgoing messages on or off.
    fn set_byzantine(&mut self, _mode: Option<ByzantineMode>) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TraceKind {
    Send,
    Deliver,
    Drop,
    Crash,
    Byzantine,
    Honest,
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceKind::Send => "send",
            TraceKind::Deliver => "deliver",
            TraceKind::Drop => "drop",
            TraceKind::Crash => "crash",
            TraceKind::Byzantine => "byzantine",
            TraceKind::Honest => "honest",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub tick: u64,
    pub kind: TraceKind,
    pub src: NodeId,
    pub dst: NodeId,
    /// Message id, unique per run (0 for non-message records).
    pub msg: u64,
    pub digest: String,
}

pub fn message_digest<M: Serialize>(msg: &M) -> String {
    let bytes = bincode::serialize(msg).expect("message serializes");
    hex::encode(&Sha256::digest(bytes)[..8])
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SimStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

struct InFlight<M> {
    from: NodeId,
    to: NodeId,
    id: u64,
    msg: M,
}

pub struct Sim<N: Node> {
    cfg: SimConfig,
    names: Vec<String>,
    nodes: Vec<N>,
    actions: Vec<(u64, NodeId, Option<Option<ByzantineMode>>)>,
    now: u64,
    queue: BTreeMap<(u64, u64), InFlight<N::Msg>>,
    link_last: HashMap<(NodeId, NodeId), u64>,
    next_id: u64,
    rng: ChaCha20Rng,
    crashed: Vec<bool>,
    record_trace: bool,
    trace: Vec<TraceRecord>,
    stats: SimStats,
}

impl<N: Node> Sim<N> {
    pub fn new(
        nodes: Vec<(String, N)>,
        cfg: SimConfig,
        script: &FaultScript,
    ) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let names: Vec<String> = nodes.iter().map(|(n, _)| n.clone()).collect();
        script.validate(&names)?;
        let index = |name: &str| names.iter().position(|n| n == name).expect("validated");
        // (tick, node, None = crash | Some(mode) = set byzantine mode)
        let mut actions = Vec::new();
        for a in &script.actions {
            match a {
                FaultAction::Crash { node, tick } => actions.push((*tick, index(node), None)),
                FaultAction::Byzantine {
                    node,
                    mode,
                    from,
                    to,
                } => {
                    actions.push((*from, index(node), Some(Some(*mode))));
                    actions.push((*to, index(node), Some(None)));
                }
            }
        }
        actions.sort_by_key(|(t, n, a)| (*t, *n, a.is_none()));
        let n = nodes.len();
        Ok(Sim {
            rng: ChaCha20Rng::seed_from_u64(cfg.seed),
            cfg,
            names,
            nodes: nodes.into_iter().map(|(_, n)| n).collect(),
            actions,
            now: 0,
            queue: BTreeMap::new(),
            link_last: HashMap::new(),
            next_id: 1,
            crashed: vec![false; n],
            record_trace: true,
            trace: Vec::new(),
            stats: SimStats::default(),
        })
    }

    /// Disables trace recording (for long benchmark runs).
    pub fn without_trace(mut self) -> Self {
        self.record_trace = false;
        self
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn node_index(&self, name: &str) -> Option<NodeId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn nodes(&self) -> &[N] {
        &self.nodes
    }

    pub fn node(&self, i: NodeId) -> &N {
        &self.nodes[i]
    }

    pub fn node_mut(&mut self, i: NodeId) -> &mut N {
        &mut self.nodes[i]
    }

    pub fn into_nodes(self) -> Vec<N> {
        self.nodes
    }

    pub fn is_crashed(&self, i: NodeId) -> bool {
        self.crashed[i]
    }

    pub fn stats(&self) -> &SimStats {
        &self.stats
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    /// One line per record: `tick kind src dst digest`.
    pub fn trace_dump(&self) -> String {
        let mut s = String::new();
        for r in &self.trace {
            s.push_str(&format!(
                "{} {} {} {} {}\n",
                r.tick, r.kind, self.names[r.src], self.names[r.dst], r.digest
            ));
        }
        s
    }

    fn record(&mut self, kind: TraceKind, src: NodeId, dst: NodeId, msg: u64, digest: String) {
        if self.record_trace {
            self.trace.push(TraceRecord {
                tick: self.now,
                kind,
                src,
                dst,
                msg,
                digest,
            });
        }
    }

    fn transmit(&mut self, from: NodeId, to: NodeId, msg: N::Msg) {
        let id = self.next_id;
        self.next_id += 1;
        self.stats.sent += 1;
        let digest = if self.record_trace {
            message_digest(&msg)
        } else {
            String::new()
        };
        self.record(TraceKind::Send, from, to, id, digest.clone());
        if to >= self.nodes.len()
            || self
                .cfg
                .partitioned(self.now, &self.names[from], &self.names[to])
        {
            self.stats.dropped += 1;
            self.record(TraceKind::Drop, from, to, id, digest);
            return;
        }
        let pre_gst = self.now < self.cfg.gst_tick;
        if pre_gst
            && self.cfg.pre_gst.drop_probability > 0.0
            && self.rng.gen_bool(self.cfg.pre_gst.drop_probability)
        {
            self.stats.dropped += 1;
            self.record(TraceKind::Drop, from, to, id, digest);
            return;
        }
        let at = if pre_gst {
            let d = self.rng.gen_range(1..=self.cfg.pre_gst.max_delay);
            (self.now + d)
                .min(self.cfg.gst_tick + self.cfg.delta_bound)
                .max(self.now + 1)
        } else {
            self.now + self.rng.gen_range(1..=self.cfg.delta_bound)
        };
        let last = self.link_last.entry((from, to)).or_insert(0);
        let at = at.max(*last);
        *last = at;
        self.queue.insert((at, id), InFlight { from, to, id, msg });
    }

    fn flush(&mut self, from: NodeId, out: Outbox<N::Msg>) {
        for (to, msg) in out.msgs {
            self.transmit(from, to, msg);
        }
    }

    /// Lets the harness act on behalf of node `i` (e.g. external inputs).
    pub fn with_node<R>(
        &mut self,
        i: NodeId,
        f: impl FnOnce(&mut N, u64, &mut Outbox<N::Msg>) -> R,
    ) -> R {
        let mut out = Outbox::default();
        let now = self.now;
        let r = f(&mut self.nodes[i], now, &mut out);
        if !self.crashed[i] {
            self.flush(i, out);
        }
        r
    }

    /// Advances one tick.
    pub fn step(&mut self) {
        self.now += 1;
        let now = self.now;
        while let Some(&(t, node, action)) = self.actions.first() {
            if t > now {
                break;
            }
            self.actions.remove(0);
            match action {
                None => {
                    self.crashed[node] = true;
                    self.record(TraceKind::Crash, node, node, 0, String::new());
                }
                Some(mode) => {
                    self.nodes[node].set_byzantine(mode);
                    let kind = if mode.is_some() {
                        TraceKind::Byzantine
                    } else {
                        TraceKind::Honest
                    };
                    self.record(
                        kind,
                        node,
                        node,
                        0,
                        mode.map(|m| m.to_string()).unwrap_or_default(),
                    );
                }
            }
        }
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > now {
                break;
            }
            let m = entry.remove();
            if self.crashed[m.to] {
                self.stats.dropped += 1;
                self.record(TraceKind::Drop, m.from, m.to, m.id, String::new());
                continue;
            }
            self.stats.delivered += 1;
            if self.record_trace {
                let d = message_digest(&m.msg);
                self.record(TraceKind::Deliver, m.from, m.to, m.id, d);
            }
            let mut out = Outbox::default();
            self.nodes[m.to].on_message(now, m.from, m.msg, &mut out);
            self.flush(m.to, out);
        }
        for i in 0..self.nodes.len() {
            if self.crashed[i] {
                continue;
            }
            let mut out = Outbox::default();
            self.nodes[i].on_tick(now, &mut out);
            self.flush(i, out);
        }
    }

    pub fn run_until(&mut self, tick: u64) {
        while self.now < tick {
            self.step();
        }
    }

    /// Steps until `done` holds or `limit` is reached; returns whether it held.
    pub fn run_while(&mut self, limit: u64, mut done: impl FnMut(&Self) -> bool) -> bool {
        while self.now < limit {
            if done(self) {
                return true;
            }
            self.step();
        }
        done(self)
    }

    /// True if no message is in flight.
    pub fn idle(&self) -> bool {
        self.queue.is_empty()
    }
}

/// Post-GST delivery audit: every message sent at or after `gst` to a node
/// that is alive and reachable must be delivered within `delta` ticks.
/// Returns the violating message ids.
pub fn audit_delivery_bound(trace: &[TraceRecord], gst: u64, delta: u64, horizon: u64) -> Vec<u64> {
    let mut sent: BTreeMap<u64, (u64, NodeId)> = BTreeMap::new();
    let mut crash_at: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut delivered: BTreeMap<u64, u64> = BTreeMap::new();
    let mut dropped_at_send: std::collections::BTreeSet<u64> = Default::default();
    for r in trace {
        match r.kind {
            TraceKind::Send if r.tick >= gst => {
                sent.insert(r.msg, (r.tick, r.dst));
            }
            TraceKind::Deliver => {
                delivered.insert(r.msg, r.tick);
            }
            TraceKind::Drop
                if sent.get(&r.msg).is_some_and(|(t, _)| *t == r.tick)
                    && !delivered.contains_key(&r.msg) =>
            {
                dropped_at_send.insert(r.msg);
            }
            TraceKind::Crash => {
                crash_at.entry(r.src).or_insert(r.tick);
            }
            _ => {}
        }
    }
    sent.into_iter()
        .filter(|(id, (t, dst))| {
            let deadline = t + delta;
            if deadline > horizon
                || dropped_at_send.contains(id)
                || crash_at.get(dst).is_some_and(|c| *c <= deadline)
            {
                return false;
            }
            delivered.get(id).is_none_or(|d| *d > deadline)
        })
        .map(|(id, _)| id)
        .collect()
}
