//! Ordering microbenchmark: synchronous closed-loop clients against one
//! four-replica BFT group, without components on top.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use repli_core::architecture::FaultModel;
use repli_core::auth::KeyedHash;
use repli_harness::runner::Cluster;
use repli_harness::{FaultScript, Node, NodeId, Outbox, Sim, SimConfig};
use repli_order::{
    client_principal, ByzantineMode, Client, Dest, Envelope, OrderConfig, Output, Replica,
};
use serde::{Deserialize, Serialize};

use crate::metrics::Clock;
use crate::overhead::Backend;
use crate::BenchError;

const GROUP: &str = "bench";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderMsg {
    pub dest: Dest,
    pub env: Envelope,
}

pub struct BenchClient {
    client: Client,
    payload: Vec<u8>,
    remaining: u64,
    started: Option<f64>,
    pub latencies: Vec<f64>,
    clock: Clock,
    progress: Arc<AtomicU64>,
}

pub enum OrderNode {
    Replica {
        replica: Box<Replica>,
        executed_at: Vec<f64>,
        clock: Clock,
    },
    Client(Box<BenchClient>),
}

fn node_of(n: usize, dest: &Dest) -> Option<NodeId> {
    match dest {
        Dest::Replica(i) => Some(*i as usize),
        Dest::Client(c) => c.strip_prefix('c')?.parse::<usize>().ok().map(|j| n + j),
    }
}

fn forward(n: usize, o: Output, out: &mut Outbox<OrderMsg>) {
    for (dest, env) in o.sends {
        if let Some(to) = node_of(n, &dest) {
            out.send(to, OrderMsg { dest, env });
        }
    }
}

impl BenchClient {
    fn next(&mut self, now: u64, n: usize, out: &mut Outbox<OrderMsg>) {
        if self.started.is_none() && self.remaining > 0 {
            self.started = Some(self.clock.ms(now));
            let (_, o) = self.client.invoke(now, self.payload.clone());
            forward(n, o, out);
        }
    }

    fn absorb(&mut self, now: u64, n: usize, o: Output, out: &mut Outbox<OrderMsg>) {
        let done = !o.acked.is_empty() || !o.failed.is_empty();
        forward(n, o, out);
        if done {
            if let Some(t) = self.started.take() {
                self.latencies.push(self.clock.ms(now) - t);
            }
            self.remaining = self.remaining.saturating_sub(1);
            self.progress.fetch_add(1, Ordering::Relaxed);
            self.next(now, n, out);
        }
    }
}

impl OrderNode {
    fn group_size(&self) -> usize {
        let cfg = match self {
            OrderNode::Replica { replica, .. } => replica.config(),
            OrderNode::Client(c) => c.client.config(),
        };
        cfg.n as usize
    }
}

impl Node for OrderNode {
    type Msg = OrderMsg;

    fn on_message(&mut self, now: u64, _from: NodeId, msg: OrderMsg, out: &mut Outbox<OrderMsg>) {
        let n = self.group_size();
        match self {
            OrderNode::Replica {
                replica,
                executed_at,
                clock,
            } => {
                let o = replica.handle(now, msg.env);
                let at = clock.ms(now);
                executed_at.extend(o.executed.iter().map(|_| at));
                forward(n, o, out);
            }
            OrderNode::Client(c) => {
                let o = c.client.handle(now, msg.env);
                c.absorb(now, n, o, out);
            }
        }
    }

    fn on_tick(&mut self, now: u64, out: &mut Outbox<OrderMsg>) {
        let n = self.group_size();
        match self {
            OrderNode::Replica {
                replica,
                executed_at,
                clock,
            } => {
                let o = replica.tick(now);
                let at = clock.ms(now);
                executed_at.extend(o.executed.iter().map(|_| at));
                forward(n, o, out);
            }
            OrderNode::Client(c) => {
                c.next(now, n, out);
                let o = c.client.tick(now);
                c.absorb(now, n, o, out);
            }
        }
    }

    fn set_byzantine(&mut self, mode: Option<ByzantineMode>) {
        if let OrderNode::Replica { replica, .. } = self {
            replica.set_byzantine(mode);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderingPoint {
    pub clients: u32,
    pub payload_bytes: usize,
    /// Requests executed per second at the leader.
    pub throughput: f64,
    /// Mean latency (ms) observed by the first client.
    pub latency_ms: f64,
}

fn middle(v: &[f64]) -> &[f64] {
    let (lo, hi) = (v.len() / 4, 3 * v.len() / 4);
    &v[lo..hi.max(lo)]
}

pub fn run_ordering_point(
    clients: u32,
    payload_bytes: usize,
    requests_per_client: u64,
    backend: Backend,
) -> Result<OrderingPoint, BenchError> {
    if clients == 0 || requests_per_client < 4 {
        return Err(BenchError::BadParams(
            "need at least one client and four requests per client".into(),
        ));
    }
    let (seed, timing_cfg, clock) = match backend {
        Backend::Sim { seed } => (
            seed,
            OrderConfig::simulated(GROUP, 4, 1, FaultModel::Bft),
            Clock::Ticks,
        ),
        Backend::Sockets => (
            1,
            OrderConfig::realtime(GROUP, 4, 1, FaultModel::Bft),
            Clock::Wall(Instant::now()),
        ),
    };
    let keys = Arc::new(KeyedHash::from_seed(seed));
    let progress = Arc::new(AtomicU64::new(0));
    let mut nodes: Vec<(String, OrderNode)> = (0..4)
        .map(|i| {
            let signer = Arc::new(keys.signer(&timing_cfg.replica_principal(i)));
            let replica = Replica::new(timing_cfg.clone(), i, signer, keys.clone());
            (
                format!("replica{i}"),
                OrderNode::Replica {
                    replica: Box::new(replica),
                    executed_at: Vec::new(),
                    clock,
                },
            )
        })
        .collect();
    for j in 0..clients {
        let id = format!("c{j}");
        let signer = Arc::new(keys.signer(&client_principal(&id)));
        let client = Client::new(id.clone(), timing_cfg.clone(), signer, keys.clone());
        let bc = BenchClient {
            client,
            payload: vec![7; payload_bytes],
            remaining: requests_per_client,
            started: None,
            latencies: Vec::new(),
            clock,
            progress: progress.clone(),
        };
        nodes.push((id, OrderNode::Client(Box::new(bc))));
    }
    let total = clients as u64 * requests_per_client;
    let finished = |nodes: &[OrderNode]| {
        nodes.iter().all(|n| match n {
            OrderNode::Client(c) => c.remaining == 0,
            OrderNode::Replica { .. } => true,
        })
    };
    let nodes: Vec<OrderNode> = match backend {
        Backend::Sim { seed } => {
            let mut sim = Sim::new(nodes, SimConfig::synchronous(seed), &FaultScript::none())?
                .without_trace();
            let done = sim.run_while(1000 + 100 * total, |s| finished(s.nodes()));
            if !done {
                return Err(BenchError::Incomplete {
                    done: progress.load(Ordering::Relaxed),
                    total,
                });
            }
            sim.into_nodes()
        }
        Backend::Sockets => {
            let cluster = Cluster::start(nodes.into_iter().map(|(_, n)| n).collect())?;
            let deadline = Instant::now() + Duration::from_secs(30 + total / 50);
            while progress.load(Ordering::Relaxed) < total && Instant::now() < deadline {
                std::thread::sleep(Duration::from_millis(5));
            }
            let nodes: Vec<OrderNode> = cluster.stop().into_iter().flatten().collect();
            if !finished(&nodes) {
                return Err(BenchError::Incomplete {
                    done: progress.load(Ordering::Relaxed),
                    total,
                });
            }
            nodes
        }
    };
    let OrderNode::Replica { executed_at, .. } = &nodes[0] else {
        unreachable!("node 0 is a replica")
    };
    let mid = middle(executed_at);
    let throughput = match mid {
        [a, .., b] if b > a => (mid.len() - 1) as f64 / ((b - a) / 1000.0),
        _ => return Err(BenchError::EmptySeries),
    };
    let OrderNode::Client(c0) = &nodes[4] else {
        unreachable!("node 4 is a client")
    };
    let lat = middle(&c0.latencies);
    let latency_ms = lat.iter().sum::<f64>() / lat.len().max(1) as f64;
    Ok(OrderingPoint {
        clients,
        payload_bytes,
        throughput,
        latency_ms,
    })
}
