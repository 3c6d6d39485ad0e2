//! Runs [`Node`]s in real time, one thread each, connected by the socket
//! [`Transport`]. `now` is milliseconds since the cluster started.

use std::collections::VecDeque;
use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;

use crate::sim::{Node, NodeId, Outbox};
use crate::transport::{Transport, TransportError};

/// Upper bound on ticks replayed after a stall.
const MAX_CATCH_UP: u64 = 1000;

#[derive(Debug, Default)]
pub struct RunnerStats {
    pub handled: AtomicU64,
    pub undecodable: AtomicU64,
    pub send_errors: AtomicU64,
}

struct Running<N> {
    stop: Arc<AtomicBool>,
    stats: Arc<RunnerStats>,
    handle: JoinHandle<N>,
}

/// A set of nodes on loopback sockets that can be killed and restarted.
pub struct Cluster<N: Node> {
    addrs: Vec<SocketAddr>,
    epoch: Instant,
    running: Vec<Option<Running<N>>>,
}

impl<N> Cluster<N>
where
    N: Node + Send + 'static,
    N::Msg: DeserializeOwned + Send,
{
    /// Binds one loopback port per node and starts every node.
    pub fn start(nodes: Vec<N>) -> Result<Self, TransportError> {
        let mut listeners = Vec::with_capacity(nodes.len());
        for _ in &nodes {
            let any: SocketAddr = "127.0.0.1:0".parse().expect("loopback address");
            let l = TcpListener::bind(any)
                .map_err(|source| TransportError::Bind { addr: any, source })?;
            listeners.push(l);
        }
        let addrs: Vec<SocketAddr> = listeners
            .iter()
            .map(|l| l.local_addr().expect("bound listener"))
            .collect();
        let mut cluster = Cluster {
            addrs,
            epoch: Instant::now(),
            running: Vec::new(),
        };
        for (id, (node, listener)) in nodes.into_iter().zip(listeners).enumerate() {
            let t = Transport::with_listener(id, listener, &cluster.addrs)?;
            cluster.running.push(Some(cluster.spawn(node, t)));
        }
        Ok(cluster)
    }

    fn spawn(&self, node: N, transport: Transport) -> Running<N> {
        let stop = Arc::new(AtomicBool::new(false));
        let stats = Arc::new(RunnerStats::default());
        let epoch = self.epoch;
        let handle = {
            let stop = stop.clone();
            let stats = stats.clone();
            thread::spawn(move || drive(node, transport, epoch, &stop, &stats))
        };
        Running {
            stop,
            stats,
            handle,
        }
    }

    pub fn addrs(&self) -> &[SocketAddr] {
        &self.addrs
    }

    /// Milliseconds since start.
    pub fn now(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    pub fn is_running(&self, id: NodeId) -> bool {
        self.running.get(id).is_some_and(Option::is_some)
    }

    pub fn stats(&self, id: NodeId) -> Option<&RunnerStats> {
        self.running.get(id)?.as_ref().map(|r| r.stats.as_ref())
    }

    /// Stops node `id`, closes its sockets and returns its final state.
    pub fn kill(&mut self, id: NodeId) -> Option<N> {
        let r = self.running.get_mut(id)?.take()?;
        r.stop.store(true, Ordering::SeqCst);
        r.handle.join().ok()
    }

    /// Starts `node` as `id` again on the same address.
    pub fn restart(&mut self, id: NodeId, node: N) -> Result<(), TransportError> {
        if let Some(old) = self.kill(id) {
            drop(old);
        }
        let mut attempt = 0;
        let t = loop {
            match Transport::bind(id, &self.addrs) {
                Ok(t) => break t,
                Err(e) if attempt >= 50 => return Err(e),
                Err(_) => {
                    attempt += 1;
                    thread::sleep(Duration::from_millis(20));
                }
            }
        };
        self.running[id] = Some(self.spawn(node, t));
        Ok(())
    }

    /// Stops every node; killed nodes are `None`.
    pub fn stop(mut self) -> Vec<Option<N>> {
        for r in self.running.iter().flatten() {
            r.stop.store(true, Ordering::SeqCst);
        }
        (0..self.running.len()).map(|i| self.kill(i)).collect()
    }
}

fn drive<N>(
    mut node: N,
    transport: Transport,
    epoch: Instant,
    stop: &AtomicBool,
    stats: &RunnerStats,
) -> N
where
    N: Node,
    N::Msg: DeserializeOwned,
{
    let me = transport.id();
    let mut local: VecDeque<N::Msg> = VecDeque::new();
    let mut out = Outbox::default();
    let mut last_tick = epoch.elapsed().as_millis() as u64;
    while !stop.load(Ordering::SeqCst) {
        let now = epoch.elapsed().as_millis() as u64;
        if now > last_tick {
            for t in (last_tick + 1).max(now.saturating_sub(MAX_CATCH_UP))..=now {
                node.on_tick(t, &mut out);
            }
            last_tick = now;
        }
        dispatch(me, &transport, &mut out, &mut local, stats);
        while let Some(msg) = local.pop_front() {
            node.on_message(now, me, msg, &mut out);
            stats.handled.fetch_add(1, Ordering::Relaxed);
            dispatch(me, &transport, &mut out, &mut local, stats);
        }
        let received = transport.recv_timeout(Duration::from_micros(500));
        let Some((from, bytes)) = received else {
            continue;
        };
        let mut batch = vec![(from, bytes)];
        while batch.len() < 256 {
            let Some(m) = transport.try_recv() else { break };
            batch.push(m);
        }
        let now = epoch.elapsed().as_millis() as u64;
        for (from, bytes) in batch {
            match bincode::deserialize::<N::Msg>(&bytes) {
                Ok(msg) => {
                    node.on_message(now, from, msg, &mut out);
                    stats.handled.fetch_add(1, Ordering::Relaxed);
                }
                Err(_) => {
                    stats.undecodable.fetch_add(1, Ordering::Relaxed);
                }
            }
            dispatch(me, &transport, &mut out, &mut local, stats);
        }
    }
    transport.close();
    node
}

fn dispatch<M: serde::Serialize>(
    me: NodeId,
    transport: &Transport,
    out: &mut Outbox<M>,
    local: &mut VecDeque<M>,
    stats: &RunnerStats,
) {
    for (to, msg) in out.msgs.drain(..) {
        if to == me {
            local.push_back(msg);
            continue;
        }
        let bytes = bincode::serialize(&msg).expect("message serializes");
        if transport.send(to, bytes).is_err() {
            stats.send_errors.fetch_add(1, Ordering::Relaxed);
        }
    }
}
