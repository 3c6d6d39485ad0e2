//! Reliable point-to-point messaging over TCP.
//!
//! Every frame is `[u32 BE length][kind u8][body]` where the length counts
//! kind and body:
//!
//! * `HELLO` (`0`): sender id `u32` and incarnation `u64`, first frame on a connection
//! * `DATA` (`1`): sequence number `u64` followed by the payload
//! * `ACK` (`2`): highest sequence number delivered so far, `u64`
//!
//! Outgoing data stays buffered until acknowledged and is resent after a
//! reconnect, so a peer that restarts on the same address receives everything
//! it had not acknowledged. Receivers drop frames they already delivered.
//! Each peer link has a writer thread fed by a bounded queue; each accepted
//! connection has a reader thread that hands payloads to a bounded inbound
//! queue.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::sim::NodeId;

pub const MAX_FRAME: usize = 1 << 20;
pub const QUEUE_CAPACITY: usize = 1024;

const KIND_HELLO: u8 = 0;
const KIND_DATA: u8 = 1;
const KIND_ACK: u8 = 2;
const POLL: Duration = Duration::from_millis(20);
const MIN_BACKOFF: Duration = Duration::from_millis(10);
const MAX_BACKOFF: Duration = Duration::from_millis(500);

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame of {0} bytes exceeds the {MAX_FRAME} byte limit")]
    TooLarge(usize),
    #[error("unknown frame kind {0}")]
    BadKind(u8),
    #[error("frame body too short for its kind")]
    Truncated,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: io::Error },
    #[error("no peer {0}")]
    UnknownPeer(NodeId),
    #[error("payload of {0} bytes does not fit in a frame")]
    TooLarge(usize),
    #[error("transport is shut down")]
    Closed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Frame {
    Hello { sender: u32, incarnation: u64 },
    Data { seq: u64, payload: Vec<u8> },
    Ack { seq: u64 },
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::new();
        match self {
            Frame::Hello {
                sender,
                incarnation,
            } => {
                body.push(KIND_HELLO);
                body.extend_from_slice(&sender.to_be_bytes());
                body.extend_from_slice(&incarnation.to_be_bytes());
            }
            Frame::Data { seq, payload } => {
                body.push(KIND_DATA);
                body.extend_from_slice(&seq.to_be_bytes());
                body.extend_from_slice(payload);
            }
            Frame::Ack { seq } => {
                body.push(KIND_ACK);
                body.extend_from_slice(&seq.to_be_bytes());
            }
        }
        let mut out = (body.len() as u32).to_be_bytes().to_vec();
        out.extend(body);
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&self.encode())
    }

    /// Reads one frame. A declared length above [`MAX_FRAME`] is rejected
    /// before any of the body is read.
    pub fn read_from(r: &mut impl Read) -> Result<Frame, FrameError> {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let len = u32::from_be_bytes(len) as usize;
        if len > MAX_FRAME {
            return Err(FrameError::TooLarge(len));
        }
        if len == 0 {
            return Err(FrameError::Truncated);
        }
        let mut body = vec![0u8; len];
        r.read_exact(&mut body)?;
        let u64_at = |at: usize| -> Result<u64, FrameError> {
            body.get(at..at + 8)
                .map(|b| u64::from_be_bytes(b.try_into().expect("8 bytes")))
                .ok_or(FrameError::Truncated)
        };
        match body[0] {
            KIND_HELLO => {
                let sender = body.get(1..5).ok_or(FrameError::Truncated)?;
                Ok(Frame::Hello {
                    sender: u32::from_be_bytes(sender.try_into().expect("4 bytes")),
                    incarnation: u64_at(5)?,
                })
            }
            KIND_DATA => Ok(Frame::Data {
                seq: u64_at(1)?,
                payload: body[9..].to_vec(),
            }),
            KIND_ACK => Ok(Frame::Ack { seq: u64_at(1)? }),
            k => Err(FrameError::BadKind(k)),
        }
    }
}

/// Largest payload that fits in a DATA frame.
pub const MAX_PAYLOAD: usize = MAX_FRAME - 9;

#[derive(Debug, Default)]
pub struct TransportStats {
    pub sent: AtomicU64,
    pub delivered: AtomicU64,
    pub duplicates: AtomicU64,
    pub resent: AtomicU64,
    pub connects: AtomicU64,
    pub rejected_frames: AtomicU64,
}

#[derive(Debug, Default)]
struct Outgoing {
    next_seq: u64,
    unacked: VecDeque<(u64, Vec<u8>)>,
}

#[derive(Debug, Default)]
struct Shared {
    stop: AtomicBool,
    stats: TransportStats,
    /// Open sockets, shut down on close so blocked readers wake up.
    sockets: Mutex<Vec<TcpStream>>,
    /// (sender, incarnation) → highest delivered sequence number.
    delivered: Mutex<BTreeMap<u32, (u64, u64)>>,
}

impl Shared {
    fn track(&self, s: &TcpStream) {
        if let Ok(c) = s.try_clone() {
            self.sockets.lock().expect("socket list").push(c);
        }
    }
}

/// One node's endpoint: a listener plus a writer per peer.
pub struct Transport {
    id: NodeId,
    local: SocketAddr,
    shared: Arc<Shared>,
    inbound: Option<Receiver<(NodeId, Vec<u8>)>>,
    peers: Vec<Option<SyncSender<Vec<u8>>>>,
    threads: Vec<JoinHandle<()>>,
}

impl std::fmt::Debug for Transport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transport")
            .field("id", &self.id)
            .field("local", &self.local)
            .finish()
    }
}

impl Transport {
    /// Binds `addrs[id]` and connects lazily to every other address.
    pub fn bind(id: NodeId, addrs: &[SocketAddr]) -> Result<Self, TransportError> {
        let addr = addrs[id];
        let listener =
            TcpListener::bind(addr).map_err(|source| TransportError::Bind { addr, source })?;
        Self::with_listener(id, listener, addrs)
    }

    pub fn with_listener(
        id: NodeId,
        listener: TcpListener,
        addrs: &[SocketAddr],
    ) -> Result<Self, TransportError> {
        let local = listener
            .local_addr()
            .map_err(|source| TransportError::Bind {
                addr: addrs[id],
                source,
            })?;
        listener
            .set_nonblocking(true)
            .map_err(|source| TransportError::Bind {
                addr: local,
                source,
            })?;
        let shared = Arc::new(Shared::default());
        let (in_tx, inbound) = mpsc::sync_channel(QUEUE_CAPACITY);
        let mut threads = Vec::new();
        {
            let shared = shared.clone();
            threads.push(thread::spawn(move || accept_loop(listener, in_tx, shared)));
        }
        let incarnation = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        let mut peers = Vec::with_capacity(addrs.len());
        for (peer, &peer_addr) in addrs.iter().enumerate() {
            if peer == id {
                peers.push(None);
                continue;
            }
            let (tx, rx) = mpsc::sync_channel(QUEUE_CAPACITY);
            let shared = shared.clone();
            let me = id as u32;
            threads.push(thread::spawn(move || {
                writer_loop(me, incarnation, peer_addr, rx, shared)
            }));
            peers.push(Some(tx));
        }
        Ok(Transport {
            id,
            local,
            shared,
            inbound: Some(inbound),
            peers,
            threads,
        })
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }

    pub fn stats(&self) -> &TransportStats {
        &self.shared.stats
    }

    /// Queues `payload` for `to`; blocks while that peer's queue is full.
    pub fn send(&self, to: NodeId, payload: Vec<u8>) -> Result<(), TransportError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(TransportError::TooLarge(payload.len()));
        }
        let tx = self
            .peers
            .get(to)
            .and_then(Option::as_ref)
            .ok_or(TransportError::UnknownPeer(to))?;
        tx.send(payload).map_err(|_| TransportError::Closed)
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<(NodeId, Vec<u8>)> {
        self.inbound.as_ref()?.recv_timeout(timeout).ok()
    }

    pub fn try_recv(&self) -> Option<(NodeId, Vec<u8>)> {
        self.inbound.as_ref()?.try_recv().ok()
    }

    /// Stops all threads and closes every socket.
    pub fn close(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        self.inbound = None;
        self.peers.clear();
        for s in self.shared.sockets.lock().expect("socket list").drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Transport {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, inbound: SyncSender<(NodeId, Vec<u8>)>, shared: Arc<Shared>) {
    let mut readers = Vec::new();
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                shared.track(&stream);
                let inbound = inbound.clone();
                let shared = shared.clone();
                readers.push(thread::spawn(move || {
                    let closer = stream.try_clone();
                    let _ = read_connection(stream, inbound, &shared);
                    if let Ok(s) = closer {
                        let _ = s.shutdown(Shutdown::Both);
                    }
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(2))
            }
            Err(_) => thread::sleep(POLL),
        }
        readers.retain(|h: &JoinHandle<()>| !h.is_finished());
    }
    for s in shared.sockets.lock().expect("socket list").iter() {
        let _ = s.shutdown(Shutdown::Both);
    }
    for r in readers {
        let _ = r.join();
    }
}

fn read_connection(
    stream: TcpStream,
    inbound: SyncSender<(NodeId, Vec<u8>)>,
    shared: &Shared,
) -> Result<(), FrameError> {
    let mut ack = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let (sender, incarnation) = match Frame::read_from(&mut reader) {
        Ok(Frame::Hello {
            sender,
            incarnation,
        }) => (sender, incarnation),
        Ok(_) => {
            shared.stats.rejected_frames.fetch_add(1, Ordering::Relaxed);
            return Ok(());
        }
        Err(e) => {
            shared.stats.rejected_frames.fetch_add(1, Ordering::Relaxed);
            return Err(e);
        }
    };
    loop {
        let frame = match Frame::read_from(&mut reader) {
            Ok(f) => f,
            Err(e) => {
                if !matches!(e, FrameError::Io(_)) {
                    shared.stats.rejected_frames.fetch_add(1, Ordering::Relaxed);
                }
                return Err(e);
            }
        };
        let Frame::Data { seq, payload } = frame else {
            shared.stats.rejected_frames.fetch_add(1, Ordering::Relaxed);
            continue;
        };
        let fresh = {
            let mut d = shared.delivered.lock().expect("delivered map");
            let entry = d.entry(sender).or_insert((incarnation, 0));
            if entry.0 != incarnation {
                *entry = (incarnation, 0);
            }
            seq > entry.1
        };
        let last = if fresh {
            if inbound.send((sender as NodeId, payload)).is_err() {
                return Ok(());
            }
            shared.stats.delivered.fetch_add(1, Ordering::Relaxed);
            let mut d = shared.delivered.lock().expect("delivered map");
            let entry = d.get_mut(&sender).expect("entry exists");
            entry.1 = entry.1.max(seq);
            entry.1
        } else {
            shared.stats.duplicates.fetch_add(1, Ordering::Relaxed);
            shared.delivered.lock().expect("delivered map")[&sender].1
        };
        if reader.buffer().is_empty() {
            Frame::Ack { seq: last }.write_to(&mut ack)?;
        }
    }
}

fn writer_loop(
    me: u32,
    incarnation: u64,
    addr: SocketAddr,
    queue: Receiver<Vec<u8>>,
    shared: Arc<Shared>,
) {
    let out = Arc::new(Mutex::new(Outgoing {
        next_seq: 1,
        unacked: VecDeque::new(),
    }));
    let mut backoff = MIN_BACKOFF;
    let mut closed = false;
    while !shared.stop.load(Ordering::SeqCst) {
        let Ok(stream) = TcpStream::connect_timeout(&addr, MAX_BACKOFF) else {
            // Keep accepting payloads while the peer is away.
            closed |= drain_into(&queue, &out, backoff);
            if closed && out.lock().expect("outgoing").unacked.is_empty() {
                return;
            }
            backoff = (backoff * 2).min(MAX_BACKOFF);
            continue;
        };
        backoff = MIN_BACKOFF;
        let _ = stream.set_nodelay(true);
        shared.track(&stream);
        shared.stats.connects.fetch_add(1, Ordering::Relaxed);
        let broken = Arc::new(AtomicBool::new(false));
        let acker = {
            let out = out.clone();
            let broken = broken.clone();
            let Ok(read_half) = stream.try_clone() else {
                continue;
            };
            thread::spawn(move || read_acks(read_half, &out, &broken))
        };
        let mut w = BufWriter::new(stream);
        let mut ok = Frame::Hello {
            sender: me,
            incarnation,
        }
        .write_to(&mut w)
        .is_ok();
        let backlog: Vec<(u64, Vec<u8>)> = out
            .lock()
            .expect("outgoing")
            .unacked
            .iter()
            .cloned()
            .collect();
        for (seq, payload) in backlog {
            if !ok {
                break;
            }
            shared.stats.resent.fetch_add(1, Ordering::Relaxed);
            ok = Frame::Data { seq, payload }.write_to(&mut w).is_ok();
        }
        ok = ok && w.flush().is_ok();
        while ok && !broken.load(Ordering::SeqCst) && !shared.stop.load(Ordering::SeqCst) {
            match queue.recv_timeout(POLL) {
                Ok(payload) => {
                    let seq = push(&out, payload.clone());
                    shared.stats.sent.fetch_add(1, Ordering::Relaxed);
                    ok = Frame::Data { seq, payload }.write_to(&mut w).is_ok();
                    while ok {
                        let Ok(payload) = queue.try_recv() else { break };
                        let seq = push(&out, payload.clone());
                        shared.stats.sent.fetch_add(1, Ordering::Relaxed);
                        ok = Frame::Data { seq, payload }.write_to(&mut w).is_ok();
                    }
                    ok = ok && w.flush().is_ok();
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => {
                    closed = true;
                    if out.lock().expect("outgoing").unacked.is_empty() {
                        break;
                    }
                    thread::sleep(POLL);
                }
            }
        }
        if let Ok(s) = w.into_inner() {
            let _ = s.shutdown(Shutdown::Both);
        }
        let _ = acker.join();
        if closed && out.lock().expect("outgoing").unacked.is_empty() {
            return;
        }
        if !shared.stop.load(Ordering::SeqCst) {
            thread::sleep(backoff);
        }
    }
}

fn push(out: &Mutex<Outgoing>, payload: Vec<u8>) -> u64 {
    let mut o = out.lock().expect("outgoing");
    let seq = o.next_seq;
    o.next_seq += 1;
    o.unacked.push_back((seq, payload));
    seq
}

/// Buffers queued payloads for up to `wait`; true once the queue is closed.
fn drain_into(queue: &Receiver<Vec<u8>>, out: &Mutex<Outgoing>, wait: Duration) -> bool {
    match queue.recv_timeout(wait) {
        Ok(p) => {
            push(out, p);
            while let Ok(p) = queue.try_recv() {
                push(out, p);
            }
            false
        }
        Err(RecvTimeoutError::Timeout) => false,
        Err(RecvTimeoutError::Disconnected) => true,
    }
}

fn read_acks(stream: TcpStream, out: &Mutex<Outgoing>, broken: &AtomicBool) {
    let mut r = BufReader::new(stream);
    while let Ok(Frame::Ack { seq }) = Frame::read_from(&mut r) {
        let mut o = out.lock().expect("outgoing");
        while o.unacked.front().is_some_and(|(s, _)| *s <= seq) {
            o.unacked.pop_front();
        }
    }
    broken.store(true, Ordering::SeqCst);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_round_trip() {
        for f in [
            Frame::Hello {
                sender: 7,
                incarnation: 99,
            },
            Frame::Data {
                seq: 3,
                payload: b"abc".to_vec(),
            },
            Frame::Data {
                seq: 4,
                payload: Vec::new(),
            },
            Frame::Ack { seq: u64::MAX },
        ] {
            let bytes = f.encode();
            assert_eq!(Frame::read_from(&mut bytes.as_slice()).unwrap(), f);
        }
    }

    #[test]
    fn oversized_and_malformed_frames_are_rejected() {
        let mut big = ((MAX_FRAME + 1) as u32).to_be_bytes().to_vec();
        big.push(KIND_DATA);
        assert!(matches!(
            Frame::read_from(&mut big.as_slice()),
            Err(FrameError::TooLarge(_))
        ));
        let bad = [0, 0, 0, 1, 9];
        assert!(matches!(
            Frame::read_from(&mut bad.as_slice()),
            Err(FrameError::BadKind(9))
        ));
        let short = [0, 0, 0, 3, KIND_ACK, 0, 0];
        assert!(matches!(
            Frame::read_from(&mut short.as_slice()),
            Err(FrameError::Truncated)
        ));
    }

    #[test]
    fn max_payload_fills_a_frame_exactly() {
        let f = Frame::Data {
            seq: 1,
            payload: vec![0; MAX_PAYLOAD],
        };
        assert_eq!(f.encode().len(), MAX_FRAME + 4);
        assert!(Frame::read_from(&mut f.encode().as_slice()).is_ok());
    }
}
