//! Client side of the ordering group (the frontend's `invoke-ordered`).

use std::collections::{BTreeMap, BTreeSet};

use repli_core::auth::{SharedSigner, SharedVerifier};

use crate::config::OrderConfig;
use crate::message::{Body, Dest, Envelope, Request, Sender};
use crate::replica::Output;

struct InFlight {
    request: Request,
    first_sent: u64,
    last_sent: u64,
    acks: BTreeSet<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClientStats {
    pub invoked: u64,
    pub acked: u64,
    pub failed: u64,
    pub retransmissions: u64,
    pub rejected: u64,
}

/// Broadcasts requests to all replicas and retransmits until `f+1` distinct
/// replicas acknowledge execution.
pub struct Client {
    id: String,
    cfg: OrderConfig,
    signer: SharedSigner,
    verifier: SharedVerifier,
    next_seq: u64,
    in_flight: BTreeMap<u64, InFlight>,
    stats: ClientStats,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client")
            .field("id", &self.id)
            .field("in_flight", &self.in_flight.len())
            .finish()
    }
}

impl Client {
    pub fn new(
        id: impl Into<String>,
        cfg: OrderConfig,
        signer: SharedSigner,
        verifier: SharedVerifier,
    ) -> Self {
        Client {
            id: id.into(),
            cfg,
            signer,
            verifier,
            next_seq: 0,
            in_flight: BTreeMap::new(),
            stats: ClientStats::default(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &OrderConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &ClientStats {
        &self.stats
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    fn broadcast(&self, request: &Request, out: &mut Output) {
        let env = Envelope::seal(
            &self.cfg.group,
            Sender::Client(self.id.clone()),
            Body::Request(request.clone()),
            self.signer.as_ref(),
        );
        for j in 0..self.cfg.n {
            out.sends.push((Dest::Replica(j), env.clone()));
        }
    }

    /// Submits `payload` for ordering; returns its sequence number.
    pub fn invoke(&mut self, now: u64, payload: Vec<u8>) -> (u64, Output) {
        let seq = self.next_seq;
        self.next_seq += 1;
        let request = Request::signed(&self.id, seq, payload, self.signer.as_ref());
        let mut out = Output::default();
        self.broadcast(&request, &mut out);
        self.in_flight.insert(
            seq,
            InFlight {
                request,
                first_sent: now,
                last_sent: now,
                acks: BTreeSet::new(),
            },
        );
        self.stats.invoked += 1;
        (seq, out)
    }

    pub fn handle(&mut self, _now: u64, env: Envelope) -> Output {
        let mut out = Output::default();
        let (Some(r), Body::Reply { client, seq, .. }) = (env.replica(), &env.body) else {
            self.stats.rejected += 1;
            return out;
        };
        if client != &self.id
            || r >= self.cfg.n
            || !env.verify(&self.cfg.group, self.verifier.as_ref())
        {
            self.stats.rejected += 1;
            return out;
        }
        let seq = *seq;
        if let Some(f) = self.in_flight.get_mut(&seq) {
            f.acks.insert(r);
            if f.acks.len() >= self.cfg.ack_threshold() {
                self.in_flight.remove(&seq);
                self.stats.acked += 1;
                out.acked.push(seq);
            }
        }
        out
    }

    /// Retransmits overdue requests and gives up on expired ones.
    pub fn tick(&mut self, now: u64) -> Output {
        let mut out = Output::default();
        let mut failed = Vec::new();
        let mut resend = Vec::new();
        for (seq, f) in &mut self.in_flight {
            if now >= f.first_sent + self.cfg.client_give_up {
                failed.push(*seq);
            } else if now >= f.last_sent + self.cfg.client_retransmit {
                f.last_sent = now;
                resend.push(f.request.clone());
            }
        }
        for r in resend {
            self.stats.retransmissions += 1;
            self.broadcast(&r, &mut out);
        }
        for seq in failed {
            self.in_flight.remove(&seq);
            self.stats.failed += 1;
            out.failed.push(seq);
        }
        out
    }
}
