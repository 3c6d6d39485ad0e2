//! Wire messages, authentication envelopes and quorum certificates.

use std::collections::BTreeSet;

use repli_core::auth::{Signer, Verifier};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::config::{client_principal, OrderConfig};

pub type Digest = [u8; 32];

/// A client request: an opaque payload to be ordered, signed by its client.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Request {
    pub client: String,
    pub seq: u64,
    pub payload: Vec<u8>,
    pub tag: Vec<u8>,
}

impl Request {
    pub fn signed(client: &str, seq: u64, payload: Vec<u8>, signer: &dyn Signer) -> Self {
        let tag = signer.sign(&Self::signing_bytes(client, seq, &payload));
        Request {
            client: client.to_string(),
            seq,
            payload,
            tag,
        }
    }

    fn signing_bytes(client: &str, seq: u64, payload: &[u8]) -> Vec<u8> {
        bincode::serialize(&(b"request", client, seq, payload)).expect("encode")
    }

    pub fn verify(&self, verifier: &dyn Verifier) -> bool {
        verifier.verify(
            &client_principal(&self.client),
            &Self::signing_bytes(&self.client, self.seq, &self.payload),
            &self.tag,
        )
    }

    pub fn key(&self) -> (String, u64) {
        (self.client.clone(), self.seq)
    }
}

pub fn batch_digest(batch: &[Request]) -> Digest {
    let bytes = bincode::serialize(batch).expect("encode");
    Sha256::digest(bytes).into()
}

/// Who sent an envelope.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sender {
    Replica(u32),
    Client(String),
}

/// Where an envelope goes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dest {
    Replica(u32),
    Client(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Propose,
    Write,
    Accept,
    ViewChange,
    NewView,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Body {
    Request(Request),
    /// Acknowledges that a request was executed at `slot`.
    Reply {
        client: String,
        seq: u64,
        slot: u64,
    },
    Propose {
        view: u64,
        slot: u64,
        batch: Vec<Request>,
    },
    Write {
        view: u64,
        slot: u64,
        digest: Digest,
    },
    Accept {
        view: u64,
        slot: u64,
        digest: Digest,
    },
    ViewChange(ViewChange),
    NewView(NewView),
    /// Asks for decision certificates starting at `from`.
    Fetch {
        from: u64,
    },
    Decision(DecisionProof),
}

impl Body {
    pub fn phase(&self) -> Option<Phase> {
        Some(match self {
            Body::Propose { .. } => Phase::Propose,
            Body::Write { .. } => Phase::Write,
            Body::Accept { .. } => Phase::Accept,
            Body::ViewChange(_) => Phase::ViewChange,
            Body::NewView(_) => Phase::NewView,
            _ => return None,
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Body::Request(_) => "request",
            Body::Reply { .. } => "reply",
            Body::Propose { .. } => "propose",
            Body::Write { .. } => "write",
            Body::Accept { .. } => "accept",
            Body::ViewChange(_) => "view-change",
            Body::NewView(_) => "new-view",
            Body::Fetch { .. } => "fetch",
            Body::Decision(_) => "decision",
        }
    }
}

/// An authenticated message.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub sender: Sender,
    pub body: Body,
    pub tag: Vec<u8>,
}

impl Envelope {
    fn signing_bytes(group: &str, sender: &Sender, body: &Body) -> Vec<u8> {
        bincode::serialize(&(group, sender, body)).expect("encode")
    }

    pub fn seal(group: &str, sender: Sender, body: Body, signer: &dyn Signer) -> Self {
        let tag = signer.sign(&Self::signing_bytes(group, &sender, &body));
        Envelope { sender, body, tag }
    }

    pub fn principal(&self, group: &str) -> String {
        match &self.sender {
            Sender::Replica(i) => crate::config::replica_principal(group, *i),
            Sender::Client(c) => client_principal(c),
        }
    }

    pub fn verify(&self, group: &str, verifier: &dyn Verifier) -> bool {
        verifier.verify(
            &self.principal(group),
            &Self::signing_bytes(group, &self.sender, &self.body),
            &self.tag,
        )
    }

    pub fn replica(&self) -> Option<u32> {
        match self.sender {
            Sender::Replica(i) => Some(i),
            Sender::Client(_) => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        bincode::serialize(self).expect("encode")
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        bincode::deserialize(bytes).ok()
    }
}

/// `q` signed WRITE votes for one (view, slot, digest) plus the batch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreparedProof {
    pub view: u64,
    pub slot: u64,
    pub batch: Vec<Request>,
    pub writes: Vec<Envelope>,
}

/// `q` signed ACCEPT votes for one (view, slot, digest) plus the batch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionProof {
    pub view: u64,
    pub slot: u64,
    pub batch: Vec<Request>,
    pub accepts: Vec<Envelope>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewChange {
    pub new_view: u64,
    /// Certificate of the sender's last decided slot.
    pub decided: Option<DecisionProof>,
    /// Highest-view prepared certificate for the slot after it.
    pub prepared: Option<PreparedProof>,
}

impl ViewChange {
    /// First slot the sender has not decided.
    pub fn next_slot(&self) -> u64 {
        self.decided.as_ref().map(|d| d.slot + 1).unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewView {
    pub view: u64,
    pub view_changes: Vec<Envelope>,
    pub slot: u64,
    pub batch: Option<Vec<Request>>,
}

/// Checks that `votes` hold `q` distinct, authentic votes matching the
/// given phase, view, slot and digest.
fn verify_votes(
    cfg: &OrderConfig,
    verifier: &dyn Verifier,
    votes: &[Envelope],
    phase: Phase,
    view: u64,
    slot: u64,
    digest: &Digest,
) -> bool {
    let mut voters = BTreeSet::new();
    for v in votes {
        let Some(r) = v.replica() else { return false };
        if r >= cfg.n {
            return false;
        }
        let ok = match (&v.body, phase) {
            (
                Body::Write {
                    view: vv,
                    slot: vs,
                    digest: vd,
                },
                Phase::Write,
            )
            | (
                Body::Accept {
                    view: vv,
                    slot: vs,
                    digest: vd,
                },
                Phase::Accept,
            ) => *vv == view && *vs == slot && vd == digest,
            _ => false,
        };
        if !ok || !v.verify(&cfg.group, verifier) {
            return false;
        }
        voters.insert(r);
    }
    voters.len() >= cfg.quorum()
}

fn batch_ok(cfg: &OrderConfig, verifier: &dyn Verifier, batch: &[Request]) -> bool {
    batch.len() <= cfg.max_batch && batch.iter().all(|r| r.verify(verifier))
}

impl PreparedProof {
    pub fn digest(&self) -> Digest {
        batch_digest(&self.batch)
    }

    pub fn verify(&self, cfg: &OrderConfig, verifier: &dyn Verifier) -> bool {
        batch_ok(cfg, verifier, &self.batch)
            && verify_votes(
                cfg,
                verifier,
                &self.writes,
                Phase::Write,
                self.view,
                self.slot,
                &self.digest(),
            )
    }
}

impl DecisionProof {
    pub fn digest(&self) -> Digest {
        batch_digest(&self.batch)
    }

    pub fn verify(&self, cfg: &OrderConfig, verifier: &dyn Verifier) -> bool {
        batch_ok(cfg, verifier, &self.batch)
            && verify_votes(
                cfg,
                verifier,
                &self.accepts,
                Phase::Accept,
                self.view,
                self.slot,
                &self.digest(),
            )
    }
}

impl ViewChange {
    pub fn verify(&self, cfg: &OrderConfig, verifier: &dyn Verifier) -> bool {
        if let Some(d) = &self.decided {
            if !d.verify(cfg, verifier) {
                return false;
            }
        }
        match &self.prepared {
            Some(p) => {
                p.slot == self.next_slot() && p.view < self.new_view && p.verify(cfg, verifier)
            }
            None => true,
        }
    }
}

/// What a new leader must propose for a given set of view changes: the first
/// slot nobody in the set has decided, and the batch of the highest-view
/// prepared certificate for it, if any.
pub fn new_view_choice(view_changes: &[ViewChange]) -> (u64, Option<&PreparedProof>) {
    let slot = view_changes
        .iter()
        .map(ViewChange::next_slot)
        .max()
        .unwrap_or(0);
    let best = view_changes
        .iter()
        .filter_map(|vc| vc.prepared.as_ref())
        .filter(|p| p.slot == slot)
        .max_by(|a, b| {
            a.view
                .cmp(&b.view)
                .then_with(|| a.digest().cmp(&b.digest()))
        });
    (slot, best)
}

impl NewView {
    /// Verifies the certificate set and that the re-proposal follows the
    /// deterministic choice rule. Returns the view changes on success.
    pub fn verify(&self, cfg: &OrderConfig, verifier: &dyn Verifier) -> Option<Vec<ViewChange>> {
        let mut senders = BTreeSet::new();
        let mut vcs = Vec::new();
        for env in &self.view_changes {
            let r = env.replica()?;
            let Body::ViewChange(vc) = &env.body else {
                return None;
            };
            if r >= cfg.n
                || vc.new_view != self.view
                || !env.verify(&cfg.group, verifier)
                || !vc.verify(cfg, verifier)
            {
                return None;
            }
            if senders.insert(r) {
                vcs.push(vc.clone());
            }
        }
        if senders.len() < cfg.quorum() {
            return None;
        }
        let (slot, best) = new_view_choice(&vcs);
        if slot != self.slot {
            return None;
        }
        match (best, &self.batch) {
            (Some(p), Some(b)) if &p.batch == b => {}
            (Some(_), _) => return None,
            (None, Some(b)) if !batch_ok(cfg, verifier, b) => return None,
            (None, _) => {}
        }
        Some(vcs)
    }
}
