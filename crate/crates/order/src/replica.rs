//! One member of an ordering group.
//!
//! The replica is a sans-IO reactor: [`Replica::handle`] and [`Replica::tick`]
//! consume one input and return the messages to send and the requests that
//! became executable. Agreement proceeds slot by slot: the leader of the
//! current view proposes a batch for the next undecided slot only after the
//! previous slot is decided.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use repli_core::auth::{SharedSigner, SharedVerifier};
use serde::{Deserialize, Serialize};

use crate::byzantine::{corrupt, ByzantineMode};
use crate::config::OrderConfig;
use crate::message::{
    batch_digest, new_view_choice, Body, DecisionProof, Dest, Digest, Envelope, NewView,
    PreparedProof, Request, Sender, ViewChange,
};

/// Slots beyond the next undecided one for which votes are buffered.
const LOOKAHEAD: u64 = 64;

/// A request handed to the application, in decision order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Executed {
    pub slot: u64,
    pub request: Request,
}

/// Everything a reactor step produced.
#[derive(Clone, Debug, Default)]
pub struct Output {
    pub sends: Vec<(Dest, Envelope)>,
    pub executed: Vec<Executed>,
    /// Client side: sequence numbers acknowledged by enough replicas.
    pub acked: Vec<u64>,
    /// Client side: sequence numbers given up on.
    pub failed: Vec<u64>,
}

impl Output {
    pub fn merge(&mut self, other: Output) {
        self.sends.extend(other.sends);
        self.executed.extend(other.executed);
        self.acked.extend(other.acked);
        self.failed.extend(other.failed);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecidedBatch {
    pub slot: u64,
    pub view: u64,
    pub digest: Digest,
    pub requests: Vec<(String, u64)>,
}

/// Append-only record of decided batches, contiguous from slot 0.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryLog {
    pub batches: Vec<DecidedBatch>,
}

impl DeliveryLog {
    pub fn len(&self) -> u64 {
        self.batches.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    /// True if one log is a prefix of the other (by slot digest).
    pub fn prefix_consistent(&self, other: &DeliveryLog) -> bool {
        self.batches
            .iter()
            .zip(&other.batches)
            .all(|(a, b)| a.slot == b.slot && a.digest == b.digest)
    }

    pub fn request_count(&self) -> usize {
        self.batches.iter().map(|b| b.requests.len()).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReplicaStats {
    pub rejected_auth: u64,
    pub rejected_invalid: u64,
    pub view_changes: u64,
    pub decided: u64,
    pub executed: u64,
    pub duplicates: u64,
}

#[derive(Default)]
struct SlotState {
    proposals: BTreeMap<u64, (Digest, Vec<Request>)>,
    writes: BTreeMap<(u64, Digest), BTreeMap<u32, Envelope>>,
    accepts: BTreeMap<(u64, Digest), BTreeMap<u32, Envelope>>,
    sent_write: BTreeSet<u64>,
    sent_accept: BTreeSet<u64>,
    prepared: Option<PreparedProof>,
}

impl SlotState {
    fn batch_for(&self, digest: &Digest) -> Option<Vec<Request>> {
        self.proposals
            .values()
            .find(|(d, _)| d == digest)
            .map(|(_, b)| b.clone())
            .or_else(|| {
                self.prepared
                    .as_ref()
                    .filter(|p| &p.digest() == digest)
                    .map(|p| p.batch.clone())
            })
    }
}

pub struct Replica {
    cfg: OrderConfig,
    index: u32,
    signer: SharedSigner,
    verifier: SharedVerifier,
    view: u64,
    /// False between sending a view change and installing the new view.
    active: bool,
    view_deadline: u64,
    view_attempt: u32,
    /// First slot that may be proposed in the current view.
    view_start: u64,
    log: DeliveryLog,
    proofs: Vec<DecisionProof>,
    slots: BTreeMap<u64, SlotState>,
    future_decisions: BTreeMap<u64, DecisionProof>,
    pending: VecDeque<Request>,
    pending_keys: HashSet<(String, u64)>,
    executed: HashMap<(String, u64), u64>,
    progress_deadline: Option<u64>,
    view_changes: BTreeMap<u64, BTreeMap<u32, Envelope>>,
    sent_new_view: BTreeSet<u64>,
    last_new_view: Option<Envelope>,
    last_fetch: Option<u64>,
    max_seen_slot: u64,
    max_seen_view: u64,
    byzantine: Option<ByzantineMode>,
    rng: ChaCha8Rng,
    evidence: Vec<String>,
    stats: ReplicaStats,
    local: VecDeque<Envelope>,
    out: Output,
    now: u64,
}

impl std::fmt::Debug for Replica {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Replica")
            .field("group", &self.cfg.group)
            .field("index", &self.index)
            .field("view", &self.view)
            .field("active", &self.active)
            .field("decided", &self.log.len())
            .field("pending", &self.pending.len())
            .finish()
    }
}

impl Replica {
    pub fn new(
        cfg: OrderConfig,
        index: u32,
        signer: SharedSigner,
        verifier: SharedVerifier,
    ) -> Self {
        let seed = u64::from(index) ^ 0x5eed_0000;
        Replica {
            cfg,
            index,
            signer,
            verifier,
            view: 0,
            active: true,
            view_deadline: 0,
            view_attempt: 0,
            view_start: 0,
            log: DeliveryLog::default(),
            proofs: Vec::new(),
            slots: BTreeMap::new(),
            future_decisions: BTreeMap::new(),
            pending: VecDeque::new(),
            pending_keys: HashSet::new(),
            executed: HashMap::new(),
            progress_deadline: None,
            view_changes: BTreeMap::new(),
            sent_new_view: BTreeSet::new(),
            last_new_view: None,
            last_fetch: None,
            max_seen_slot: 0,
            max_seen_view: 0,
            byzantine: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            evidence: Vec::new(),
            stats: ReplicaStats::default(),
            local: VecDeque::new(),
            out: Output::default(),
            now: 0,
        }
    }

    pub fn config(&self) -> &OrderConfig {
        &self.cfg
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn view(&self) -> u64 {
        self.view
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn is_leader(&self) -> bool {
        self.active && self.cfg.leader_of(self.view) == self.index
    }

    pub fn log(&self) -> &DeliveryLog {
        &self.log
    }

    /// Decision certificate of a decided slot.
    pub fn decision_proof(&self, slot: u64) -> Option<&DecisionProof> {
        self.proofs.get(slot as usize)
    }

    pub fn stats(&self) -> &ReplicaStats {
        &self.stats
    }

    pub fn evidence(&self) -> &[String] {
        &self.evidence
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn set_byzantine(&mut self, mode: Option<ByzantineMode>) {
        self.byzantine = mode;
    }

    pub fn byzantine(&self) -> Option<ByzantineMode> {
        self.byzantine
    }

    /// Processes one incoming envelope. Envelopes failing authentication
    /// are dropped without touching any state.
    pub fn handle(&mut self, now: u64, env: Envelope) -> Output {
        self.now = now;
        if !env.verify(&self.cfg.group, self.verifier.as_ref()) {
            self.stats.rejected_auth += 1;
            return Output::default();
        }
        self.process(env);
        self.drain_local();
        std::mem::take(&mut self.out)
    }

    /// Advances timers.
    pub fn tick(&mut self, now: u64) -> Output {
        self.now = now;
        if self.cfg.view_change_enabled() {
            if self.active {
                if self.progress_deadline.is_some_and(|d| now >= d) {
                    self.start_view_change(self.view + 1, 0);
                }
            } else if now >= self.view_deadline {
                self.start_view_change(self.view + 1, self.view_attempt + 1);
            }
        }
        let behind = self.max_seen_slot > self.log.len() || self.max_seen_view > self.view;
        let stalled = self
            .progress_deadline
            .is_some_and(|d| now + self.cfg.view_timeout / 2 >= d);
        if (behind || stalled) && self.cfg.n > 1 {
            let peer = (self.index + 1 + (now % u64::from(self.cfg.n - 1)) as u32) % self.cfg.n;
            self.maybe_fetch(peer);
        }
        self.try_propose();
        self.drain_local();
        std::mem::take(&mut self.out)
    }

    fn drain_local(&mut self) {
        while let Some(env) = self.local.pop_front() {
            self.process(env);
        }
    }

    fn send(&mut self, dest: Dest, body: Body) {
        if dest == Dest::Replica(self.index) {
            let env = Envelope::seal(
                &self.cfg.group,
                Sender::Replica(self.index),
                body,
                self.signer.as_ref(),
            );
            self.local.push_back(env);
            return;
        }
        let body = match self.byzantine {
            Some(mode) => match corrupt(mode, &dest, body, &mut self.rng) {
                Some(b) => b,
                None => return,
            },
            None => body,
        };
        let env = Envelope::seal(
            &self.cfg.group,
            Sender::Replica(self.index),
            body,
            self.signer.as_ref(),
        );
        self.out.sends.push((dest, env));
    }

    fn broadcast(&mut self, body: Body) {
        for j in 0..self.cfg.n {
            self.send(Dest::Replica(j), body.clone());
        }
    }

    fn process(&mut self, env: Envelope) {
        let from = env.replica();
        match (&env.body, from) {
            (Body::Request(r), None) => {
                if env.sender == Sender::Client(r.client.clone())
                    && r.verify(self.verifier.as_ref())
                {
                    self.on_request(r.clone());
                } else {
                    self.stats.rejected_invalid += 1;
                }
            }
            (_, None) => self.stats.rejected_invalid += 1,
            (_, Some(r)) if r >= self.cfg.n => self.stats.rejected_invalid += 1,
            (Body::Propose { view, slot, batch }, Some(r)) => {
                let (view, slot, batch) = (*view, *slot, batch.clone());
                self.on_propose(r, view, slot, batch);
            }
            (Body::Write { view, slot, digest }, Some(r)) => {
                let (view, slot, digest) = (*view, *slot, *digest);
                self.on_vote(r, view, slot, digest, env, false);
            }
            (Body::Accept { view, slot, digest }, Some(r)) => {
                let (view, slot, digest) = (*view, *slot, *digest);
                self.on_vote(r, view, slot, digest, env, true);
            }
            (Body::ViewChange(_), Some(r)) => self.on_view_change(r, env),
            (Body::NewView(_), Some(r)) => self.on_new_view(r, env),
            (Body::Fetch { from }, Some(r)) => {
                let from = *from;
                self.on_fetch(r, from);
            }
            (Body::Decision(proof), Some(r)) => {
                let proof = proof.clone();
                self.on_decision(r, proof);
            }
            (Body::Reply { .. } | Body::Request(_), Some(_)) => self.stats.rejected_invalid += 1,
        }
    }

    fn on_request(&mut self, r: Request) {
        let key = r.key();
        if let Some(&slot) = self.executed.get(&key) {
            self.stats.duplicates += 1;
            self.send(
                Dest::Client(r.client.clone()),
                Body::Reply {
                    client: r.client,
                    seq: r.seq,
                    slot,
                },
            );
            return;
        }
        if !self.pending_keys.insert(key) {
            self.stats.duplicates += 1;
            return;
        }
        self.pending.push_back(r);
        if self.progress_deadline.is_none() && self.active && self.cfg.view_change_enabled() {
            self.progress_deadline = Some(self.now + self.cfg.view_timeout);
        }
        self.try_propose();
    }

    fn try_propose(&mut self) {
        if !self.is_leader() || self.pending.is_empty() {
            return;
        }
        let slot = self.log.len();
        if slot < self.view_start {
            return;
        }
        if self
            .slots
            .get(&slot)
            .is_some_and(|s| s.proposals.contains_key(&self.view))
        {
            return;
        }
        let batch: Vec<Request> = self
            .pending
            .iter()
            .take(self.cfg.max_batch)
            .cloned()
            .collect();
        self.broadcast(Body::Propose {
            view: self.view,
            slot,
            batch,
        });
    }

    fn note_ahead(&mut self, peer: u32, slot: u64, view: u64) {
        self.max_seen_slot = self.max_seen_slot.max(slot);
        self.max_seen_view = self.max_seen_view.max(view);
        if slot > self.log.len() || view > self.view {
            self.maybe_fetch(peer);
        }
    }

    fn in_window(&self, slot: u64) -> bool {
        slot >= self.log.len() && slot <= self.log.len() + LOOKAHEAD
    }

    fn on_propose(&mut self, from: u32, view: u64, slot: u64, batch: Vec<Request>) {
        if view > self.view {
            self.note_ahead(from, slot, view);
            return;
        }
        if !self.active
            || view != self.view
            || from != self.cfg.leader_of(view)
            || !self.in_window(slot)
        {
            return;
        }
        if slot < self.view_start {
            return;
        }
        if batch.is_empty()
            || batch.len() > self.cfg.max_batch
            || !batch.iter().all(|r| r.verify(self.verifier.as_ref()))
        {
            self.stats.rejected_invalid += 1;
            self.evidence.push(format!(
                "invalid proposal from {from} for view {view} slot {slot}"
            ));
            return;
        }
        self.store_proposal(view, slot, batch);
        if slot > self.log.len() {
            self.note_ahead(from, slot, view);
        } else {
            self.progress_slot();
        }
    }

    fn store_proposal(&mut self, view: u64, slot: u64, batch: Vec<Request>) {
        let digest = batch_digest(&batch);
        let st = self.slots.entry(slot).or_default();
        match st.proposals.get(&view) {
            Some((d, _)) if *d != digest => {
                self.evidence
                    .push(format!("conflicting proposals for view {view} slot {slot}"));
            }
            Some(_) => {}
            None => {
                st.proposals.insert(view, (digest, batch));
            }
        }
    }

    fn on_vote(
        &mut self,
        from: u32,
        view: u64,
        slot: u64,
        digest: Digest,
        env: Envelope,
        accept: bool,
    ) {
        if slot < self.log.len() {
            return;
        }
        if !self.in_window(slot) || (!accept && view < self.view) {
            self.note_ahead(from, slot, view);
            return;
        }
        let st = self.slots.entry(slot).or_default();
        let map = if accept {
            &mut st.accepts
        } else {
            &mut st.writes
        };
        map.entry((view, digest))
            .or_default()
            .entry(from)
            .or_insert(env);
        if slot == self.log.len() {
            self.progress_slot();
        }
        self.note_ahead(from, slot, view);
    }

    /// Drives the next undecided slot as far as the collected votes allow.
    fn progress_slot(&mut self) {
        loop {
            let slot = self.log.len();
            if let Some(p) = self.future_decisions.remove(&slot) {
                self.decide(p);
                continue;
            }
            let q = self.cfg.quorum();
            let (view, active) = (self.view, self.active && slot >= self.view_start);
            let Some(st) = self.slots.get_mut(&slot) else {
                return;
            };
            let mut to_send = Vec::new();
            if active {
                if let Some((d, batch)) = st.proposals.get(&view).cloned() {
                    if st.sent_write.insert(view) {
                        to_send.push(Body::Write {
                            view,
                            slot,
                            digest: d,
                        });
                    }
                    let writes = st.writes.get(&(view, d)).map(|m| m.len()).unwrap_or(0);
                    if writes >= q && !st.sent_accept.contains(&view) {
                        st.sent_accept.insert(view);
                        let proof = PreparedProof {
                            view,
                            slot,
                            batch,
                            writes: st.writes[&(view, d)].values().cloned().collect(),
                        };
                        st.prepared = Some(proof);
                        to_send.push(Body::Accept {
                            view,
                            slot,
                            digest: d,
                        });
                    }
                }
            }
            let decided = st
                .accepts
                .iter()
                .find(|(_, votes)| votes.len() >= q)
                .map(|((v, d), votes)| (*v, *d, votes.values().cloned().collect::<Vec<_>>()));
            let mut decision = None;
            let mut missing_from = None;
            if let Some((v, d, accepts)) = decided {
                match st.batch_for(&d) {
                    Some(batch) => {
                        decision = Some(DecisionProof {
                            view: v,
                            slot,
                            batch,
                            accepts,
                        })
                    }
                    None => missing_from = accepts.first().and_then(Envelope::replica),
                }
            }
            for b in to_send {
                self.broadcast(b);
            }
            match decision {
                Some(p) => self.decide(p),
                None => {
                    if let Some(peer) = missing_from {
                        self.maybe_fetch_at(peer, slot);
                    }
                    return;
                }
            }
        }
    }

    fn decide(&mut self, proof: DecisionProof) {
        let slot = proof.slot;
        debug_assert_eq!(slot, self.log.len());
        let digest = proof.digest();
        let mut keys = Vec::with_capacity(proof.batch.len());
        for r in &proof.batch {
            let key = r.key();
            keys.push(key.clone());
            if self.executed.contains_key(&key) {
                self.stats.duplicates += 1;
                continue;
            }
            self.executed.insert(key.clone(), slot);
            self.pending_keys.remove(&key);
            self.stats.executed += 1;
            self.out.executed.push(Executed {
                slot,
                request: r.clone(),
            });
            self.send(
                Dest::Client(r.client.clone()),
                Body::Reply {
                    client: r.client.clone(),
                    seq: r.seq,
                    slot,
                },
            );
        }
        let executed = &self.executed;
        self.pending.retain(|r| !executed.contains_key(&r.key()));
        self.log.batches.push(DecidedBatch {
            slot,
            view: proof.view,
            digest,
            requests: keys,
        });
        self.proofs.push(proof);
        self.slots.remove(&slot);
        self.stats.decided += 1;
        self.progress_deadline = if self.pending.is_empty() || !self.cfg.view_change_enabled() {
            None
        } else {
            Some(self.now + self.cfg.view_timeout)
        };
        self.try_propose();
    }

    fn maybe_fetch(&mut self, peer: u32) {
        let from = self.log.len();
        self.maybe_fetch_at(peer, from);
    }

    fn maybe_fetch_at(&mut self, peer: u32, from: u64) {
        if peer == self.index {
            return;
        }
        if self
            .last_fetch
            .is_some_and(|t| self.now < t + self.cfg.fetch_interval)
        {
            return;
        }
        self.last_fetch = Some(self.now);
        self.send(Dest::Replica(peer), Body::Fetch { from });
    }

    fn on_fetch(&mut self, peer: u32, from: u64) {
        let end = self
            .log
            .len()
            .min(from.saturating_add(self.cfg.fetch_chunk));
        for s in from..end {
            let p = self.proofs[s as usize].clone();
            self.send(Dest::Replica(peer), Body::Decision(p));
        }
        if let Some(nv) = self.last_new_view.clone() {
            if self.byzantine != Some(ByzantineMode::Mute) {
                self.out.sends.push((Dest::Replica(peer), nv));
            }
        }
    }

    fn on_decision(&mut self, peer: u32, proof: DecisionProof) {
        let next = self.log.len();
        if proof.slot < next || proof.slot > next + 4 * self.cfg.fetch_chunk {
            return;
        }
        if !proof.verify(&self.cfg, self.verifier.as_ref()) {
            self.stats.rejected_invalid += 1;
            return;
        }
        self.max_seen_slot = self.max_seen_slot.max(proof.slot + 1);
        if proof.slot == next {
            self.decide(proof);
            self.progress_slot();
        } else {
            self.future_decisions.insert(proof.slot, proof);
            self.maybe_fetch(peer);
        }
    }

    fn start_view_change(&mut self, target: u64, attempt: u32) {
        if !self.cfg.view_change_enabled() || target <= self.view && !self.active {
            return;
        }
        self.view = target;
        self.active = false;
        self.view_attempt = attempt;
        let timeout = (self.cfg.view_timeout << attempt.min(16)).min(self.cfg.max_view_timeout);
        self.view_deadline = self.now + timeout;
        self.progress_deadline = None;
        self.stats.view_changes += 1;
        let next = self.log.len();
        let prepared = self
            .slots
            .get(&next)
            .and_then(|s| s.prepared.clone())
            .filter(|p| p.view < target);
        let vc = ViewChange {
            new_view: target,
            decided: self.proofs.last().cloned(),
            prepared,
        };
        self.broadcast(Body::ViewChange(vc));
    }

    fn on_view_change(&mut self, from: u32, env: Envelope) {
        let Body::ViewChange(vc) = &env.body else {
            return;
        };
        if vc.new_view < self.view || (vc.new_view == self.view && self.active) {
            return;
        }
        if !vc.verify(&self.cfg, self.verifier.as_ref()) {
            self.stats.rejected_invalid += 1;
            return;
        }
        let w = vc.new_view;
        if let Some(d) = &vc.decided {
            if d.slot == self.log.len() {
                self.decide(d.clone());
                self.progress_slot();
            } else if d.slot > self.log.len() {
                self.max_seen_slot = self.max_seen_slot.max(d.slot + 1);
                self.maybe_fetch(from);
            }
        }
        self.view_changes.entry(w).or_default().insert(from, env);

        // Join once f+1 replicas want to leave the current view.
        let mut highest: BTreeMap<u32, u64> = BTreeMap::new();
        for (v, senders) in self.view_changes.range(self.view + 1..) {
            for s in senders.keys() {
                let e = highest.entry(*s).or_insert(0);
                *e = (*e).max(*v);
            }
        }
        let need = self.cfg.f as usize + 1;
        if highest.len() >= need {
            let mut views: Vec<u64> = highest.values().copied().collect();
            views.sort_unstable_by(|a, b| b.cmp(a));
            let target = views[need - 1];
            if target > self.view {
                self.start_view_change(target, 0);
            }
        }
        self.try_new_view();
    }

    fn try_new_view(&mut self) {
        let w = self.view;
        if self.active || self.cfg.leader_of(w) != self.index || self.sent_new_view.contains(&w) {
            return;
        }
        let Some(vcs) = self.view_changes.get(&w) else {
            return;
        };
        if vcs.len() < self.cfg.quorum() {
            return;
        }
        let envs: Vec<Envelope> = vcs.values().cloned().collect();
        let decoded: Vec<ViewChange> = envs
            .iter()
            .filter_map(|e| match &e.body {
                Body::ViewChange(vc) => Some(vc.clone()),
                _ => None,
            })
            .collect();
        let (slot, best) = new_view_choice(&decoded);
        let batch = match best {
            Some(p) => Some(p.batch.clone()),
            None => {
                let fresh: Vec<Request> = self
                    .pending
                    .iter()
                    .take(self.cfg.max_batch)
                    .cloned()
                    .collect();
                (!fresh.is_empty()).then_some(fresh)
            }
        };
        self.sent_new_view.insert(w);
        self.broadcast(Body::NewView(NewView {
            view: w,
            view_changes: envs,
            slot,
            batch,
        }));
    }

    fn on_new_view(&mut self, from: u32, env: Envelope) {
        let Body::NewView(nv) = &env.body else { return };
        if nv.view < self.view
            || (nv.view == self.view && self.active)
            || from != self.cfg.leader_of(nv.view)
        {
            return;
        }
        let Some(vcs) = nv.verify(&self.cfg, self.verifier.as_ref()) else {
            self.stats.rejected_invalid += 1;
            self.evidence
                .push(format!("invalid new view {} from {from}", nv.view));
            return;
        };
        let nv = nv.clone();
        self.view = nv.view;
        self.active = true;
        self.view_attempt = 0;
        self.view_start = nv.slot;
        self.last_new_view = Some(env);
        self.view_changes.retain(|v, _| *v > nv.view);
        self.progress_deadline =
            (!self.pending.is_empty()).then_some(self.now + self.cfg.view_timeout);
        for vc in vcs {
            if let Some(d) = vc.decided {
                if d.slot == self.log.len() {
                    self.decide(d);
                }
            }
        }
        self.max_seen_slot = self.max_seen_slot.max(nv.slot);
        if let Some(batch) = nv.batch {
            self.store_proposal(nv.view, nv.slot, batch);
        }
        if self.log.len() < nv.slot {
            self.last_fetch = None;
            self.maybe_fetch(from);
        }
        self.progress_slot();
        self.try_propose();
    }
}
