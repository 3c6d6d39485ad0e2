//! Output consolidation: collapse the `n` replica output streams of a group
//! into one deduplicated, fault-masked stream per receiver.
//!
//! Each output event of a replica is a vote for the slot `(senderPort, seq)`.
//! A slot is delivered once `threshold` votes match under the policy's
//! matcher; later votes are ignored. Delivered slots are released to the
//! receiver in ascending `seq` order per port.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::architecture::FaultModel;
use crate::model::{
    Behavior, BehaviorError, ComponentId, ComponentSpec, ComponentState, Emission, Event,
};

/// Default number of newer slots after which an unresolved slot is dropped.
pub const DEFAULT_RETENTION: u64 = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConsolidateError {
    #[error("consolidator {0:?} is already registered")]
    Duplicate(String),
    #[error("unknown consolidator {0:?}")]
    Unknown(String),
    #[error("consolidator {name}: threshold must be at least 1")]
    ZeroThreshold { name: String },
    #[error("consolidator {name}: {reason}")]
    BadParams { name: String, reason: String },
}

/// Decides whether a set of votes contains a matching subset of a given size.
pub trait PayloadMatcher: Send + Sync + fmt::Debug {
    /// Returns the representative payload of a matching subset of at least
    /// `threshold` votes, if one exists.
    fn decide(&self, votes: &[&[u8]], threshold: usize) -> Option<Vec<u8>>;
}

/// Byte-exact matching ("same sequence number, same content").
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatch;

impl PayloadMatcher for ExactMatch {
    fn decide(&self, votes: &[&[u8]], threshold: usize) -> Option<Vec<u8>> {
        let mut counts: BTreeMap<&[u8], usize> = BTreeMap::new();
        for v in votes {
            let c = counts.entry(v).or_default();
            *c += 1;
            if *c >= threshold {
                return Some(v.to_vec());
            }
        }
        None
    }
}

/// Matches decimal-text numeric payloads lying within `width` of each other;
/// the representative is the median of the matching subset.
#[derive(Debug, Clone, Copy)]
pub struct IntervalMatch {
    pub width: f64,
}

pub fn parse_numeric(payload: &[u8]) -> Option<f64> {
    std::str::from_utf8(payload)
        .ok()?
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
}

pub fn median(sorted: &[f64]) -> f64 {
    let m = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[m]
    } else {
        (sorted[m - 1] + sorted[m]) / 2.0
    }
}

impl PayloadMatcher for IntervalMatch {
    fn decide(&self, votes: &[&[u8]], threshold: usize) -> Option<Vec<u8>> {
        let mut values: Vec<f64> = votes.iter().filter_map(|v| parse_numeric(v)).collect();
        values.sort_by(f64::total_cmp);
        // Largest window [i, j) with values[j-1] - values[i] <= width; first wins ties.
        let mut best: Option<(usize, usize)> = None;
        let mut j = 0;
        for i in 0..values.len() {
            j = j.max(i);
            while j < values.len() && values[j] - values[i] <= self.width {
                j += 1;
            }
            if j - i >= threshold && best.is_none_or(|(a, b)| j - i > b - a) {
                best = Some((i, j));
            }
        }
        best.map(|(i, j)| format!("{}", median(&values[i..j])).into_bytes())
    }
}

/// A consolidator policy instantiated for one group.
#[derive(Clone, Debug)]
pub struct ConsolidatorPolicy {
    pub name: String,
    pub threshold: u32,
    pub matcher: Arc<dyn PayloadMatcher>,
}

pub type ThresholdFn = Arc<dyn Fn(u32, FaultModel) -> u32 + Send + Sync>;
pub type MatcherFactory =
    Arc<dyn Fn(&Value) -> Result<Arc<dyn PayloadMatcher>, String> + Send + Sync>;

/// Registry entry: threshold as a function of (f, fault model) plus a matcher
/// built from the mechanism parameters.
#[derive(Clone)]
pub struct PolicyTemplate {
    pub threshold: ThresholdFn,
    pub matcher: MatcherFactory,
}

impl PolicyTemplate {
    pub fn new<T, M>(threshold: T, matcher: M) -> Self
    where
        T: Fn(u32, FaultModel) -> u32 + Send + Sync + 'static,
        M: Fn(&Value) -> Result<Arc<dyn PayloadMatcher>, String> + Send + Sync + 'static,
    {
        PolicyTemplate {
            threshold: Arc::new(threshold),
            matcher: Arc::new(matcher),
        }
    }
}

#[derive(Clone)]
pub struct ConsolidatorRegistry {
    entries: BTreeMap<String, PolicyTemplate>,
}

impl fmt::Debug for ConsolidatorRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.entries.keys()).finish()
    }
}

impl Default for ConsolidatorRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

pub const BFT_CONSOLIDATOR: &str = "BFTConsolidator";
pub const CFT_CONSOLIDATOR: &str = "CFTConsolidator";
pub const INTERVAL_CONSOLIDATOR: &str = "IntervalConsolidator";

impl ConsolidatorRegistry {
    pub fn empty() -> Self {
        ConsolidatorRegistry {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(
            BFT_CONSOLIDATOR,
            PolicyTemplate::new(
                |f, _| f + 1,
                |_| Ok(Arc::new(ExactMatch) as Arc<dyn PayloadMatcher>),
            ),
        )
        .expect("fresh registry");
        // Crashed replicas never emit wrong output, so one vote suffices.
        r.register(
            CFT_CONSOLIDATOR,
            PolicyTemplate::new(
                |_, _| 1,
                |_| Ok(Arc::new(ExactMatch) as Arc<dyn PayloadMatcher>),
            ),
        )
        .expect("fresh registry");
        r.register(
            INTERVAL_CONSOLIDATOR,
            PolicyTemplate::new(
                |f, _| f + 1,
                |params| {
                    let width = match params.get("width") {
                        None => 0.5,
                        Some(w) => w.as_f64().ok_or("width must be a number")?,
                    };
                    if !(width >= 0.0 && width.is_finite()) {
                        return Err(format!(
                            "width must be finite and non-negative, got {width}"
                        ));
                    }
                    Ok(Arc::new(IntervalMatch { width }) as Arc<dyn PayloadMatcher>)
                },
            ),
        )
        .expect("fresh registry");
        r
    }

    pub fn register(
        &mut self,
        name: &str,
        template: PolicyTemplate,
    ) -> Result<(), ConsolidateError> {
        if self.entries.contains_key(name) {
            return Err(ConsolidateError::Duplicate(name.to_string()));
        }
        self.entries.insert(name.to_string(), template);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn policy(
        &self,
        name: &str,
        f: u32,
        model: FaultModel,
        params: &Value,
    ) -> Result<ConsolidatorPolicy, ConsolidateError> {
        let t = self
            .entries
            .get(name)
            .ok_or_else(|| ConsolidateError::Unknown(name.to_string()))?;
        let threshold = (t.threshold)(f, model);
        if threshold == 0 {
            return Err(ConsolidateError::ZeroThreshold {
                name: name.to_string(),
            });
        }
        let matcher = (t.matcher)(params).map_err(|reason| ConsolidateError::BadParams {
            name: name.to_string(),
            reason,
        })?;
        Ok(ConsolidatorPolicy {
            name: name.to_string(),
            threshold,
            matcher,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotKey {
    pub group: ComponentId,
    pub sender_port: String,
    pub seq: u64,
}

impl fmt::Display for SlotKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}#{}", self.group, self.sender_port, self.seq)
    }
}

/// Raised when all `n` votes of a slot arrived without a matching subset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub key: SlotKey,
    /// Distinct payloads among the votes, in first-seen order.
    pub classes: Vec<Vec<u8>>,
}

impl fmt::Display for MismatchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "output mismatch at {}: {} distinct payload classes",
            self.key,
            self.classes.len()
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SlotOutcome {
    /// Vote recorded, no decision yet.
    Pending,
    /// Threshold reached with this vote: deliver exactly once.
    Deliver(Vec<u8>),
    /// All votes in, no matching subset.
    Mismatch(MismatchReport),
    /// A second vote from the same replica.
    Duplicate,
    /// Vote for an already resolved slot.
    Late,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingSlot {
    pub key: SlotKey,
    pub votes: BTreeMap<u32, Vec<u8>>,
    pub delivered: bool,
    #[serde(default)]
    pub mismatched: bool,
}

impl PendingSlot {
    pub fn new(key: SlotKey) -> Self {
        PendingSlot {
            key,
            votes: BTreeMap::new(),
            delivered: false,
            mismatched: false,
        }
    }

    pub fn resolved(&self) -> bool {
        self.delivered || self.mismatched
    }

    /// Records a vote and reports whether this vote completes the slot.
    pub fn ingest(
        &mut self,
        replica: u32,
        payload: &[u8],
        policy: &ConsolidatorPolicy,
        n: u32,
    ) -> SlotOutcome {
        if self.votes.contains_key(&replica) {
            return SlotOutcome::Duplicate;
        }
        self.votes.insert(replica, payload.to_vec());
        if self.resolved() {
            return SlotOutcome::Late;
        }
        let votes: Vec<&[u8]> = self.votes.values().map(Vec::as_slice).collect();
        if let Some(p) = policy.matcher.decide(&votes, policy.threshold as usize) {
            self.delivered = true;
            return SlotOutcome::Deliver(p);
        }
        if self.votes.len() as u32 >= n {
            self.mismatched = true;
            return SlotOutcome::Mismatch(self.mismatch_report());
        }
        SlotOutcome::Pending
    }

    pub fn mismatch_report(&self) -> MismatchReport {
        let mut classes: Vec<Vec<u8>> = Vec::new();
        for v in self.votes.values() {
            if !classes.contains(v) {
                classes.push(v.clone());
            }
        }
        MismatchReport {
            key: self.key.clone(),
            classes,
        }
    }
}

/// A consolidated event ready for the receiver.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Release {
    pub port: String,
    pub seq: u64,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
struct StreamState {
    next: u64,
    highest: Option<u64>,
    /// Resolved slots waiting for earlier ones; `None` marks a skipped slot.
    ready: BTreeMap<u64, Option<Vec<u8>>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
struct ConsolidatorState {
    slots: BTreeMap<(String, u64), PendingSlot>,
    streams: BTreeMap<String, StreamState>,
    delivered: u64,
}

/// Consolidation state for one (source group, receiver) pair.
#[derive(Debug, Clone)]
pub struct Consolidator {
    group: ComponentId,
    n: u32,
    policy: ConsolidatorPolicy,
    retention: u64,
    state: ConsolidatorState,
    reports: Vec<MismatchReport>,
}

impl Consolidator {
    pub fn new(group: ComponentId, n: u32, policy: ConsolidatorPolicy) -> Self {
        Consolidator {
            group,
            n,
            policy,
            retention: DEFAULT_RETENTION,
            state: ConsolidatorState::default(),
            reports: Vec::new(),
        }
    }

    pub fn with_retention(mut self, retention: u64) -> Self {
        self.retention = retention.max(1);
        self
    }

    pub fn policy(&self) -> &ConsolidatorPolicy {
        &self.policy
    }

    pub fn delivered_count(&self) -> u64 {
        self.state.delivered
    }

    pub fn open_slots(&self) -> usize {
        self.state.slots.len()
    }

    pub fn take_reports(&mut self) -> Vec<MismatchReport> {
        std::mem::take(&mut self.reports)
    }

    /// Ingests one replica output event and returns the events that become
    /// releasable, in stream order.
    pub fn ingest(&mut self, event: &Event) -> Vec<Release> {
        let Some(replica) = event.origin_replica.filter(|r| *r < self.n) else {
            return Vec::new();
        };
        let port = event.sender_port.clone();
        let stream = self.state.streams.entry(port.clone()).or_default();
        if event.seq < stream.next || stream.ready.contains_key(&event.seq) {
            // Slot already released or resolved; drop the vote and collect
            // the slot once all replicas have voted.
            if let Some(slot) = self.state.slots.get_mut(&(port.clone(), event.seq)) {
                slot.votes
                    .entry(replica)
                    .or_insert_with(|| event.payload.clone());
                if slot.votes.len() as u32 >= self.n {
                    self.state.slots.remove(&(port, event.seq));
                }
            }
            return Vec::new();
        }
        stream.highest = Some(stream.highest.map_or(event.seq, |h| h.max(event.seq)));
        let key = (port.clone(), event.seq);
        let slot = self.state.slots.entry(key.clone()).or_insert_with(|| {
            PendingSlot::new(SlotKey {
                group: self.group.clone(),
                sender_port: port.clone(),
                seq: event.seq,
            })
        });
        let outcome = slot.ingest(replica, &event.payload, &self.policy, self.n);
        let complete = slot.votes.len() as u32 >= self.n;
        match outcome {
            SlotOutcome::Deliver(p) => {
                stream.ready.insert(event.seq, Some(p));
            }
            SlotOutcome::Mismatch(r) => {
                self.reports.push(r);
                stream.ready.insert(event.seq, None);
            }
            _ => {}
        }
        if complete && slot.resolved() {
            self.state.slots.remove(&key);
        }
        self.release(&port)
    }

    fn release(&mut self, port: &str) -> Vec<Release> {
        let stream = self.state.streams.get_mut(port).expect("stream exists");
        let mut out = Vec::new();
        // Give up on a stalled head slot once it falls behind the retention horizon.
        if let Some(h) = stream.highest {
            while h.saturating_sub(stream.next) >= self.retention
                && !stream.ready.contains_key(&stream.next)
            {
                self.state.slots.remove(&(port.to_string(), stream.next));
                stream.next += 1;
            }
        }
        while let Some(entry) = stream.ready.remove(&stream.next) {
            if let Some(payload) = entry {
                out.push(Release {
                    port: port.to_string(),
                    seq: stream.next,
                    payload,
                });
                self.state.delivered += 1;
            }
            stream.next += 1;
        }
        let horizon = stream.next.saturating_sub(self.retention);
        self.state
            .slots
            .retain(|(p, seq), _| p != port || *seq >= horizon);
        out
    }
}

/// Parameters of a consolidator component, stored in its [`BehaviorSpec`](crate::model::BehaviorSpec).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsolidatorParams {
    pub group: ComponentId,
    pub n: u32,
    pub f: u32,
    pub fault_model: FaultModel,
    pub policy: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub policy_params: Value,
}

/// Runs a [`Consolidator`] as a component of the unit it is placed on.
#[derive(Debug)]
pub struct ConsolidatorBehavior {
    inner: Consolidator,
}

impl ConsolidatorBehavior {
    pub fn from_spec(spec: &ComponentSpec) -> Result<Self, BehaviorError> {
        Self::from_spec_with(spec, &ConsolidatorRegistry::with_builtins())
    }

    pub fn from_spec_with(
        spec: &ComponentSpec,
        registry: &ConsolidatorRegistry,
    ) -> Result<Self, BehaviorError> {
        let bad = |reason: String| BehaviorError::BadParams {
            kind: "consolidator".into(),
            reason,
        };
        let params: ConsolidatorParams =
            serde_json::from_value(spec.behavior.params.clone()).map_err(|e| bad(e.to_string()))?;
        let policy = registry
            .policy(
                &params.policy,
                params.f,
                params.fault_model,
                &params.policy_params,
            )
            .map_err(|e| bad(e.to_string()))?;
        Ok(ConsolidatorBehavior {
            inner: Consolidator::new(params.group, params.n, policy),
        })
    }

    pub fn consolidator(&self) -> &Consolidator {
        &self.inner
    }
}

impl Behavior for ConsolidatorBehavior {
    fn step(&mut self, _port: &str, event: &Event) -> Vec<Emission> {
        self.inner
            .ingest(event)
            .into_iter()
            .map(|r| Emission::new(r.port, r.payload))
            .collect()
    }

    fn snapshot(&self) -> ComponentState {
        ComponentState(serde_json::to_vec(&self.inner.state).expect("state serializes"))
    }

    fn restore(&mut self, state: &ComponentState) -> Result<(), String> {
        if state.0.is_empty() {
            self.inner.state = ConsolidatorState::default();
            return Ok(());
        }
        self.inner.state = serde_json::from_slice(&state.0).map_err(|e| e.to_string())?;
        Ok(())
    }

    fn drain_diagnostics(&mut self) -> Vec<String> {
        self.inner
            .take_reports()
            .into_iter()
            .map(|r| r.to_string())
            .collect()
    }
}

/// Distinct groups of identical payloads, for diagnostics and tests.
pub fn payload_classes(votes: &[&[u8]]) -> BTreeSet<Vec<u8>> {
    votes.iter().map(|v| v.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bft(f: u32) -> ConsolidatorPolicy {
        ConsolidatorRegistry::with_builtins()
            .policy(BFT_CONSOLIDATOR, f, FaultModel::Bft, &Value::Null)
            .unwrap()
    }

    fn key() -> SlotKey {
        SlotKey {
            group: "B".into(),
            sender_port: "out".into(),
            seq: 0,
        }
    }

    fn vote(replica: u32, seq: u64, payload: &[u8]) -> Event {
        Event {
            sender: "B".into(),
            sender_port: "out".into(),
            seq,
            payload: payload.to_vec(),
            origin_replica: Some(replica),
        }
    }

    #[test]
    fn bft_threshold_is_f_plus_one() {
        for f in 0..5 {
            assert_eq!(bft(f).threshold, f + 1);
        }
        let cft = ConsolidatorRegistry::with_builtins()
            .policy(CFT_CONSOLIDATOR, 1, FaultModel::Cft, &Value::Null)
            .unwrap();
        assert_eq!(cft.threshold, 1);
    }

    #[test]
    fn delivers_at_second_match_then_ignores() {
        let mut slot = PendingSlot::new(key());
        let p = bft(1);
        assert_eq!(slot.ingest(0, b"P", &p, 4), SlotOutcome::Pending);
        assert_eq!(
            slot.ingest(1, b"P", &p, 4),
            SlotOutcome::Deliver(b"P".to_vec())
        );
        assert_eq!(slot.ingest(2, b"P", &p, 4), SlotOutcome::Late);
        assert_eq!(slot.ingest(3, b"P", &p, 4), SlotOutcome::Late);
        assert_eq!(slot.ingest(3, b"P", &p, 4), SlotOutcome::Duplicate);
    }

    #[test]
    fn minority_does_not_block() {
        let mut slot = PendingSlot::new(key());
        let p = bft(1);
        assert_eq!(slot.ingest(0, b"P", &p, 4), SlotOutcome::Pending);
        assert_eq!(slot.ingest(1, b"Q", &p, 4), SlotOutcome::Pending);
        assert_eq!(
            slot.ingest(2, b"P", &p, 4),
            SlotOutcome::Deliver(b"P".to_vec())
        );
    }

    #[test]
    fn cft_delivers_first_vote() {
        let p = ConsolidatorRegistry::with_builtins()
            .policy(CFT_CONSOLIDATOR, 1, FaultModel::Cft, &Value::Null)
            .unwrap();
        let mut slot = PendingSlot::new(key());
        assert_eq!(
            slot.ingest(0, b"P", &p, 3),
            SlotOutcome::Deliver(b"P".to_vec())
        );
        assert_eq!(slot.ingest(1, b"P", &p, 3), SlotOutcome::Late);
    }

    #[test]
    fn all_distinct_is_a_mismatch() {
        let p = bft(1);
        let mut slot = PendingSlot::new(key());
        for (i, v) in [b"P", b"Q", b"R"].iter().enumerate() {
            assert_eq!(slot.ingest(i as u32, *v, &p, 4), SlotOutcome::Pending);
        }
        match slot.ingest(3, b"S", &p, 4) {
            SlotOutcome::Mismatch(r) => {
                assert_eq!(r.classes.len(), 4);
                assert_eq!(r.key, key());
            }
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn single_replica_never_mismatches() {
        let p = bft(0);
        let mut slot = PendingSlot::new(key());
        assert_eq!(
            slot.ingest(0, b"anything", &p, 1),
            SlotOutcome::Deliver(b"anything".to_vec())
        );
    }

    fn interval(width: f64) -> ConsolidatorPolicy {
        ConsolidatorRegistry::with_builtins()
            .policy(
                INTERVAL_CONSOLIDATOR,
                1,
                FaultModel::Bft,
                &serde_json::json!({ "width": width }),
            )
            .unwrap()
    }

    #[test]
    fn interval_delivers_median() {
        let p = interval(0.5);
        let mut slot = PendingSlot::new(key());
        assert_eq!(slot.ingest(0, b"3.00", &p, 4), SlotOutcome::Pending);
        match slot.ingest(1, b"3.20", &p, 4) {
            SlotOutcome::Deliver(v) => assert!((parse_numeric(&v).unwrap() - 3.10).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn interval_skips_outlier() {
        let p = interval(0.5);
        let mut slot = PendingSlot::new(key());
        assert_eq!(slot.ingest(0, b"3.0", &p, 4), SlotOutcome::Pending);
        assert_eq!(slot.ingest(1, b"9.0", &p, 4), SlotOutcome::Pending);
        match slot.ingest(2, b"3.1", &p, 4) {
            SlotOutcome::Deliver(v) => assert!((parse_numeric(&v).unwrap() - 3.05).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_registration_rejected() {
        let mut r = ConsolidatorRegistry::with_builtins();
        let t = PolicyTemplate::new(
            |f, _| f + 1,
            |_| Ok(Arc::new(ExactMatch) as Arc<dyn PayloadMatcher>),
        );
        assert_eq!(
            r.register(BFT_CONSOLIDATOR, t.clone()),
            Err(ConsolidateError::Duplicate(BFT_CONSOLIDATOR.into()))
        );
        assert!(r.register("Majority", t).is_ok());
        assert!(r.contains("Majority"));
    }

    #[test]
    fn zero_threshold_rejected() {
        let mut r = ConsolidatorRegistry::empty();
        r.register(
            "Zero",
            PolicyTemplate::new(
                |_, _| 0,
                |_| Ok(Arc::new(ExactMatch) as Arc<dyn PayloadMatcher>),
            ),
        )
        .unwrap();
        assert!(matches!(
            r.policy("Zero", 1, FaultModel::Bft, &Value::Null),
            Err(ConsolidateError::ZeroThreshold { .. })
        ));
    }

    #[test]
    fn releases_in_seq_order() {
        let mut c = Consolidator::new("B".into(), 4, bft(1));
        assert!(c.ingest(&vote(0, 1, b"b")).is_empty());
        assert!(
            c.ingest(&vote(1, 1, b"b")).is_empty(),
            "seq 1 held back until seq 0"
        );
        assert!(c.ingest(&vote(0, 0, b"a")).is_empty());
        let out = c.ingest(&vote(2, 0, b"a"));
        assert_eq!(
            out.iter()
                .map(|r| (r.seq, r.payload.clone()))
                .collect::<Vec<_>>(),
            vec![(0, b"a".to_vec()), (1, b"b".to_vec())]
        );
    }

    #[test]
    fn mismatch_skips_slot_and_reports() {
        let mut c = Consolidator::new("B".into(), 4, bft(1));
        for (r, v) in [(0, b"P"), (1, b"Q"), (2, b"R"), (3, b"S")] {
            assert!(c.ingest(&vote(r, 0, v)).is_empty());
        }
        assert_eq!(c.take_reports().len(), 1);
        c.ingest(&vote(0, 1, b"x"));
        assert_eq!(c.ingest(&vote(1, 1, b"x")).len(), 1);
    }

    #[test]
    fn slots_collected_after_all_votes() {
        let mut c = Consolidator::new("B".into(), 4, bft(1));
        for seq in 0..100 {
            for r in 0..4 {
                c.ingest(&vote(r, seq, b"p"));
            }
        }
        assert_eq!(c.open_slots(), 0);
        assert_eq!(c.delivered_count(), 100);
    }

    #[test]
    fn stalled_slot_dropped_after_retention() {
        let mut c = Consolidator::new("B".into(), 4, bft(1)).with_retention(10);
        c.ingest(&vote(0, 0, b"lonely"));
        let mut released = 0;
        for seq in 1..=20 {
            released += c.ingest(&vote(0, seq, b"p")).len();
            released += c.ingest(&vote(1, seq, b"p")).len();
        }
        assert!(
            released >= 10,
            "stream resumed after horizon, got {released}"
        );
        assert!(c.open_slots() <= 11);
    }

    #[test]
    fn votes_without_origin_are_ignored() {
        let mut c = Consolidator::new("B".into(), 4, bft(0));
        let mut e = vote(0, 0, b"p");
        e.origin_replica = None;
        assert!(c.ingest(&e).is_empty());
        e.origin_replica = Some(9);
        assert!(c.ingest(&e).is_empty());
    }
}
