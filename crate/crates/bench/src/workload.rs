//! The benchmark application: a closed-loop load generator, a forwarding
//! processor and a reporter that feeds every event back to the generator.

use repli_core::architecture::{parse_resilience_config, Connection, Endpoint, Lsa, Technology};
use repli_core::consolidate::ConsolidatorRegistry;
use repli_core::model::{
    Behavior, BehaviorError, BehaviorRegistry, BehaviorSpec, ComponentId, ComponentSpec,
    ComponentState, Emission, Event, Forward, UnitId, UnitSpec,
};
use repli_core::transform::{setup_replication, PlacementHints, Resa, TransformError};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const LOADGEN: &str = "loadgen";
pub const PROCESSOR: &str = "processor";
pub const REPORTER: &str = "reporter";
pub const DEFAULT_PAYLOAD: usize = 150;

/// Event payload: big-endian event id followed by filler up to `size` bytes.
pub fn encode_payload(id: u64, size: usize) -> Vec<u8> {
    let mut p = id.to_be_bytes().to_vec();
    p.extend((8..size.max(8)).map(|i| b'a' + (i % 26) as u8));
    p
}

pub fn payload_id(payload: &[u8]) -> Option<u64> {
    payload
        .get(..8)
        .map(|b| u64::from_be_bytes(b.try_into().expect("8 bytes")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pacing {
    /// Every fed-back event releases a new one.
    Closed,
    /// New events are released by credits; `backlog` caps the events in flight.
    Credit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LoadGenParams {
    pub backlog: u64,
    pub total: u64,
    #[serde(default = "default_payload")]
    pub payload_bytes: usize,
    #[serde(default = "closed")]
    pub pacing: Pacing,
}

fn default_payload() -> usize {
    DEFAULT_PAYLOAD
}

fn closed() -> Pacing {
    Pacing::Closed
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
struct LoadGenState {
    next: u64,
    in_flight: u64,
}

/// Ports: `start`, `credit`, `feedback` in; `out` out.
#[derive(Debug, Clone)]
pub struct LoadGen {
    params: LoadGenParams,
    state: LoadGenState,
}

impl LoadGen {
    pub fn new(params: LoadGenParams) -> Self {
        LoadGen {
            params,
            state: LoadGenState::default(),
        }
    }

    fn release(&mut self, mut count: u64) -> Vec<Emission> {
        let mut out = Vec::new();
        while count > 0
            && self.state.next < self.params.total
            && self.state.in_flight < self.params.backlog
        {
            out.push(Emission::new(
                "out",
                encode_payload(self.state.next, self.params.payload_bytes),
            ));
            self.state.next += 1;
            self.state.in_flight += 1;
            count -= 1;
        }
        out
    }
}

impl Behavior for LoadGen {
    fn step(&mut self, port: &str, event: &Event) -> Vec<Emission> {
        match (port, self.params.pacing) {
            ("start", Pacing::Closed) => self.release(self.params.backlog),
            ("credit", Pacing::Credit) => {
                let n = std::str::from_utf8(&event.payload)
                    .ok()
                    .and_then(|s| s.parse().ok())
                    .unwrap_or(0);
                self.release(n)
            }
            ("feedback", pacing) => {
                self.state.in_flight = self.state.in_flight.saturating_sub(1);
                if pacing == Pacing::Closed {
                    self.release(1)
                } else {
                    Vec::new()
                }
            }
            _ => Vec::new(),
        }
    }

    fn snapshot(&self) -> ComponentState {
        ComponentState(bincode::serialize(&self.state).expect("state serializes"))
    }

    fn restore(&mut self, state: &ComponentState) -> Result<(), String> {
        self.state = bincode::deserialize(&state.0).map_err(|e| e.to_string())?;
        Ok(())
    }
}

/// Counts events and feeds each one back unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct Reporter {
    count: u64,
}

impl Behavior for Reporter {
    fn step(&mut self, _port: &str, event: &Event) -> Vec<Emission> {
        self.count += 1;
        vec![Emission::new("out", event.payload.clone())]
    }

    fn snapshot(&self) -> ComponentState {
        ComponentState::from_u64(self.count)
    }

    fn restore(&mut self, state: &ComponentState) -> Result<(), String> {
        self.count = state.as_u64().ok_or("reporter state must be 8 bytes")?;
        Ok(())
    }
}

/// Built-in behaviors plus `loadgen`, `processor` and `reporter`.
pub fn registry() -> BehaviorRegistry {
    let mut r = BehaviorRegistry::with_builtins();
    r.register_fn(LOADGEN, |spec| {
        let params: LoadGenParams =
            serde_json::from_value(spec.behavior.params.clone()).map_err(|e| {
                BehaviorError::BadParams {
                    kind: LOADGEN.into(),
                    reason: e.to_string(),
                }
            })?;
        Ok(Box::new(LoadGen::new(params)) as Box<dyn Behavior>)
    });
    r.register_fn(PROCESSOR, |spec| {
        Ok(Box::new(Forward::for_spec(spec)) as Box<dyn Behavior>)
    });
    r.register_fn(REPORTER, |_| {
        Ok(Box::new(Reporter::default()) as Box<dyn Behavior>)
    });
    r
}

pub fn unit_of(component: &str) -> UnitId {
    UnitId(format!("unit-{component}"))
}

/// loadgen → processor → reporter → loadgen, one unit each.
pub fn topology(params: &LoadGenParams) -> Lsa {
    let loadgen = ComponentSpec::new(LOADGEN, BehaviorSpec::with_params(LOADGEN, json!(params)))
        .with_input("start")
        .with_input("credit")
        .with_input("feedback")
        .with_output("out");
    let processor = ComponentSpec::new(PROCESSOR, BehaviorSpec::new(PROCESSOR))
        .with_input("in")
        .with_output("out");
    let reporter = ComponentSpec::new(REPORTER, BehaviorSpec::new(REPORTER))
        .with_input("in")
        .with_output("out");
    let link = |a: &str, b: &str, port: &str| {
        Connection::new(
            Endpoint::new(a, "out"),
            Endpoint::new(b, port),
            Technology::Local,
        )
    };
    let mut lsa = Lsa {
        components: vec![loadgen, processor, reporter],
        connections: vec![
            link(LOADGEN, PROCESSOR, "in"),
            link(PROCESSOR, REPORTER, "in"),
            link(REPORTER, LOADGEN, "feedback"),
        ],
        units: [LOADGEN, PROCESSOR, REPORTER]
            .iter()
            .map(|c| UnitSpec {
                id: unit_of(c),
                components: vec![ComponentId::new(*c)],
            })
            .collect(),
    };
    lsa.normalize_technology();
    lsa
}

/// The topology as deployed: plain, or with the processor replicated (f=1, BFT).
pub fn deployed(params: &LoadGenParams, replicated: bool) -> Result<Resa, TransformError> {
    let lsa = topology(params);
    let text = format!(
        r#"{{"components":[{{"id":"{PROCESSOR}","mechanisms":{{"activeReplication":{{"enabled":{replicated},"f":1,"faultModel":"BFT","consolidator":"BFTConsolidator"}}}}}}]}}"#
    );
    let reg = ConsolidatorRegistry::with_builtins();
    let cfg = parse_resilience_config(text.as_bytes(), &reg).expect("static config parses");
    setup_replication(&lsa, &cfg, &PlacementHints::new(), &reg)
}
