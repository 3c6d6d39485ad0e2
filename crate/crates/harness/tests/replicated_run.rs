use std::sync::{Arc, Mutex};

use repli_core::architecture::{parse_resilience_config, Connection, Endpoint, Lsa, Technology};
use repli_core::auth::KeyedHash;
use repli_core::consolidate::ConsolidatorRegistry;
use repli_core::model::{
    BehaviorRegistry, BehaviorSpec, ComponentId, ComponentSpec, Delivery, UnitId, UnitSpec,
};
use repli_core::transform::{setup_replication, PlacementHints, Resa};
use repli_harness::runner::Cluster;
use repli_harness::sim::audit_delivery_bound;
use repli_harness::unit_node::{build_nodes, Probe, ScheduledInput, Timing, UnitNode};
use repli_harness::{FaultScript, PreGst, Sim, SimConfig};
use repli_order::ByzantineMode;

/// Records what the sink receives, in order.
#[derive(Default)]
struct SinkLog(Vec<Vec<u8>>);

impl Probe for SinkLog {
    fn delivered(&mut self, _now: u64, _unit: &UnitId, d: &Delivery) {
        if d.target.as_str() == "C" {
            self.0.push(d.event.payload.clone());
        }
    }
}

fn pipeline(f: u32) -> Resa {
    let comp = |id: &str, kind: &str| {
        ComponentSpec::new(id, BehaviorSpec::new(kind))
            .with_input("in")
            .with_output("out")
    };
    let mut lsa = Lsa {
        components: vec![
            comp("A", "forward"),
            comp("B", "numbering"),
            comp("C", "sink"),
        ],
        connections: vec![
            Connection::new(
                Endpoint::new("A", "out"),
                Endpoint::new("B", "in"),
                Technology::Local,
            ),
            Connection::new(
                Endpoint::new("B", "out"),
                Endpoint::new("C", "in"),
                Technology::Local,
            ),
        ],
        units: ["a", "b", "c"]
            .iter()
            .map(|u| UnitSpec {
                id: UnitId(format!("unit-{u}")),
                components: vec![ComponentId::new(u.to_uppercase())],
            })
            .collect(),
    };
    lsa.normalize_technology();
    let text = format!(
        r#"{{"components":[{{"id":"B","mechanisms":{{"activeReplication":{{"enabled":true,"f":{f},"faultModel":"BFT","consolidator":"BFTConsolidator"}}}}}}]}}"#
    );
    let reg = ConsolidatorRegistry::with_builtins();
    let cfg = parse_resilience_config(text.as_bytes(), &reg).unwrap();
    setup_replication(&lsa, &cfg, &PlacementHints::new(), &reg).unwrap()
}

fn expected(count: usize) -> Vec<Vec<u8>> {
    (1..=count).map(|i| i.to_string().into_bytes()).collect()
}

fn nodes(
    resa: &Resa,
    timing: Timing,
    log: &Arc<Mutex<SinkLog>>,
    inputs: usize,
    spacing: u64,
) -> Vec<(String, UnitNode)> {
    let mut nodes = build_nodes(
        resa,
        &BehaviorRegistry::with_builtins(),
        Arc::new(KeyedHash::from_seed(1)),
        timing,
    )
    .unwrap();
    for (name, node) in &mut nodes {
        node.set_probe(log.clone());
        if name == "unit-a" {
            for i in 0..inputs {
                node.add_input(ScheduledInput {
                    tick: 1 + i as u64 * spacing,
                    target: ComponentId::new("A"),
                    port: "in".into(),
                    payload: vec![i as u8],
                });
            }
        }
    }
    nodes
}

fn simulate(
    cfg: SimConfig,
    script: FaultScript,
    inputs: usize,
    limit: u64,
) -> (Vec<Vec<u8>>, Sim<UnitNode>) {
    let resa = pipeline(1);
    let log = Arc::new(Mutex::new(SinkLog::default()));
    let mut sim = Sim::new(
        nodes(&resa, Timing::Simulated, &log, inputs, 2),
        cfg,
        &script,
    )
    .unwrap();
    sim.run_while(limit, |_| log.lock().unwrap().0.len() >= inputs);
    sim.run_until(sim.now() + 50);
    let got = log.lock().unwrap().0.clone();
    (got, sim)
}

#[test]
fn fault_free_run_delivers_each_output_once_in_order() {
    let (got, sim) = simulate(SimConfig::synchronous(3), FaultScript::none(), 20, 2000);
    assert_eq!(got, expected(20));
    let b0 = sim.node(sim.node_index("unit-b0").unwrap());
    assert_eq!(
        b0.replica(&ComponentId::new("B"))
            .unwrap()
            .log()
            .request_count(),
        20
    );
}

#[test]
fn one_corrupting_replica_is_masked() {
    for mode in [
        ByzantineMode::FlipPayloadByte,
        ByzantineMode::Mute,
        ByzantineMode::WrongDigestVote,
        ByzantineMode::EquivocatePropose,
    ] {
        for faulty in ["unit-b0", "unit-b2"] {
            let script = FaultScript::none().byzantine(faulty, mode, 0, 100_000);
            let (got, _) = simulate(SimConfig::synchronous(4), script, 12, 4000);
            assert_eq!(got, expected(12), "{mode} at {faulty}");
        }
    }
}

#[test]
fn leader_crash_is_survived() {
    let script = FaultScript::none().crash("unit-b0", 10);
    let (got, sim) = simulate(SimConfig::synchronous(5), script, 15, 4000);
    assert_eq!(got, expected(15));
    let b1 = sim.node(sim.node_index("unit-b1").unwrap());
    assert!(b1.replica(&ComponentId::new("B")).unwrap().view() >= 1);
}

fn async_cfg(seed: u64) -> SimConfig {
    SimConfig {
        seed,
        gst_tick: 150,
        delta_bound: 3,
        pre_gst: PreGst {
            drop_probability: 0.1,
            max_delay: 12,
        },
        partitions: Vec::new(),
    }
}

#[test]
fn same_seed_gives_identical_trace() {
    let (a_out, a) = simulate(
        async_cfg(77),
        FaultScript::none().crash("unit-b3", 40),
        10,
        3000,
    );
    let (b_out, b) = simulate(
        async_cfg(77),
        FaultScript::none().crash("unit-b3", 40),
        10,
        3000,
    );
    assert_eq!(a_out, b_out);
    assert_eq!(a.trace_dump(), b.trace_dump());
    let (_, c) = simulate(
        async_cfg(78),
        FaultScript::none().crash("unit-b3", 40),
        10,
        3000,
    );
    assert_ne!(a.trace_dump(), c.trace_dump());
}

#[test]
fn asynchrony_and_crash_still_deliver_within_bound_after_gst() {
    let cfg = async_cfg(9);
    let (got, sim) = simulate(
        cfg.clone(),
        FaultScript::none().crash("unit-b1", 30),
        10,
        5000,
    );
    assert_eq!(got, expected(10));
    let late = audit_delivery_bound(sim.trace(), cfg.gst_tick, cfg.delta_bound, sim.now());
    assert!(late.is_empty(), "late messages: {late:?}");
}

#[test]
fn replicated_pipeline_over_sockets() {
    let resa = pipeline(1);
    let log = Arc::new(Mutex::new(SinkLog::default()));
    let nodes: Vec<UnitNode> = nodes(&resa, Timing::Realtime, &log, 10, 5)
        .into_iter()
        .map(|(_, n)| n)
        .collect();
    let cluster = Cluster::start(nodes).unwrap();
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(30);
    while log.lock().unwrap().0.len() < 10 && std::time::Instant::now() < deadline {
        std::thread::sleep(std::time::Duration::from_millis(20));
    }
    cluster.stop();
    assert_eq!(log.lock().unwrap().0, expected(10));
}

#[test]
fn lossy_links_lose_no_events_between_units() {
    let cfg = SimConfig {
        seed: 12,
        gst_tick: 300,
        delta_bound: 3,
        pre_gst: PreGst {
            drop_probability: 0.4,
            max_delay: 10,
        },
        partitions: Vec::new(),
    };
    let (got, sim) = simulate(cfg, FaultScript::none(), 15, 8000);
    assert_eq!(got, expected(15));
    assert!(sim.stats().dropped > 0);
}
