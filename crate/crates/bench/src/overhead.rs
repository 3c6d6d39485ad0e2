//! Replication overhead: closed-loop runs of the benchmark topology over a
//! sweep of backlog sizes, with and without a replicated processor.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use repli_core::auth::KeyedHash;
use repli_core::model::ComponentId;
use repli_core::transform::Resa;
use repli_harness::runner::Cluster;
use repli_harness::unit_node::{build_nodes, ScheduledInput, SharedProbe, Timing, UnitNode};
use repli_harness::{FaultScript, Sim, SimConfig};

use crate::metrics::{summarize, Clock, EventLog, Summary};
use crate::workload::{deployed, registry, unit_of, LoadGenParams, Pacing, LOADGEN};
use crate::BenchError;

pub const DEFAULT_BACKLOGS: [u64; 7] = [1, 5, 10, 25, 50, 100, 200];
pub const DEFAULT_EVENTS: u64 = 10_000;

/// Where units run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Sim { seed: u64 },
    Sockets,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverheadPoint {
    pub backlog: u64,
    pub replicated: bool,
    pub summary: Summary,
    pub delivered: u64,
}

/// Builds the unit nodes of `resa` with `log` attached as probe.
pub(crate) fn instrumented_nodes(
    resa: &Resa,
    seed: u64,
    timing: Timing,
    log: &Arc<Mutex<EventLog>>,
) -> Result<Vec<(String, UnitNode)>, BenchError> {
    let mut nodes = build_nodes(
        resa,
        &registry(),
        Arc::new(KeyedHash::from_seed(seed)),
        timing,
    )?;
    let probe: SharedProbe = log.clone();
    for (_, n) in &mut nodes {
        n.set_probe(probe.clone());
    }
    Ok(nodes)
}

fn start_input(nodes: &mut [(String, UnitNode)]) {
    let loadgen = unit_of(LOADGEN).to_string();
    for (_, n) in nodes.iter_mut().filter(|(name, _)| *name == loadgen) {
        n.add_input(ScheduledInput {
            tick: 1,
            target: ComponentId::new(LOADGEN),
            port: "start".into(),
            payload: Vec::new(),
        });
    }
}

/// Fails on any lost or duplicated event.
pub(crate) fn check_conservation(log: &EventLog) -> Result<(), BenchError> {
    let missing = log.missing();
    if !missing.is_empty() || log.duplicates > 0 || log.stray > 0 {
        return Err(BenchError::Loss {
            missing,
            duplicates: log.duplicates,
        });
    }
    Ok(())
}

/// Runs `k` events through the loop with `backlog` in flight.
pub fn run_point(
    backlog: u64,
    k: u64,
    replicated: bool,
    payload_bytes: usize,
    backend: Backend,
) -> Result<OverheadPoint, BenchError> {
    let params = LoadGenParams {
        backlog,
        total: k,
        payload_bytes,
        pacing: Pacing::Closed,
    };
    let resa = deployed(&params, replicated)?;
    let log = match backend {
        Backend::Sim { seed } => {
            let log = Arc::new(Mutex::new(EventLog::new(k, Clock::Ticks)));
            let mut nodes = instrumented_nodes(&resa, seed, Timing::Simulated, &log)?;
            start_input(&mut nodes);
            let mut sim = Sim::new(nodes, SimConfig::synchronous(seed), &FaultScript::none())?
                .without_trace();
            let limit = 1000 + 100 * k;
            sim.run_while(limit, |_| {
                log.lock().expect("probe lock").returned_count >= k
            });
            log
        }
        Backend::Sockets => {
            let log = Arc::new(Mutex::new(EventLog::new(k, Clock::Wall(Instant::now()))));
            let mut nodes = instrumented_nodes(&resa, 1, Timing::Realtime, &log)?;
            start_input(&mut nodes);
            let cluster = Cluster::start(nodes.into_iter().map(|(_, n)| n).collect())?;
            let deadline = Instant::now() + Duration::from_secs(60 + k / 20);
            while log.lock().expect("probe lock").returned_count < k && Instant::now() < deadline {
                std::thread::sleep(Duration::from_millis(5));
            }
            cluster.stop();
            log
        }
    };
    let log = log.lock().expect("probe lock");
    if log.returned_count < k {
        return Err(BenchError::Incomplete {
            done: log.returned_count,
            total: k,
        });
    }
    check_conservation(&log)?;
    let summary = summarize(&log, backlog).ok_or(BenchError::EmptySeries)?;
    Ok(OverheadPoint {
        backlog,
        replicated,
        summary,
        delivered: log.reported_count(),
    })
}

pub fn run_sweep(
    backlogs: &[u64],
    k: u64,
    replicated: bool,
    payload_bytes: usize,
    backend: Backend,
) -> Result<Vec<OverheadPoint>, BenchError> {
    backlogs
        .iter()
        .map(|b| run_point(*b, k, replicated, payload_bytes, backend))
        .collect()
}
