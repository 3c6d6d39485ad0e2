//! Leader failure: a steady paced workload through the replicated topology,
//! with the ordering leader (or, as a control, a backup) crashed mid-run.

use std::sync::{Arc, Mutex};

use repli_core::model::ComponentId;
use repli_harness::unit_node::{Ticker, Timing};
use repli_harness::{FaultScript, Sim, SimConfig};
use repli_order::TICK_MS;

use crate::metrics::{recovery, windowed_rate, Clock, EventLog, Recovery};
use crate::overhead::{check_conservation, instrumented_nodes};
use crate::workload::{deployed, unit_of, LoadGenParams, Pacing, LOADGEN, PROCESSOR};
use crate::BenchError;

#[derive(Clone, Debug, PartialEq)]
pub struct LeaderFailureParams {
    /// Offered load in events per second.
    pub workload: u64,
    pub crash_at_s: u64,
    pub duration_s: u64,
    pub seed: u64,
    /// Crash the leader of view 0; otherwise crash replica 1.
    pub crash_leader: bool,
    pub payload_bytes: usize,
}

impl Default for LeaderFailureParams {
    fn default() -> Self {
        LeaderFailureParams {
            workload: 50,
            crash_at_s: 18,
            duration_s: 60,
            seed: 1,
            crash_leader: true,
            payload_bytes: 150,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeaderFailureReport {
    pub crashed_unit: String,
    /// Events per second at the reporter, one entry per second.
    pub rates: Vec<f64>,
    pub recovery: Recovery,
    /// Time from the crash to the delivery that ends the longest
    /// post-crash gap.
    pub outage_s: f64,
    /// Mean loop latency of events emitted in the seconds before the crash.
    pub pre_crash_latency_ms: f64,
    pub peak_latency_ms: f64,
    /// View-change timeout of the ordering group, in seconds.
    pub t_lead_s: f64,
    pub emitted: u64,
    pub delivered: u64,
}

impl LeaderFailureReport {
    /// Seconds from the crash until throughput is back near its old level.
    pub fn recovery_s(&self, crash_at_s: u64) -> Option<f64> {
        self.recovery
            .recovered_window
            .map(|w| w as f64 - crash_at_s as f64)
    }
}

pub fn run_leader_failure(p: &LeaderFailureParams) -> Result<LeaderFailureReport, BenchError> {
    let per_tick = p.workload * TICK_MS;
    if !per_tick.is_multiple_of(1000) || per_tick == 0 {
        return Err(BenchError::BadParams(format!(
            "workload {} op/s is not a whole number of events per tick",
            p.workload
        )));
    }
    if p.crash_at_s >= p.duration_s {
        return Err(BenchError::BadParams(
            "crash must happen before the end of the run".into(),
        ));
    }
    let credits = per_tick / 1000;
    let total = p.workload * p.duration_s;
    let params = LoadGenParams {
        backlog: p.workload * 10,
        total,
        payload_bytes: p.payload_bytes,
        pacing: Pacing::Credit,
    };
    let resa = deployed(&params, true)?;
    let group = ComponentId::new(PROCESSOR);
    let victim = resa
        .proxy_of(&group, if p.crash_leader { 0 } else { 1 })
        .expect("replicated processor")
        .on_unit
        .to_string();
    let t_lead_ticks = Timing::Simulated
        .order_config(resa.group(&group).expect("group"))
        .view_timeout;

    let log = Arc::new(Mutex::new(EventLog::new(total, Clock::Ticks)));
    let mut nodes = instrumented_nodes(&resa, p.seed, Timing::Simulated, &log)?;
    let loadgen = unit_of(LOADGEN).to_string();
    for (_, n) in nodes.iter_mut().filter(|(name, _)| *name == loadgen) {
        n.add_ticker(Ticker {
            every: 1,
            target: ComponentId::new(LOADGEN),
            port: "credit".into(),
            payload: credits.to_string().into_bytes(),
        });
    }
    let ticks_per_s = 1000 / TICK_MS;
    let script = FaultScript::none().crash(&victim, p.crash_at_s * ticks_per_s);
    let mut sim = Sim::new(nodes, SimConfig::synchronous(p.seed), &script)?.without_trace();
    let end = p.duration_s * ticks_per_s;
    sim.run_until(end);
    // Drain what is still in flight.
    sim.run_while(end + 100 * t_lead_ticks, |_| {
        let l = log.lock().expect("probe lock");
        l.reported_count() >= l.emitted_count()
    });

    let log = log.lock().expect("probe lock");
    check_conservation(&log)?;
    let horizon_ms = (p.duration_s * 1000) as f64;
    let reported: Vec<f64> = log.reported.iter().flatten().copied().collect();
    let rates = windowed_rate(reported.iter().copied(), 1000.0, horizon_ms);
    let rec = recovery(&rates, 3, p.crash_at_s as usize);
    let crash_ms = (p.crash_at_s * 1000) as f64;
    let mut after: Vec<f64> = reported
        .iter()
        .copied()
        .filter(|t| *t >= crash_ms)
        .collect();
    after.sort_by(f64::total_cmp);
    let mut outage_end = crash_ms;
    let mut widest = 0.0;
    let mut prev = crash_ms;
    for t in after {
        if t - prev > widest {
            widest = t - prev;
            outage_end = t;
        }
        prev = t;
    }
    let peak_latency_ms = log
        .latencies(0..total as usize)
        .into_iter()
        .fold(0.0, f64::max);
    let steady = (p.workload * 3) as usize..(p.workload * p.crash_at_s.saturating_sub(1)) as usize;
    let pre = log.latencies(steady);
    let pre_crash_latency_ms = pre.iter().sum::<f64>() / pre.len().max(1) as f64;
    Ok(LeaderFailureReport {
        crashed_unit: victim,
        rates,
        recovery: rec,
        outage_s: (outage_end - crash_ms) / 1000.0,
        pre_crash_latency_ms,
        peak_latency_ms,
        t_lead_s: (t_lead_ticks * TICK_MS) as f64 / 1000.0,
        emitted: log.emitted_count(),
        delivered: log.reported_count(),
    })
}
