//! Per-event timestamps and the statistics derived from them.

use std::time::Instant;

use repli_core::model::{ComponentId, Delivery, Event, UnitId};
use repli_harness::Probe;
use repli_order::TICK_MS;

use crate::workload::{payload_id, LOADGEN, REPORTER};

/// Time source for timestamps, in milliseconds.
#[derive(Clone, Copy, Debug)]
pub enum Clock {
    /// Simulator ticks scaled by [`TICK_MS`].
    Ticks,
    /// Monotonic wall clock since `Instant`.
    Wall(Instant),
}

impl Clock {
    pub fn ms(&self, now: u64) -> f64 {
        match self {
            Clock::Ticks => (now * TICK_MS) as f64,
            Clock::Wall(start) => start.elapsed().as_secs_f64() * 1000.0,
        }
    }
}

/// Timestamps of every benchmark event, indexed by event id.
#[derive(Debug)]
pub struct EventLog {
    clock: Clock,
    pub emitted: Vec<Option<f64>>,
    pub reported: Vec<Option<f64>>,
    pub returned: Vec<Option<f64>>,
    /// Deliveries at the reporter beyond the first, per id.
    pub duplicates: u64,
    /// Ids outside `0..total`.
    pub stray: u64,
    pub returned_count: u64,
}

impl EventLog {
    pub fn new(total: u64, clock: Clock) -> Self {
        let n = total as usize;
        EventLog {
            clock,
            emitted: vec![None; n],
            reported: vec![None; n],
            returned: vec![None; n],
            duplicates: 0,
            stray: 0,
            returned_count: 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.emitted.len() as u64
    }

    pub fn emitted_count(&self) -> u64 {
        self.emitted.iter().flatten().count() as u64
    }

    pub fn reported_count(&self) -> u64 {
        self.reported.iter().flatten().count() as u64
    }

    /// Emitted ids never seen at the reporter.
    pub fn missing(&self) -> Vec<u64> {
        (0..self.emitted.len())
            .filter(|i| self.emitted[*i].is_some() && self.reported[*i].is_none())
            .map(|i| i as u64)
            .collect()
    }

    fn slot(&mut self, payload: &[u8]) -> Option<usize> {
        match payload_id(payload) {
            Some(id) if (id as usize) < self.emitted.len() => Some(id as usize),
            _ => {
                self.stray += 1;
                None
            }
        }
    }

    /// End-to-end latencies (ms) of `ids`, measured at the load generator.
    pub fn latencies(&self, ids: std::ops::Range<usize>) -> Vec<f64> {
        ids.filter_map(|i| Some(self.returned.get(i).copied()?? - self.emitted[i]?))
            .collect()
    }
}

impl Probe for EventLog {
    fn delivered(&mut self, now: u64, _unit: &UnitId, d: &Delivery) {
        let at = self.clock.ms(now);
        match (d.target.as_str(), d.port.as_str()) {
            (REPORTER, _) => {
                if let Some(i) = self.slot(&d.event.payload) {
                    if self.reported[i].is_some() {
                        self.duplicates += 1;
                    } else {
                        self.reported[i] = Some(at);
                    }
                }
            }
            (LOADGEN, "feedback") => {
                if let Some(i) = self.slot(&d.event.payload) {
                    if self.returned[i].is_none() {
                        self.returned[i] = Some(at);
                        self.returned_count += 1;
                    }
                }
            }
            _ => {}
        }
    }

    fn emitted(&mut self, now: u64, _unit: &UnitId, from: &ComponentId, event: &Event) {
        if from.as_str() == LOADGEN {
            let at = self.clock.ms(now);
            if let Some(i) = self.slot(&event.payload) {
                self.emitted[i].get_or_insert(at);
            }
        }
    }
}

/// Steady-state summary of one closed-loop run.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    /// Completions per second over the middle interval.
    pub throughput: f64,
    /// Mean end-to-end latency (ms) of events in the middle interval.
    pub latency_ms: f64,
    /// throughput × latency / backlog; 1.0 is an exact closed loop.
    pub little_ratio: f64,
}

/// Uses the events in `[k/4, 3k/4)` (by id for latency, by completion order
/// for throughput).
pub fn summarize(log: &EventLog, backlog: u64) -> Option<Summary> {
    let k = log.total() as usize;
    let (lo, hi) = (k / 4, 3 * k / 4);
    if hi <= lo + 1 {
        return None;
    }
    let lat = log.latencies(lo..hi);
    if lat.is_empty() {
        return None;
    }
    let latency_ms = lat.iter().sum::<f64>() / lat.len() as f64;
    let mut done: Vec<f64> = log.returned.iter().flatten().copied().collect();
    done.sort_by(f64::total_cmp);
    if done.len() < hi {
        return None;
    }
    let span_ms = done[hi - 1] - done[lo];
    if span_ms <= 0.0 {
        return None;
    }
    let throughput = (hi - 1 - lo) as f64 / (span_ms / 1000.0);
    let little_ratio = throughput * latency_ms / 1000.0 / backlog as f64;
    Some(Summary {
        throughput,
        latency_ms,
        little_ratio,
    })
}

/// A throughput curve over increasing backlog saturates if it starts well
/// below its peak, ends near it and has flattened out at the end.
pub fn has_knee(points: &[(f64, f64)]) -> bool {
    let [first, .., prev, last] = points else {
        return false;
    };
    let peak = points.iter().map(|p| p.1).fold(f64::MIN, f64::max);
    if peak <= 0.0 {
        return false;
    }
    let elasticity = ((last.1 - prev.1) / prev.1) / ((last.0 - prev.0) / prev.0);
    first.1 < 0.75 * peak && last.1 >= 0.75 * peak && elasticity < 0.5
}

/// Completions per window of `window_ms`, covering `[0, horizon_ms)`.
pub fn windowed_rate(
    times_ms: impl IntoIterator<Item = f64>,
    window_ms: f64,
    horizon_ms: f64,
) -> Vec<f64> {
    let n = (horizon_ms / window_ms).ceil() as usize;
    let mut counts = vec![0u64; n];
    for t in times_ms {
        let w = (t / window_ms) as usize;
        if t >= 0.0 && w < n {
            counts[w] += 1;
        }
    }
    counts
        .into_iter()
        .map(|c| c as f64 * 1000.0 / window_ms)
        .collect()
}

/// Recovery analysis of a per-window throughput series around a crash.
#[derive(Clone, Debug, PartialEq)]
pub struct Recovery {
    pub pre_crash_mean: f64,
    /// Index of the first empty window at or after the crash.
    pub dip_window: Option<usize>,
    /// Index of the first window after the dip from which the mean of 3
    /// consecutive windows is within ±10% of the pre-crash mean.
    pub recovered_window: Option<usize>,
}

pub fn recovery(rates: &[f64], warmup: usize, crash: usize) -> Recovery {
    let pre = &rates[warmup.min(crash)..crash.min(rates.len())];
    let pre_crash_mean = if pre.is_empty() {
        0.0
    } else {
        pre.iter().sum::<f64>() / pre.len() as f64
    };
    let dip_window = (crash..rates.len()).find(|w| rates[*w] == 0.0);
    let near = |r: f64| (r - pre_crash_mean).abs() <= 0.1 * pre_crash_mean;
    let recovered_window = dip_window.and_then(|d| {
        (d + 1..rates.len().saturating_sub(2))
            .find(|w| near(rates[*w..w + 3].iter().sum::<f64>() / 3.0))
    });
    Recovery {
        pre_crash_mean,
        dip_window,
        recovered_window,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knee_detection() {
        let b = [1.0, 5.0, 10.0, 25.0, 50.0, 100.0, 200.0];
        let saturating: Vec<_> = b.iter().map(|x| (*x, 100.0 * x / (x + 5.0))).collect();
        assert!(has_knee(&saturating));
        let linear: Vec<_> = b.iter().map(|x| (*x, 3.0 * x)).collect();
        assert!(!has_knee(&linear));
        let flat: Vec<_> = b.iter().map(|x| (*x, 50.0)).collect();
        assert!(!has_knee(&flat), "no rise means no knee");
        assert!(!has_knee(&saturating[..2]));
    }

    #[test]
    fn little_ratio_of_a_perfect_loop_is_one() {
        // Backlog 4, every event takes exactly 40 ms, one completion per 10 ms.
        let k = 400;
        let mut log = EventLog::new(k, Clock::Ticks);
        for i in 0..k as usize {
            log.emitted[i] = Some(i as f64 * 10.0);
            log.returned[i] = Some(i as f64 * 10.0 + 40.0);
        }
        let s = summarize(&log, 4).unwrap();
        assert!((s.throughput - 100.0).abs() < 1e-9);
        assert!((s.latency_ms - 40.0).abs() < 1e-9);
        assert!((s.little_ratio - 1.0).abs() < 1e-9);
    }

    #[test]
    fn recovery_after_dip() {
        let rates = [
            50.0, 50.0, 50.0, 50.0, 0.0, 0.0, 120.0, 52.0, 48.0, 50.0, 50.0,
        ];
        let r = recovery(&rates, 1, 4);
        assert_eq!(r.pre_crash_mean, 50.0);
        assert_eq!(r.dip_window, Some(4));
        assert_eq!(r.recovered_window, Some(7));
        assert_eq!(recovery(&[50.0, 50.0, 45.0, 50.0], 0, 2).dip_window, None);
    }

    #[test]
    fn windows_count_completions() {
        assert_eq!(
            windowed_rate([0.0, 999.0, 1000.0, 2500.0, 9000.0], 1000.0, 3000.0),
            vec![2.0, 1.0, 1.0]
        );
    }

    proptest::proptest! {
        #[test]
        fn windows_conserve_completions(times in proptest::collection::vec(0.0f64..10_000.0, 0..200), window in 100.0f64..2000.0) {
            let rates = windowed_rate(times.iter().copied(), window, 10_000.0);
            let total: f64 = rates.iter().map(|r| r * window / 1000.0).sum();
            proptest::prop_assert!((total - times.len() as f64).abs() < 1e-6);
        }

        #[test]
        fn saturating_curves_have_a_knee(cap in 10.0f64..1e5, half in 1.0f64..4.0) {
            let b = [1.0, 5.0, 10.0, 25.0, 50.0, 100.0, 200.0];
            let pts: Vec<_> = b.iter().map(|x| (*x, cap * x / (x + half))).collect();
            proptest::prop_assert!(has_knee(&pts));
            let linear: Vec<_> = b.iter().map(|x| (*x, cap * x)).collect();
            proptest::prop_assert!(!has_knee(&linear));
        }
    }
}
