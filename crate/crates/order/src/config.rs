use repli_core::architecture::FaultModel;
use serde::{Deserialize, Serialize};

/// Static parameters of one ordering group. Times are in the caller's clock
/// unit: simulator ticks or milliseconds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderConfig {
    pub group: String,
    pub n: u32,
    pub f: u32,
    pub fault_model: FaultModel,
    pub max_batch: usize,
    /// Time without a decision while requests are pending before a replica
    /// starts a view change.
    pub view_timeout: u64,
    /// Upper bound on the escalated view-change timeout.
    pub max_view_timeout: u64,
    /// Minimum spacing between catch-up requests.
    pub fetch_interval: u64,
    /// Decisions sent per catch-up reply.
    pub fetch_chunk: u64,
    pub client_retransmit: u64,
    /// Time after which a client reports an unacknowledged request as failed.
    pub client_give_up: u64,
}

/// Length of one simulator tick in milliseconds.
pub const TICK_MS: u64 = 100;

impl OrderConfig {
    /// Defaults for the simulator (one tick = [`TICK_MS`] ms).
    pub fn simulated(group: impl Into<String>, n: u32, f: u32, fault_model: FaultModel) -> Self {
        OrderConfig {
            group: group.into(),
            n,
            f,
            fault_model,
            max_batch: 64,
            view_timeout: 20,
            max_view_timeout: 160,
            fetch_interval: 4,
            fetch_chunk: 32,
            client_retransmit: 10,
            client_give_up: 3000,
        }
    }

    /// Defaults for real transports, in milliseconds.
    pub fn realtime(group: impl Into<String>, n: u32, f: u32, fault_model: FaultModel) -> Self {
        OrderConfig {
            view_timeout: 2000,
            max_view_timeout: 16_000,
            fetch_interval: 200,
            client_retransmit: 1000,
            client_give_up: 120_000,
            ..Self::simulated(group, n, f, fault_model)
        }
    }

    /// Votes needed to prepare, decide, or form a new view.
    pub fn quorum(&self) -> usize {
        quorum(self.n, self.f, self.fault_model)
    }

    /// Distinct replica acknowledgments a client waits for.
    pub fn ack_threshold(&self) -> usize {
        self.f as usize + 1
    }

    pub fn leader_of(&self, view: u64) -> u32 {
        (view % self.n as u64) as u32
    }

    /// View change needs at least one peer able to take over.
    pub fn view_change_enabled(&self) -> bool {
        self.n > 1
    }

    pub fn replica_principal(&self, index: u32) -> String {
        replica_principal(&self.group, index)
    }
}

pub fn replica_principal(group: &str, index: u32) -> String {
    format!("replica:{group}:{index}")
}

pub fn client_principal(client: &str) -> String {
    format!("client:{client}")
}

/// BFT: `⌈(n+f+1)/2⌉`. CFT: a simple majority.
pub fn quorum(n: u32, f: u32, model: FaultModel) -> usize {
    match model {
        FaultModel::Bft => (n + f + 1).div_ceil(2) as usize,
        FaultModel::Cft => (n / 2 + 1) as usize,
    }
}
