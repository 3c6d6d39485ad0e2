//! Simulation parameters and fault scripts, both stored as JSON.

use std::collections::{BTreeMap, BTreeSet};

use repli_order::ByzantineMode;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("malformed JSON: {0}")]
    Syntax(String),
    #[error("deltaBound must be at least 1")]
    DeltaBound,
    #[error("dropProbability must lie in [0, 1], got {0}")]
    DropProbability(f64),
    #[error("preGst.maxDelay must be at least 1")]
    PreGstDelay,
    #[error("fault script names unknown node {0:?}")]
    UnknownNode(String),
    #[error("group {group} tolerates {f} faults but the script targets {targeted}")]
    TooManyFaults {
        group: String,
        f: u32,
        targeted: usize,
    },
    #[error("byzantine range for {node} is empty ({from}..{to})")]
    EmptyRange { node: String, from: u64, to: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PreGst {
    #[serde(default)]
    pub drop_probability: f64,
    /// Delays before GST are uniform in `1..=max_delay` ticks.
    #[serde(default = "one")]
    pub max_delay: u64,
}

fn one() -> u64 {
    1
}

impl Default for PreGst {
    fn default() -> Self {
        PreGst {
            drop_probability: 0.0,
            max_delay: 1,
        }
    }
}

/// Nodes in different groups cannot communicate during `[from, to)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub from: u64,
    pub to: u64,
    pub groups: Vec<Vec<String>>,
}

impl Partition {
    pub fn cuts(&self, tick: u64, a: &str, b: &str) -> bool {
        if tick < self.from || tick >= self.to {
            return false;
        }
        let ga = self.groups.iter().position(|g| g.iter().any(|n| n == a));
        let gb = self.groups.iter().position(|g| g.iter().any(|n| n == b));
        matches!((ga, gb), (Some(x), Some(y)) if x != y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimConfig {
    pub seed: u64,
    #[serde(default)]
    pub gst_tick: u64,
    #[serde(default = "one")]
    pub delta_bound: u64,
    #[serde(default)]
    pub pre_gst: PreGst,
    #[serde(default)]
    pub partitions: Vec<Partition>,
}

impl SimConfig {
    /// Synchronous from the start with one-tick links.
    pub fn synchronous(seed: u64) -> Self {
        SimConfig {
            seed,
            gst_tick: 0,
            delta_bound: 1,
            pre_gst: PreGst::default(),
            partitions: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.delta_bound < 1 {
            return Err(ConfigError::DeltaBound);
        }
        if !(0.0..=1.0).contains(&self.pre_gst.drop_probability) {
            return Err(ConfigError::DropProbability(self.pre_gst.drop_probability));
        }
        if self.pre_gst.max_delay < 1 {
            return Err(ConfigError::PreGstDelay);
        }
        Ok(())
    }

    pub fn partitioned(&self, tick: u64, a: &str, b: &str) -> bool {
        self.partitions.iter().any(|p| p.cuts(tick, a, b))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultAction {
    Crash {
        node: String,
        tick: u64,
    },
    /// Corrupts the node's outgoing messages during `[from, to)`.
    Byzantine {
        node: String,
        mode: ByzantineMode,
        from: u64,
        to: u64,
    },
}

impl FaultAction {
    pub fn node(&self) -> &str {
        match self {
            FaultAction::Crash { node, .. } | FaultAction::Byzantine { node, .. } => node,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultScript {
    #[serde(default)]
    pub actions: Vec<FaultAction>,
}

impl FaultScript {
    pub fn none() -> Self {
        FaultScript::default()
    }

    pub fn crash(mut self, node: &str, tick: u64) -> Self {
        self.actions.push(FaultAction::Crash {
            node: node.to_string(),
            tick,
        });
        self
    }

    pub fn byzantine(mut self, node: &str, mode: ByzantineMode, from: u64, to: u64) -> Self {
        self.actions.push(FaultAction::Byzantine {
            node: node.to_string(),
            mode,
            from,
            to,
        });
        self
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }

    /// Checks node names and ranges.
    pub fn validate(&self, nodes: &[String]) -> Result<(), ConfigError> {
        for a in &self.actions {
            if !nodes.iter().any(|n| n == a.node()) {
                return Err(ConfigError::UnknownNode(a.node().to_string()));
            }
            if let FaultAction::Byzantine { node, from, to, .. } = a {
                if from >= to {
                    return Err(ConfigError::EmptyRange {
                        node: node.clone(),
                        from: *from,
                        to: *to,
                    });
                }
            }
        }
        Ok(())
    }

    /// For runs that assert liveness: at most `f` targeted members per
    /// group. `groups` maps a group name to its member nodes and `f`.
    pub fn check_tolerated(
        &self,
        groups: &BTreeMap<String, (Vec<String>, u32)>,
    ) -> Result<(), ConfigError> {
        for (g, (members, f)) in groups {
            let targeted: BTreeSet<&str> = self
                .actions
                .iter()
                .map(FaultAction::node)
                .filter(|n| members.iter().any(|m| m == n))
                .collect();
            if targeted.len() > *f as usize {
                return Err(ConfigError::TooManyFaults {
                    group: g.clone(),
                    f: *f,
                    targeted: targeted.len(),
                });
            }
        }
        Ok(())
    }
}
