//! Logical software architecture (LSA), resilience configuration and
//! replication-group sizing.
//!
//! The resilience configuration uses the field names `components`, `id`,
//! `mechanisms`, `activeReplication`, `enabled`, `f`, `faultModel` and
//! `consolidator`. Two optional fields extend it: `n` (over-provisioned group
//! size, must be at least the minimal bound) and `params` (consolidator
//! parameters, e.g. `{"width": 0.5}` for `IntervalConsolidator`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::consolidate::ConsolidatorRegistry;
use crate::model::{ComponentId, ComponentSpec, Direction, UnitId, UnitSpec};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint {
    pub node: ComponentId,
    pub port: String,
}

impl Endpoint {
    pub fn new(node: impl Into<ComponentId>, port: impl Into<String>) -> Self {
        Endpoint {
            node: node.into(),
            port: port.into(),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.node, self.port)
    }
}

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "kebab-case")]
pub enum Technology {
    #[default]
    Local,
    Socket,
    TotalOrderMulticast,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Connection {
    pub source: Endpoint,
    pub target: Endpoint,
    #[serde(default)]
    pub technology: Technology,
}

impl Connection {
    pub fn new(source: Endpoint, target: Endpoint, technology: Technology) -> Self {
        Connection {
            source,
            target,
            technology,
        }
    }
}

impl fmt::Display for Connection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.source, self.target)
    }
}

/// Logical software architecture: components, their connections and units.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Lsa {
    pub components: Vec<ComponentSpec>,
    pub connections: Vec<Connection>,
    pub units: Vec<UnitSpec>,
}

impl Lsa {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let mut lsa: Lsa = serde_json::from_str(text)?;
        lsa.normalize_technology();
        Ok(lsa)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("LSA serializes")
    }

    pub fn component(&self, id: &ComponentId) -> Option<&ComponentSpec> {
        self.components.iter().find(|c| &c.id == id)
    }

    pub fn unit_of(&self, id: &ComponentId) -> Option<&UnitId> {
        self.units
            .iter()
            .find(|u| u.components.contains(id))
            .map(|u| &u.id)
    }

    /// Marks connections between components on different units as `socket`.
    pub fn normalize_technology(&mut self) {
        let placement: BTreeMap<&ComponentId, &UnitId> = self
            .units
            .iter()
            .flat_map(|u| u.components.iter().map(move |c| (c, &u.id)))
            .collect();
        for c in &mut self.connections {
            if c.technology == Technology::Local {
                let (a, b) = (placement.get(&c.source.node), placement.get(&c.target.node));
                if a.is_some() && b.is_some() && a != b {
                    c.technology = Technology::Socket;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Diagnostic {
    DuplicateId(String),
    UnresolvedEndpoint(String),
    PortDirection(String),
    UnitAssignment(String),
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::DuplicateId(m) => write!(f, "duplicate id: {m}"),
            Diagnostic::UnresolvedEndpoint(m) => write!(f, "unresolved endpoint: {m}"),
            Diagnostic::PortDirection(m) => write!(f, "port direction: {m}"),
            Diagnostic::UnitAssignment(m) => write!(f, "unit assignment: {m}"),
        }
    }
}

/// Checks id uniqueness, endpoint resolvability, port directions and that
/// every component sits on exactly one unit.
pub fn validate_lsa(lsa: &Lsa) -> Result<(), Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let mut by_id: BTreeMap<&ComponentId, &ComponentSpec> = BTreeMap::new();
    for c in &lsa.components {
        if by_id.insert(&c.id, c).is_some() {
            diags.push(Diagnostic::DuplicateId(format!("component {}", c.id)));
        }
        let mut seen = BTreeSet::new();
        for p in &c.ports {
            if !seen.insert((&p.name, p.direction)) {
                diags.push(Diagnostic::DuplicateId(format!("port {}.{}", c.id, p.name)));
            }
        }
    }
    let mut unit_ids = BTreeSet::new();
    let mut assigned: BTreeMap<&ComponentId, usize> = BTreeMap::new();
    for u in &lsa.units {
        if !unit_ids.insert(&u.id) {
            diags.push(Diagnostic::DuplicateId(format!("unit {}", u.id)));
        }
        for c in &u.components {
            if !by_id.contains_key(c) {
                diags.push(Diagnostic::UnresolvedEndpoint(format!(
                    "unit {} lists unknown component {c}",
                    u.id
                )));
            }
            *assigned.entry(c).or_default() += 1;
        }
    }
    for c in &lsa.components {
        match assigned.get(&c.id).copied().unwrap_or(0) {
            1 => {}
            0 => diags.push(Diagnostic::UnitAssignment(format!(
                "component {} is on no unit",
                c.id
            ))),
            k => diags.push(Diagnostic::UnitAssignment(format!(
                "component {} is on {k} units",
                c.id
            ))),
        }
    }
    for conn in &lsa.connections {
        for (end, dir) in [
            (&conn.source, Direction::Out),
            (&conn.target, Direction::In),
        ] {
            match by_id.get(&end.node) {
                None => diags.push(Diagnostic::UnresolvedEndpoint(format!(
                    "{conn}: no component {}",
                    end.node
                ))),
                Some(spec) if !spec.has_port(&end.port, dir) => {
                    let want = if dir == Direction::Out { "out" } else { "in" };
                    diags.push(Diagnostic::PortDirection(format!(
                        "{conn}: {end} is not an {want}-port"
                    )));
                }
                Some(_) => {}
            }
        }
    }
    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaultModel {
    #[serde(rename = "BFT")]
    Bft,
    #[serde(rename = "CFT")]
    Cft,
}

impl fmt::Display for FaultModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FaultModel::Bft => "BFT",
            FaultModel::Cft => "CFT",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("f must be non-negative, got {0}")]
pub struct NegativeF(pub i64);

/// Minimal group size tolerating `f` faults: 3f+1 (BFT) or 2f+1 (CFT).
pub fn group_size(f: i64, model: FaultModel) -> Result<u32, NegativeF> {
    if f < 0 {
        return Err(NegativeF(f));
    }
    let f = f as u32;
    Ok(match model {
        FaultModel::Bft => 3 * f + 1,
        FaultModel::Cft => 2 * f + 1,
    })
}

/// The `activeReplication` mechanism of one component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActiveReplication {
    pub enabled: bool,
    pub f: u32,
    #[serde(rename = "faultModel")]
    pub fault_model: FaultModel,
    pub consolidator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub params: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mechanisms {
    #[serde(rename = "activeReplication")]
    pub active_replication: ActiveReplication,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEntry {
    pub id: ComponentId,
    pub mechanisms: Mechanisms,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResilienceConfig {
    pub components: Vec<ConfigEntry>,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

/// An enabled replication request, resolved from a config entry.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationRequest {
    pub component: ComponentId,
    pub fault_model: FaultModel,
    pub f: u32,
    pub n: u32,
    pub consolidator: String,
    pub params: Value,
}

impl ResilienceConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn entry(&self, id: &ComponentId) -> Option<&ActiveReplication> {
        self.components
            .iter()
            .find(|e| &e.id == id)
            .map(|e| &e.mechanisms.active_replication)
    }

    /// Enabled entries with their group size resolved.
    pub fn requests(&self) -> Vec<ReplicationRequest> {
        self.components
            .iter()
            .filter(|e| e.mechanisms.active_replication.enabled)
            .map(|e| {
                let ar = &e.mechanisms.active_replication;
                let bound = group_size(ar.f as i64, ar.fault_model).expect("f is unsigned");
                ReplicationRequest {
                    component: e.id.clone(),
                    fault_model: ar.fault_model,
                    f: ar.f,
                    n: ar.n.unwrap_or(bound),
                    consolidator: ar.consolidator.clone(),
                    params: ar.params.clone(),
                }
            })
            .collect()
    }

    pub fn is_replicated(&self, id: &ComponentId) -> bool {
        self.entry(id).is_some_and(|a| a.enabled)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("resilience config is not valid JSON: {0}")]
    Syntax(String),
    #[error("resilience config: missing top-level \"components\" array")]
    MissingComponents,
    #[error("resilience config entry #{index}: missing \"id\"")]
    MissingId { index: usize },
    #[error("component {component}: {field} {reason}")]
    Field {
        component: String,
        field: String,
        reason: String,
    },
    #[error("component {component}: unknown consolidator {name:?}")]
    UnknownConsolidator { component: String, name: String },
    #[error("component {0} appears more than once")]
    Duplicate(String),
}

fn field_err(component: &str, field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        component: component.to_string(),
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn warn_unknown(
    obj: &serde_json::Map<String, Value>,
    known: &[&str],
    ctx: &str,
    warnings: &mut Vec<String>,
) {
    for k in obj.keys() {
        if !known.contains(&k.as_str()) {
            warnings.push(format!("{ctx}: ignoring unknown key {k:?}"));
        }
    }
}

/// Parses a resilience configuration, resolving consolidator names against
/// `registry`. Unknown keys are ignored and reported in `warnings`.
pub fn parse_resilience_config(
    text: &[u8],
    registry: &ConsolidatorRegistry,
) -> Result<ResilienceConfig, ConfigError> {
    let root: Value =
        serde_json::from_slice(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let root = root.as_object().ok_or(ConfigError::MissingComponents)?;
    let mut warnings = Vec::new();
    warn_unknown(root, &["components"], "top level", &mut warnings);
    let entries = root
        .get("components")
        .and_then(Value::as_array)
        .ok_or(ConfigError::MissingComponents)?;

    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (index, entry) in entries.iter().enumerate() {
        let obj = entry.as_object().ok_or(ConfigError::MissingId { index })?;
        let id = obj
            .get("id")
            .and_then(Value::as_str)
            .ok_or(ConfigError::MissingId { index })?;
        if !seen.insert(id.to_string()) {
            return Err(ConfigError::Duplicate(id.to_string()));
        }
        warn_unknown(obj, &["id", "mechanisms"], id, &mut warnings);
        let mechanisms = obj
            .get("mechanisms")
            .and_then(Value::as_object)
            .ok_or_else(|| field_err(id, "mechanisms", "is missing or not an object"))?;
        warn_unknown(mechanisms, &["activeReplication"], id, &mut warnings);
        let ar = mechanisms
            .get("activeReplication")
            .and_then(Value::as_object)
            .ok_or_else(|| field_err(id, "activeReplication", "is missing or not an object"))?;
        warn_unknown(
            ar,
            &["enabled", "f", "faultModel", "consolidator", "n", "params"],
            id,
            &mut warnings,
        );

        let enabled = ar
            .get("enabled")
            .and_then(Value::as_bool)
            .ok_or_else(|| field_err(id, "enabled", "must be a boolean"))?;
        let f = match ar.get("f") {
            Some(Value::Number(n)) => match n.as_i64() {
                Some(v) if v >= 0 => v as u32,
                Some(v) => {
                    return Err(field_err(id, "f", format!("must be non-negative, got {v}")))
                }
                None => return Err(field_err(id, "f", format!("must be an integer, got {n}"))),
            },
            _ => return Err(field_err(id, "f", "must be a non-negative integer")),
        };
        let fault_model = match ar.get("faultModel").and_then(Value::as_str) {
            Some("BFT") => FaultModel::Bft,
            Some("CFT") => FaultModel::Cft,
            other => {
                return Err(field_err(
                    id,
                    "faultModel",
                    format!("must be \"BFT\" or \"CFT\", got {other:?}"),
                ))
            }
        };
        let consolidator = ar
            .get("consolidator")
            .and_then(Value::as_str)
            .ok_or_else(|| field_err(id, "consolidator", "must be a string"))?;
        if !registry.contains(consolidator) {
            return Err(ConfigError::UnknownConsolidator {
                component: id.to_string(),
                name: consolidator.to_string(),
            });
        }
        let bound = group_size(f as i64, fault_model).expect("f checked");
        let n = match ar.get("n") {
            None => None,
            Some(v) => match v.as_u64() {
                Some(n) if n >= bound as u64 => Some(n as u32),
                _ => {
                    return Err(field_err(
                        id,
                        "n",
                        format!("must be an integer >= {bound}, got {v}"),
                    ))
                }
            },
        };
        let params = ar.get("params").cloned().unwrap_or(Value::Null);
        registry
            .policy(consolidator, f, fault_model, &params)
            .map_err(|e| field_err(id, "params", e.to_string()))?;
        out.push(ConfigEntry {
            id: ComponentId::new(id),
            mechanisms: Mechanisms {
                active_replication: ActiveReplication {
                    enabled,
                    f,
                    fault_model,
                    consolidator: consolidator.to_string(),
                    n,
                    params,
                },
            },
        });
    }
    Ok(ResilienceConfig {
        components: out,
        warnings,
    })
}

/// A resolved replication group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationGroup {
    pub base_component: ComponentId,
    pub fault_model: FaultModel,
    pub f: u32,
    pub n: u32,
    pub replica_ids: Vec<ComponentId>,
    pub consolidator_name: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub params: Value,
}

impl ReplicationGroup {
    pub fn id(&self) -> &ComponentId {
        &self.base_component
    }

    pub fn replica_index(&self, replica: &ComponentId) -> Option<u32> {
        self.replica_ids
            .iter()
            .position(|r| r == replica)
            .map(|i| i as u32)
    }
}

/// Id of replica `index` of `base`.
pub fn replica_id(base: &ComponentId, index: u32) -> ComponentId {
    ComponentId(format!("{}#{}", base.0, index))
}

/// Splits a replica id `<base>#<index>` into its parts.
pub fn parse_replica_id(id: &ComponentId) -> Option<(ComponentId, u32)> {
    let (base, idx) = id.0.rsplit_once('#')?;
    Some((ComponentId::new(base), idx.parse().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BehaviorSpec;

    fn registry() -> ConsolidatorRegistry {
        ConsolidatorRegistry::with_builtins()
    }

    const FIG4: &str = r#"{"components":[{"id":"Comp-B","mechanisms":{"activeReplication":{"enabled":true,"f":1,"faultModel":"BFT","consolidator":"BFTConsolidator"}}}]}"#;

    #[test]
    fn parses_reference_config() {
        let cfg = parse_resilience_config(FIG4.as_bytes(), &registry()).unwrap();
        let reqs = cfg.requests();
        assert_eq!(reqs.len(), 1);
        assert_eq!(reqs[0].component, ComponentId::new("Comp-B"));
        assert_eq!(reqs[0].fault_model, FaultModel::Bft);
        assert_eq!(reqs[0].f, 1);
        assert_eq!(reqs[0].n, 4);
        assert_eq!(reqs[0].consolidator, "BFTConsolidator");
        assert!(cfg.warnings.is_empty());
    }

    #[test]
    fn disabled_entries_are_inert() {
        let text = FIG4.replace("\"enabled\":true", "\"enabled\":false");
        let cfg = parse_resilience_config(text.as_bytes(), &registry()).unwrap();
        assert_eq!(cfg.components.len(), 1);
        assert!(cfg.requests().is_empty());
    }

    #[test]
    fn negative_f_names_component_and_field() {
        let text = FIG4.replace("\"f\":1", "\"f\":-1");
        let err = parse_resilience_config(text.as_bytes(), &registry()).unwrap_err();
        match &err {
            ConfigError::Field {
                component, field, ..
            } => {
                assert_eq!(component, "Comp-B");
                assert_eq!(field, "f");
            }
            other => panic!("unexpected {other:?}"),
        }
        let msg = err.to_string();
        assert!(msg.contains("Comp-B") && msg.contains(" f "), "{msg}");
    }

    #[test]
    fn distinct_diagnostics() {
        let cases = [
            (FIG4.replace("\"id\":\"Comp-B\",", ""), "missing \"id\""),
            (FIG4.replace("\"f\":1", "\"f\":1.5"), "integer"),
            (FIG4.replace("\"BFT\"", "\"PAXOS\""), "faultModel"),
            (
                FIG4.replace("\"BFTConsolidator\"", "\"Nope\""),
                "unknown consolidator",
            ),
        ];
        for (text, needle) in cases {
            let err = parse_resilience_config(text.as_bytes(), &registry())
                .unwrap_err()
                .to_string();
            assert!(err.contains(needle), "{err} should mention {needle}");
        }
    }

    #[test]
    fn unknown_keys_warn_and_duplicates_fail() {
        let text = FIG4.replace("\"enabled\":true", "\"enabled\":true,\"priority\":3");
        let cfg = parse_resilience_config(text.as_bytes(), &registry()).unwrap();
        assert_eq!(cfg.warnings.len(), 1);
        assert!(cfg.warnings[0].contains("priority"));

        let entry = r#"{"id":"X","mechanisms":{"activeReplication":{"enabled":true,"f":0,"faultModel":"CFT","consolidator":"CFTConsolidator"}}}"#;
        let dup = format!(r#"{{"components":[{entry},{entry}]}}"#);
        assert_eq!(
            parse_resilience_config(dup.as_bytes(), &registry()).unwrap_err(),
            ConfigError::Duplicate("X".into())
        );
    }

    #[test]
    fn explicit_n_must_meet_bound() {
        let ok = FIG4.replace("\"f\":1", "\"f\":1,\"n\":5");
        assert_eq!(
            parse_resilience_config(ok.as_bytes(), &registry())
                .unwrap()
                .requests()[0]
                .n,
            5
        );
        let bad = FIG4.replace("\"f\":1", "\"f\":1,\"n\":3");
        assert!(parse_resilience_config(bad.as_bytes(), &registry()).is_err());
    }

    #[test]
    fn group_sizes() {
        assert_eq!(group_size(1, FaultModel::Bft), Ok(4));
        assert_eq!(group_size(0, FaultModel::Bft), Ok(1));
        assert_eq!(group_size(2, FaultModel::Cft), Ok(5));
        assert_eq!(group_size(-1, FaultModel::Cft), Err(NegativeF(-1)));
    }

    fn fig2() -> Lsa {
        let fwd = |id: &str| {
            ComponentSpec::new(id, BehaviorSpec::new("forward"))
                .with_input("in")
                .with_output("out")
        };
        Lsa {
            components: vec![fwd("A"), fwd("B"), fwd("C")],
            connections: vec![
                Connection::new(
                    Endpoint::new("A", "out"),
                    Endpoint::new("B", "in"),
                    Technology::Socket,
                ),
                Connection::new(
                    Endpoint::new("B", "out"),
                    Endpoint::new("C", "in"),
                    Technology::Socket,
                ),
            ],
            units: ["A", "B", "C"]
                .iter()
                .map(|c| UnitSpec {
                    id: UnitId(format!("unit-{}", c.to_lowercase())),
                    components: vec![ComponentId::new(*c)],
                })
                .collect(),
        }
    }

    #[test]
    fn validates_chain() {
        assert_eq!(validate_lsa(&fig2()), Ok(()));
    }

    #[test]
    fn reports_unresolved_and_duplicate() {
        let mut lsa = fig2();
        lsa.connections.push(Connection::new(
            Endpoint::new("C", "out"),
            Endpoint::new("Z", "in"),
            Technology::Local,
        ));
        let d = validate_lsa(&lsa).unwrap_err();
        assert!(d
            .iter()
            .any(|d| matches!(d, Diagnostic::UnresolvedEndpoint(_))));

        let mut lsa = fig2();
        lsa.components.push(lsa.components[0].clone());
        let d = validate_lsa(&lsa).unwrap_err();
        assert!(d.iter().any(|d| matches!(d, Diagnostic::DuplicateId(_))));
        assert!(d[0].to_string().starts_with("duplicate id"));
    }

    #[test]
    fn reports_direction_and_assignment() {
        let mut lsa = fig2();
        lsa.connections.push(Connection::new(
            Endpoint::new("A", "in"),
            Endpoint::new("C", "out"),
            Technology::Local,
        ));
        lsa.units[2].components.clear();
        let d = validate_lsa(&lsa).unwrap_err();
        assert_eq!(
            d.iter()
                .filter(|d| matches!(d, Diagnostic::PortDirection(_)))
                .count(),
            2
        );
        assert!(d.iter().any(|d| matches!(d, Diagnostic::UnitAssignment(_))));
    }

    #[test]
    fn replica_ids_round_trip() {
        let id = replica_id(&ComponentId::new("Comp-B"), 3);
        assert_eq!(id.as_str(), "Comp-B#3");
        assert_eq!(parse_replica_id(&id), Some((ComponentId::new("Comp-B"), 3)));
    }
}
