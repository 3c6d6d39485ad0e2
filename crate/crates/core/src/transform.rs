//! Transformation of an LSA plus resilience configuration into a
//! replication-enriched architecture (ReSA).
//!
//! Every replicated component is replaced by `n` replica instances
//! `<base>#<i>`, each on its own unit. Building blocks are inserted per unit:
//!
//! * a frontend for each (local sender, replicated target group) pair,
//! * a replica proxy next to each replica instance,
//! * a consolidator for each (replicated source group, local receiver) pair.
//!
//! Connections touching a replicated component are then rewired so that
//! inputs reach all replicas through total-order multicast and outputs reach
//! receivers through consolidators. Non-replicated parts are left untouched.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::architecture::{
    replica_id, validate_lsa, Connection, Diagnostic, Endpoint, Lsa, ReplicationGroup,
    ResilienceConfig, Technology,
};
use crate::consolidate::{ConsolidatorParams, ConsolidatorRegistry};
use crate::model::{BehaviorSpec, ComponentId, ComponentSpec, Direction, Port, UnitId, UnitSpec};

/// Client-side proxy broadcasting a sender's events to a replicated group.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontendInstance {
    pub id: ComponentId,
    pub on_unit: UnitId,
    pub sender: ComponentId,
    pub target_group: ComponentId,
    pub ports: Vec<Port>,
}

/// Server-side ordering endpoint co-located with one replica.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaProxyInstance {
    pub id: ComponentId,
    pub on_unit: UnitId,
    pub group: ComponentId,
    pub replica_index: u32,
    pub ports: Vec<Port>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsolidatorInstance {
    pub id: ComponentId,
    pub on_unit: UnitId,
    pub source_group: ComponentId,
    pub receiver: ComponentId,
    pub kind: String,
}

/// Replication-enriched software architecture.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Resa {
    pub components: Vec<ComponentSpec>,
    pub connections: Vec<Connection>,
    pub units: Vec<UnitSpec>,
    pub groups: Vec<ReplicationGroup>,
    pub frontends: Vec<FrontendInstance>,
    pub replica_proxies: Vec<ReplicaProxyInstance>,
    pub consolidators: Vec<ConsolidatorInstance>,
}

impl Resa {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ReSA serializes")
    }

    /// The architecture as a plain LSA (building blocks become invisible).
    pub fn as_lsa(&self) -> Lsa {
        Lsa {
            components: self.components.clone(),
            connections: self.connections.clone(),
            units: self.units.clone(),
        }
    }

    pub fn group(&self, base: &ComponentId) -> Option<&ReplicationGroup> {
        self.groups.iter().find(|g| &g.base_component == base)
    }

    /// Unit hosting any node (component, frontend or replica proxy).
    pub fn unit_of(&self, node: &ComponentId) -> Option<&UnitId> {
        self.units
            .iter()
            .find(|u| u.components.contains(node))
            .map(|u| &u.id)
            .or_else(|| {
                self.frontends
                    .iter()
                    .find(|f| &f.id == node)
                    .map(|f| &f.on_unit)
            })
            .or_else(|| {
                self.replica_proxies
                    .iter()
                    .find(|r| &r.id == node)
                    .map(|r| &r.on_unit)
            })
    }

    /// Node → unit map covering components and building blocks.
    pub fn placement(&self) -> BTreeMap<ComponentId, UnitId> {
        let mut m = BTreeMap::new();
        for u in &self.units {
            for c in &u.components {
                m.insert(c.clone(), u.id.clone());
            }
        }
        for f in &self.frontends {
            m.insert(f.id.clone(), f.on_unit.clone());
        }
        for r in &self.replica_proxies {
            m.insert(r.id.clone(), r.on_unit.clone());
        }
        m
    }

    /// Replica instance id → (group base id, replica index).
    pub fn replica_stamps(&self) -> BTreeMap<ComponentId, (ComponentId, u32)> {
        self.groups
            .iter()
            .flat_map(|g| {
                g.replica_ids
                    .iter()
                    .enumerate()
                    .map(move |(i, r)| (r.clone(), (g.base_component.clone(), i as u32)))
            })
            .collect()
    }

    pub fn proxy_of(&self, group: &ComponentId, index: u32) -> Option<&ReplicaProxyInstance> {
        self.replica_proxies
            .iter()
            .find(|r| &r.group == group && r.replica_index == index)
    }

    /// Checks that every connection endpoint names an existing node port.
    pub fn check_endpoints(&self) -> Result<(), Vec<String>> {
        let mut ports: BTreeSet<(&ComponentId, &str, Direction)> = BTreeSet::new();
        for c in &self.components {
            for p in &c.ports {
                ports.insert((&c.id, &p.name, p.direction));
            }
        }
        for f in &self.frontends {
            for p in &f.ports {
                ports.insert((&f.id, &p.name, p.direction));
            }
        }
        for r in &self.replica_proxies {
            for p in &r.ports {
                ports.insert((&r.id, &p.name, p.direction));
            }
        }
        let bases: BTreeSet<&ComponentId> = self.groups.iter().map(|g| &g.base_component).collect();
        let mut errs = Vec::new();
        for c in &self.connections {
            if !ports.contains(&(&c.source.node, c.source.port.as_str(), Direction::Out)) {
                errs.push(format!("dangling source in {c}"));
            }
            if !ports.contains(&(&c.target.node, c.target.port.as_str(), Direction::In)) {
                errs.push(format!("dangling target in {c}"));
            }
            if bases.contains(&c.source.node) || bases.contains(&c.target.node) {
                errs.push(format!(
                    "connection still names a replicated base component: {c}"
                ));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// Candidate units per replicated component (base id → units). Replicas are
/// placed on the first `n` distinct candidates; components without hints get
/// fresh units.
pub type PlacementHints = BTreeMap<ComponentId, Vec<UnitId>>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransformError {
    #[error("invalid LSA: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidLsa(Vec<Diagnostic>),
    #[error("replicated component {0} does not exist in the LSA")]
    UnknownComponent(ComponentId),
    #[error("replicated component {0} is not placed on any unit")]
    Unplaced(ComponentId),
    #[error("group {group}: needs {needed} distinct units, only {available} candidates")]
    Infeasible {
        group: ComponentId,
        needed: u32,
        available: usize,
    },
    #[error("group {group}: {reason}")]
    Consolidator { group: ComponentId, reason: String },
    #[error("internal invariant violated after rewiring: {0:?}")]
    Internal(Vec<String>),
}

pub fn frontend_id(sender: &ComponentId, group: &ComponentId) -> ComponentId {
    ComponentId(format!("frontend({sender}->{group})"))
}

pub fn proxy_id(replica: &ComponentId) -> ComponentId {
    ComponentId(format!("replica-proxy({replica})"))
}

pub fn consolidator_id(group: &ComponentId, receiver: &ComponentId) -> ComponentId {
    ComponentId(format!("consolidator({group}->{receiver})"))
}

/// Port label on a replica proxy for events that originate at `source.port`.
pub fn origin_label(source: &ComponentId, port: &str) -> String {
    format!("{source}.{port}")
}

/// DNS-friendly unit name for replica `index` of `base`.
pub fn replica_unit_name(base: &ComponentId, index: u32) -> UnitId {
    let mut s: String = base
        .0
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect();
    s = s.trim_matches('-').to_string();
    UnitId(format!("unit-{s}{index}"))
}

/// Building blocks inserted on one unit.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InsertedBlocks {
    pub frontends: Vec<FrontendInstance>,
    pub replica_proxies: Vec<ReplicaProxyInstance>,
    pub consolidators: Vec<ConsolidatorInstance>,
}

impl InsertedBlocks {
    pub fn is_empty(&self) -> bool {
        self.frontends.is_empty()
            && self.replica_proxies.is_empty()
            && self.consolidators.is_empty()
    }
}

struct Groups<'a> {
    by_base: BTreeMap<&'a ComponentId, &'a ReplicationGroup>,
    by_replica: BTreeMap<&'a ComponentId, (&'a ReplicationGroup, u32)>,
}

impl<'a> Groups<'a> {
    fn new(groups: &'a [ReplicationGroup]) -> Self {
        let by_base = groups.iter().map(|g| (&g.base_component, g)).collect();
        let by_replica = groups
            .iter()
            .flat_map(|g| {
                g.replica_ids
                    .iter()
                    .enumerate()
                    .map(move |(i, r)| (r, (g, i as u32)))
            })
            .collect();
        Groups {
            by_base,
            by_replica,
        }
    }

    /// Base id of a node: the group for replicas, itself otherwise.
    fn base_of<'b>(&'b self, node: &'b ComponentId) -> &'b ComponentId {
        self.by_replica
            .get(node)
            .map(|(g, _)| &g.base_component)
            .unwrap_or(node)
    }
}

/// Applies the insertion rules to unit `unit` hosting `hosted` (after replica
/// placement). `connections` are the original LSA connections.
pub fn insert_building_blocks(
    unit: &UnitId,
    hosted: &[ComponentId],
    groups: &[ReplicationGroup],
    connections: &[Connection],
) -> InsertedBlocks {
    let g = Groups::new(groups);
    let mut out = InsertedBlocks::default();
    let mut frontends: BTreeMap<(ComponentId, ComponentId), BTreeSet<String>> = BTreeMap::new();
    let mut consolidators: BTreeSet<(ComponentId, ComponentId)> = BTreeSet::new();
    for x in hosted {
        let base = g.base_of(x);
        for c in connections {
            if &c.source.node == base {
                if let Some(t) = g.by_base.get(&c.target.node) {
                    frontends
                        .entry((x.clone(), t.base_component.clone()))
                        .or_default()
                        .insert(c.source.port.clone());
                }
            }
            if &c.target.node == base {
                if let Some(s) = g.by_base.get(&c.source.node) {
                    consolidators.insert((s.base_component.clone(), x.clone()));
                }
            }
        }
        if let Some((grp, idx)) = g.by_replica.get(x) {
            let mut labels = BTreeSet::new();
            for c in connections
                .iter()
                .filter(|c| c.target.node == grp.base_component)
            {
                labels.insert(origin_label(&c.source.node, &c.source.port));
            }
            let ports = labels
                .iter()
                .flat_map(|l| [Port::input(l.clone()), Port::output(l.clone())])
                .collect();
            out.replica_proxies.push(ReplicaProxyInstance {
                id: proxy_id(x),
                on_unit: unit.clone(),
                group: grp.base_component.clone(),
                replica_index: *idx,
                ports,
            });
        }
    }
    for ((sender, group), sender_ports) in frontends {
        let ports = sender_ports
            .iter()
            .flat_map(|p| [Port::input(p.clone()), Port::output(p.clone())])
            .collect();
        out.frontends.push(FrontendInstance {
            id: frontend_id(&sender, &group),
            on_unit: unit.clone(),
            sender,
            target_group: group,
            ports,
        });
    }
    for (group, receiver) in consolidators {
        let kind = g.by_base[&group].consolidator_name.clone();
        out.consolidators.push(ConsolidatorInstance {
            id: consolidator_id(&group, &receiver),
            on_unit: unit.clone(),
            source_group: group,
            receiver,
            kind,
        });
    }
    out
}

/// Rewires the original `connections` onto replicas and building blocks.
/// `placement` maps every node of the ReSA to its unit.
pub fn rewire_connections(
    connections: &[Connection],
    groups: &[ReplicationGroup],
    placement: &BTreeMap<ComponentId, UnitId>,
) -> Vec<Connection> {
    let g = Groups::new(groups);
    let mut out: Vec<Connection> = Vec::new();
    let mut seen: BTreeSet<Connection> = BTreeSet::new();
    let tech = |a: &ComponentId, b: &ComponentId| {
        if placement.get(a) == placement.get(b) {
            Technology::Local
        } else {
            Technology::Socket
        }
    };
    let mut push = |c: Connection| {
        if seen.insert(c.clone()) {
            out.push(c);
        }
    };
    for c in connections {
        let (s, p) = (&c.source.node, &c.source.port);
        let (t, q) = (&c.target.node, &c.target.port);
        match (g.by_base.get(s), g.by_base.get(t)) {
            (None, None) => push(c.clone()),
            (None, Some(tg)) => {
                let f = frontend_id(s, t);
                push(Connection::new(
                    c.source.clone(),
                    Endpoint::new(f.clone(), p.clone()),
                    Technology::TotalOrderMulticast,
                ));
                let label = origin_label(s, p);
                for tj in &tg.replica_ids {
                    let r = proxy_id(tj);
                    push(Connection::new(
                        Endpoint::new(f.clone(), p.clone()),
                        Endpoint::new(r.clone(), label.clone()),
                        Technology::TotalOrderMulticast,
                    ));
                    push(Connection::new(
                        Endpoint::new(r, label.clone()),
                        Endpoint::new(tj.clone(), q.clone()),
                        Technology::Local,
                    ));
                }
            }
            (Some(sg), None) => {
                let cons = consolidator_id(s, t);
                for si in &sg.replica_ids {
                    push(Connection::new(
                        Endpoint::new(si.clone(), p.clone()),
                        Endpoint::new(cons.clone(), p.clone()),
                        tech(si, &cons),
                    ));
                }
                push(Connection::new(
                    Endpoint::new(cons.clone(), p.clone()),
                    c.target.clone(),
                    tech(&cons, t),
                ));
            }
            (Some(sg), Some(tg)) => {
                let label = origin_label(s, p);
                for si in &sg.replica_ids {
                    let f = frontend_id(si, t);
                    push(Connection::new(
                        Endpoint::new(si.clone(), p.clone()),
                        Endpoint::new(f.clone(), p.clone()),
                        Technology::TotalOrderMulticast,
                    ));
                    for tj in &tg.replica_ids {
                        push(Connection::new(
                            Endpoint::new(f.clone(), p.clone()),
                            Endpoint::new(proxy_id(tj), label.clone()),
                            Technology::TotalOrderMulticast,
                        ));
                    }
                }
                for tj in &tg.replica_ids {
                    let cons = consolidator_id(s, tj);
                    push(Connection::new(
                        Endpoint::new(proxy_id(tj), label.clone()),
                        Endpoint::new(cons.clone(), p.clone()),
                        Technology::Local,
                    ));
                    push(Connection::new(
                        Endpoint::new(cons, p.clone()),
                        Endpoint::new(tj.clone(), q.clone()),
                        Technology::Local,
                    ));
                }
            }
        }
    }
    out
}

/// Transforms `lsa` according to `config`. The input is not modified.
pub fn setup_replication(
    lsa: &Lsa,
    config: &ResilienceConfig,
    hints: &PlacementHints,
    registry: &ConsolidatorRegistry,
) -> Result<Resa, TransformError> {
    validate_lsa(lsa).map_err(TransformError::InvalidLsa)?;

    // Resolve groups and place their replicas.
    let mut groups = Vec::new();
    let mut replica_units: Vec<(ComponentId, UnitId)> = Vec::new();
    let existing_units: BTreeSet<&UnitId> = lsa.units.iter().map(|u| &u.id).collect();
    let mut taken: BTreeSet<UnitId> = existing_units.iter().map(|u| (*u).clone()).collect();
    for req in config.requests() {
        if lsa.component(&req.component).is_none() {
            return Err(TransformError::UnknownComponent(req.component));
        }
        if lsa.unit_of(&req.component).is_none() {
            return Err(TransformError::Unplaced(req.component));
        }
        registry
            .policy(&req.consolidator, req.f, req.fault_model, &req.params)
            .map_err(|e| TransformError::Consolidator {
                group: req.component.clone(),
                reason: e.to_string(),
            })?;
        let replicas: Vec<ComponentId> =
            (0..req.n).map(|i| replica_id(&req.component, i)).collect();
        let units: Vec<UnitId> = match hints.get(&req.component) {
            Some(candidates) => {
                let mut distinct: Vec<UnitId> = Vec::new();
                for u in candidates {
                    if !distinct.contains(u) {
                        distinct.push(u.clone());
                    }
                }
                if distinct.len() < req.n as usize {
                    return Err(TransformError::Infeasible {
                        group: req.component.clone(),
                        needed: req.n,
                        available: distinct.len(),
                    });
                }
                distinct.truncate(req.n as usize);
                distinct
            }
            None => (0..req.n)
                .map(|i| {
                    let mut name = replica_unit_name(&req.component, i);
                    while taken.contains(&name) {
                        name = UnitId(format!("{name}-r"));
                    }
                    taken.insert(name.clone());
                    name
                })
                .collect(),
        };
        replica_units.extend(replicas.iter().cloned().zip(units));
        groups.push(ReplicationGroup {
            base_component: req.component.clone(),
            fault_model: req.fault_model,
            f: req.f,
            n: req.n,
            replica_ids: replicas,
            consolidator_name: req.consolidator.clone(),
            params: req.params.clone(),
        });
    }
    let bases: BTreeSet<&ComponentId> = groups.iter().map(|g| &g.base_component).collect();

    // Units: drop replicated bases, remove units they leave empty, add replicas.
    let mut units: Vec<UnitSpec> = Vec::new();
    for u in &lsa.units {
        let kept: Vec<ComponentId> = u
            .components
            .iter()
            .filter(|c| !bases.contains(c))
            .cloned()
            .collect();
        if kept.is_empty() && !u.components.is_empty() {
            continue;
        }
        units.push(UnitSpec {
            id: u.id.clone(),
            components: kept,
        });
    }
    for (replica, unit) in &replica_units {
        match units.iter_mut().find(|u| &u.id == unit) {
            Some(u) => u.components.push(replica.clone()),
            None => units.push(UnitSpec {
                id: unit.clone(),
                components: vec![replica.clone()],
            }),
        }
    }

    // Components: replicas are copies of the base spec.
    let mut components: Vec<ComponentSpec> = Vec::new();
    for c in &lsa.components {
        match groups.iter().find(|g| g.base_component == c.id) {
            None => components.push(c.clone()),
            Some(g) => {
                for r in &g.replica_ids {
                    components.push(ComponentSpec {
                        id: r.clone(),
                        ..c.clone()
                    });
                }
            }
        }
    }

    // Insert building blocks unit by unit.
    let mut frontends = Vec::new();
    let mut replica_proxies = Vec::new();
    let mut consolidators = Vec::new();
    for u in &units {
        let blocks = insert_building_blocks(&u.id, &u.components, &groups, &lsa.connections);
        frontends.extend(blocks.frontends);
        replica_proxies.extend(blocks.replica_proxies);
        consolidators.extend(blocks.consolidators);
    }
    // Consolidators are components of their unit; their ports mirror the
    // source group's out-ports that reach the receiver.
    for ci in &consolidators {
        let g = groups
            .iter()
            .find(|g| g.base_component == ci.source_group)
            .expect("group exists");
        let receiver_base = groups
            .iter()
            .find(|gr| gr.replica_ids.contains(&ci.receiver))
            .map(|gr| gr.base_component.clone())
            .unwrap_or_else(|| ci.receiver.clone());
        let ports: BTreeSet<&String> = lsa
            .connections
            .iter()
            .filter(|c| c.source.node == ci.source_group && c.target.node == receiver_base)
            .map(|c| &c.source.port)
            .collect();
        let params = ConsolidatorParams {
            group: g.base_component.clone(),
            n: g.n,
            f: g.f,
            fault_model: g.fault_model,
            policy: g.consolidator_name.clone(),
            policy_params: g.params.clone(),
        };
        let mut spec = ComponentSpec::new(
            ci.id.clone(),
            BehaviorSpec::with_params(
                "consolidator",
                serde_json::to_value(params).expect("params serialize"),
            ),
        );
        for p in ports {
            spec.ports.push(Port::input(p.clone()));
            spec.ports.push(Port::output(p.clone()));
        }
        components.push(spec);
        if let Some(u) = units.iter_mut().find(|u| u.id == ci.on_unit) {
            u.components.push(ci.id.clone());
        }
    }

    let mut resa = Resa {
        components,
        connections: Vec::new(),
        units,
        groups,
        frontends,
        replica_proxies,
        consolidators,
    };
    let placement = resa.placement();
    resa.connections = rewire_connections(&lsa.connections, &resa.groups, &placement);
    resa.check_endpoints().map_err(TransformError::Internal)?;
    Ok(resa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::architecture::parse_resilience_config;

    fn fwd(id: &str) -> ComponentSpec {
        ComponentSpec::new(id, BehaviorSpec::new("forward"))
            .with_input("in")
            .with_output("out")
    }

    fn chain() -> Lsa {
        let mut lsa = Lsa {
            components: vec![
                fwd("A"),
                fwd("B"),
                ComponentSpec::new("C", BehaviorSpec::new("sink"))
                    .with_input("in")
                    .with_output("out"),
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
            units: ["A", "B", "C"]
                .iter()
                .map(|c| UnitSpec {
                    id: UnitId(format!("unit-{}", c.to_lowercase())),
                    components: vec![ComponentId::new(*c)],
                })
                .collect(),
        };
        lsa.normalize_technology();
        lsa
    }

    fn cfg(entries: &[(&str, u32, &str)]) -> ResilienceConfig {
        let parts: Vec<String> = entries
            .iter()
            .map(|(id, f, model)| {
                let cons = if *model == "BFT" { "BFTConsolidator" } else { "CFTConsolidator" };
                format!(
                    r#"{{"id":"{id}","mechanisms":{{"activeReplication":{{"enabled":true,"f":{f},"faultModel":"{model}","consolidator":"{cons}"}}}}}}"#
                )
            })
            .collect();
        let text = format!(r#"{{"components":[{}]}}"#, parts.join(","));
        parse_resilience_config(text.as_bytes(), &ConsolidatorRegistry::with_builtins()).unwrap()
    }

    fn run(lsa: &Lsa, c: &ResilienceConfig) -> Resa {
        setup_replication(
            lsa,
            c,
            &PlacementHints::new(),
            &ConsolidatorRegistry::with_builtins(),
        )
        .unwrap()
    }

    #[test]
    fn replicating_b_in_chain() {
        let resa = run(&chain(), &cfg(&[("B", 1, "BFT")]));
        let replicas: Vec<_> = resa
            .components
            .iter()
            .filter(|c| c.id.as_str().starts_with("B#"))
            .collect();
        assert_eq!(replicas.len(), 4);
        assert_eq!(resa.frontends.len(), 1);
        assert_eq!(resa.frontends[0].on_unit, UnitId::new("unit-a"));
        assert_eq!(resa.replica_proxies.len(), 4);
        assert_eq!(resa.consolidators.len(), 1);
        assert_eq!(resa.consolidators[0].on_unit, UnitId::new("unit-c"));
        let units: BTreeSet<_> = resa
            .units
            .iter()
            .map(|u| u.id.as_str().to_string())
            .collect();
        assert_eq!(
            units,
            ["unit-a", "unit-c", "unit-b0", "unit-b1", "unit-b2", "unit-b3"]
                .iter()
                .map(|s| s.to_string())
                .collect()
        );
        // consolidation side: 4 replicas -> cons, cons -> C
        let cons = consolidator_id(&"B".into(), &"C".into());
        let into_cons = resa
            .connections
            .iter()
            .filter(|c| c.target.node == cons)
            .count();
        let out_cons = resa
            .connections
            .iter()
            .filter(|c| c.source.node == cons)
            .count();
        assert_eq!(into_cons + out_cons, 5);
        assert!(resa
            .connections
            .iter()
            .all(|c| c.source.node.as_str() != "B" && c.target.node.as_str() != "B"));
    }

    #[test]
    fn disabled_config_is_identity() {
        let lsa = chain();
        let mut c = cfg(&[("B", 1, "BFT")]);
        c.components[0].mechanisms.active_replication.enabled = false;
        let resa = run(&lsa, &c);
        assert_eq!(resa.as_lsa(), lsa);
        assert!(
            resa.frontends.is_empty()
                && resa.replica_proxies.is_empty()
                && resa.consolidators.is_empty()
        );
    }

    #[test]
    fn group_to_group() {
        let resa = run(&chain(), &cfg(&[("B", 1, "BFT"), ("C", 1, "BFT")]));
        let replicas: BTreeSet<_> = resa
            .groups
            .iter()
            .flat_map(|g| g.replica_ids.iter())
            .collect();
        assert_eq!(
            resa.components
                .iter()
                .filter(|c| replicas.contains(&c.id))
                .count(),
            8
        );
        let f_to_r = resa
            .connections
            .iter()
            .filter(|c| {
                c.source.node.as_str().starts_with("frontend(B#")
                    && c.target.node.as_str().starts_with("replica-proxy(C#")
            })
            .count();
        assert_eq!(f_to_r, 16);
        assert_eq!(
            resa.frontends
                .iter()
                .filter(|f| f.target_group.as_str() == "C")
                .count(),
            4
        );
        assert_eq!(
            resa.consolidators
                .iter()
                .filter(|c| c.source_group.as_str() == "B")
                .count(),
            4
        );
    }

    #[test]
    fn insertion_rules_per_unit() {
        let lsa = chain();
        let resa = run(&lsa, &cfg(&[("B", 1, "BFT")]));
        let a = insert_building_blocks(
            &"unit-a".into(),
            &["A".into()],
            &resa.groups,
            &lsa.connections,
        );
        assert_eq!(
            (
                a.frontends.len(),
                a.consolidators.len(),
                a.replica_proxies.len()
            ),
            (1, 0, 0)
        );
        let c = insert_building_blocks(
            &"unit-c".into(),
            &["C".into()],
            &resa.groups,
            &lsa.connections,
        );
        assert_eq!(
            (
                c.frontends.len(),
                c.consolidators.len(),
                c.replica_proxies.len()
            ),
            (0, 1, 0)
        );
        let none = insert_building_blocks(
            &"unit-x".into(),
            &["X".into()],
            &resa.groups,
            &lsa.connections,
        );
        assert!(none.is_empty());
    }

    #[test]
    fn no_groups_keeps_connections() {
        let lsa = chain();
        let placement = lsa
            .units
            .iter()
            .flat_map(|u| u.components.iter().map(move |c| (c.clone(), u.id.clone())))
            .collect();
        assert_eq!(
            rewire_connections(&lsa.connections, &[], &placement),
            lsa.connections
        );
    }

    #[test]
    fn hints_must_offer_enough_units() {
        let mut hints = PlacementHints::new();
        hints.insert("B".into(), vec!["x".into(), "y".into(), "x".into()]);
        let err = setup_replication(
            &chain(),
            &cfg(&[("B", 1, "BFT")]),
            &hints,
            &ConsolidatorRegistry::with_builtins(),
        )
        .unwrap_err();
        assert_eq!(
            err,
            TransformError::Infeasible {
                group: "B".into(),
                needed: 4,
                available: 2
            }
        );

        hints.insert(
            "B".into(),
            vec!["p".into(), "q".into(), "r".into(), "unit-a".into()],
        );
        let resa = setup_replication(
            &chain(),
            &cfg(&[("B", 1, "BFT")]),
            &hints,
            &ConsolidatorRegistry::with_builtins(),
        )
        .unwrap();
        let ua = resa
            .units
            .iter()
            .find(|u| u.id.as_str() == "unit-a")
            .unwrap();
        assert!(ua.components.contains(&"B#3".into()));
    }

    #[test]
    fn unknown_and_unplaced_components() {
        let err = setup_replication(
            &chain(),
            &cfg(&[("Z", 1, "BFT")]),
            &PlacementHints::new(),
            &ConsolidatorRegistry::with_builtins(),
        )
        .unwrap_err();
        assert_eq!(err, TransformError::UnknownComponent("Z".into()));
        let mut lsa = chain();
        lsa.units.retain(|u| u.id.as_str() != "unit-b");
        let err = setup_replication(
            &lsa,
            &cfg(&[("B", 1, "BFT")]),
            &PlacementHints::new(),
            &ConsolidatorRegistry::with_builtins(),
        )
        .unwrap_err();
        assert!(matches!(err, TransformError::InvalidLsa(_)));
    }

    #[test]
    fn input_lsa_not_mutated_and_json_round_trip() {
        let lsa = chain();
        let before = lsa.clone();
        let resa = run(&lsa, &cfg(&[("B", 1, "CFT")]));
        assert_eq!(lsa, before);
        assert_eq!(Resa::from_json(&resa.to_json()).unwrap(), resa);
        assert_eq!(resa.group(&"B".into()).unwrap().n, 3);
    }

    #[test]
    fn replica_unit_names_are_dns_friendly() {
        assert_eq!(
            replica_unit_name(&"Comp-B".into(), 2).as_str(),
            "unit-comp-b2"
        );
        assert_eq!(replica_unit_name(&"B".into(), 2).as_str(), "unit-b2");
    }
}
