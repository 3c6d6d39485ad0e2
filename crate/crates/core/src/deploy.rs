//! Placement of units onto devices, key distribution planning and emission of
//! deployment artifacts.
//!
//! Placement honors device capacity and anti-affinity: the units hosting the
//! replicas of one group must land on pairwise distinct devices. The search is
//! a backtracking assignment over units ordered largest-group-first, so it is
//! complete: it fails only when no assignment exists.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::architecture::ReplicationGroup;
use crate::auth::{KeyPair, PublicKey};
use crate::model::{ComponentId, UnitId};
use crate::transform::Resa;

pub const BASE_PORT: u16 = 11000;
pub const GROUP_PORT_OFFSET: u16 = 100;
pub const SEARCH_BUDGET: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceDescriptor {
    pub name: String,
    #[serde(rename = "type", default)]
    pub device_type: String,
    #[serde(default)]
    pub architecture: String,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
    pub capacity: u32,
}

impl DeviceDescriptor {
    pub fn new(name: impl Into<String>, capacity: u32) -> Self {
        DeviceDescriptor {
            name: name.into(),
            device_type: "rpi4b".into(),
            architecture: "arm64".into(),
            tags: BTreeMap::new(),
            capacity,
        }
    }

    pub fn with_location(mut self, location: &str) -> Self {
        self.tags.insert("location".into(), location.into());
        self
    }
}

/// Parses a device inventory: a JSON array of device descriptors.
pub fn parse_devices(text: &str) -> Result<Vec<DeviceDescriptor>, PlanError> {
    let devices: Vec<DeviceDescriptor> =
        serde_json::from_str(text).map_err(|e| PlanError::BadInventory(e.to_string()))?;
    let mut names = BTreeSet::new();
    for d in &devices {
        if !names.insert(&d.name) {
            return Err(PlanError::BadInventory(format!(
                "duplicate device name {}",
                d.name
            )));
        }
    }
    Ok(devices)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("device inventory: {0}")]
    BadInventory(String),
    #[error("pin references unknown unit {0}")]
    UnknownUnit(UnitId),
    #[error("pin references unknown device {0}")]
    UnknownDevice(String),
    #[error("group {group}: {needed} replicas need distinct devices but only {eligible} are eligible (shortfall {shortfall})")]
    GroupInfeasible {
        group: ComponentId,
        needed: usize,
        eligible: usize,
        shortfall: usize,
    },
    #[error(
        "pins violate anti-affinity: units {a} and {b} of group {group} both pinned to {device}"
    )]
    PinConflict {
        group: ComponentId,
        a: UnitId,
        b: UnitId,
        device: String,
    },
    #[error("pins exceed capacity of device {device} ({capacity})")]
    PinCapacity { device: String, capacity: u32 },
    #[error("no assignment satisfies capacity, anti-affinity and pins for {units} units on {devices} devices")]
    Infeasible { units: usize, devices: usize },
    #[error("placement search exceeded {0} steps")]
    SearchExhausted(u64),
}

/// Key material placement for one unit (container).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyBundle {
    /// Key pairs whose secret is held by this unit.
    pub own_keys: Vec<KeyPair>,
    /// Public keys of the replicas of groups this unit participates in.
    pub public_keys: Vec<PublicKey>,
    /// Public keys of clients (frontends) invoking groups hosted here.
    pub client_public_keys: Vec<PublicKey>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPlan {
    pub group: ComponentId,
    pub replica_keys: Vec<KeyPair>,
    /// Frontend id → its client key pair.
    pub client_keys: BTreeMap<ComponentId, KeyPair>,
    pub bundles: BTreeMap<UnitId, KeyBundle>,
}

impl KeyPlan {
    /// Units holding any public key of the group.
    pub fn public_key_recipients(&self) -> BTreeSet<UnitId> {
        self.bundles
            .iter()
            .filter(|(_, b)| !b.public_keys.is_empty())
            .map(|(u, _)| u.clone())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    pub assignment: BTreeMap<UnitId, String>,
    pub key_plans: Vec<KeyPlan>,
}

fn replica_principal(group: &ComponentId, index: usize) -> String {
    format!("replica:{group}:{index}")
}

fn client_principal(frontend: &ComponentId) -> String {
    format!("client:{frontend}")
}

/// Generates one key pair per replica plus a client key pair per frontend
/// targeting the group, and decides which unit receives which key.
pub fn generate_keys(group: &ReplicationGroup, resa: &Resa, rng: &mut ChaCha20Rng) -> KeyPlan {
    let placement = resa.placement();
    let replica_keys: Vec<KeyPair> = (0..group.n as usize)
        .map(|i| KeyPair::generate(replica_principal(&group.base_component, i), rng))
        .collect();
    let frontends: Vec<_> = resa
        .frontends
        .iter()
        .filter(|f| f.target_group == group.base_component)
        .collect();
    let client_keys: BTreeMap<ComponentId, KeyPair> = frontends
        .iter()
        .map(|f| {
            (
                f.id.clone(),
                KeyPair::generate(client_principal(&f.id), rng),
            )
        })
        .collect();
    let publics: Vec<PublicKey> = replica_keys.iter().map(KeyPair::public).collect();
    let client_publics: Vec<PublicKey> = client_keys.values().map(KeyPair::public).collect();

    let mut bundles: BTreeMap<UnitId, KeyBundle> = BTreeMap::new();
    for (i, r) in group.replica_ids.iter().enumerate() {
        let Some(unit) = placement.get(r) else {
            continue;
        };
        let b = bundles.entry(unit.clone()).or_default();
        b.own_keys.push(replica_keys[i].clone());
        extend_unique(&mut b.public_keys, &publics);
        extend_unique(&mut b.client_public_keys, &client_publics);
    }
    for f in &frontends {
        let b = bundles.entry(f.on_unit.clone()).or_default();
        b.own_keys.push(client_keys[&f.id].clone());
        extend_unique(&mut b.public_keys, &publics);
    }
    KeyPlan {
        group: group.base_component.clone(),
        replica_keys,
        client_keys,
        bundles,
    }
}

fn extend_unique(into: &mut Vec<PublicKey>, keys: &[PublicKey]) {
    for k in keys {
        if !into.contains(k) {
            into.push(k.clone());
        }
    }
}

/// Units of each group, in group order.
fn group_units(resa: &Resa) -> Vec<(ComponentId, Vec<UnitId>)> {
    let placement = resa.placement();
    resa.groups
        .iter()
        .map(|g| {
            (
                g.base_component.clone(),
                g.replica_ids
                    .iter()
                    .filter_map(|r| placement.get(r).cloned())
                    .collect(),
            )
        })
        .collect()
}

struct Search<'a> {
    devices: &'a [DeviceDescriptor],
    /// For each unit in search order: indices of the groups it belongs to.
    unit_groups: Vec<Vec<usize>>,
    group_count: usize,
    load: Vec<u32>,
    /// Devices used per group.
    used: Vec<BTreeSet<usize>>,
    locations: Vec<BTreeSet<String>>,
    choice: Vec<Option<usize>>,
    steps: u64,
}

impl Search<'_> {
    fn fits(&self, unit: usize, dev: usize) -> bool {
        self.load[dev] < self.devices[dev].capacity
            && self.unit_groups[unit]
                .iter()
                .all(|g| !self.used[*g].contains(&dev))
    }

    fn place(&mut self, unit: usize, dev: usize) {
        self.load[dev] += 1;
        for &g in &self.unit_groups[unit] {
            self.used[g].insert(dev);
            if let Some(l) = self.devices[dev].tags.get("location") {
                self.locations[g].insert(l.clone());
            }
        }
        self.choice[unit] = Some(dev);
    }

    fn unplace(&mut self, unit: usize, dev: usize) {
        self.load[dev] -= 1;
        for &g in &self.unit_groups[unit].clone() {
            self.used[g].remove(&dev);
            self.locations[g] = self.used[g]
                .iter()
                .filter_map(|d| self.devices[*d].tags.get("location").cloned())
                .collect();
        }
        self.choice[unit] = None;
    }

    fn prune(&self, next: usize) -> bool {
        let remaining = self.choice[next..].iter().filter(|c| c.is_none()).count();
        let spare: u64 = self
            .devices
            .iter()
            .enumerate()
            .map(|(i, d)| (d.capacity - self.load[i].min(d.capacity)) as u64)
            .sum();
        if (remaining as u64) > spare {
            return true;
        }
        for g in 0..self.group_count {
            let left = (next..self.choice.len())
                .filter(|u| self.choice[*u].is_none() && self.unit_groups[*u].contains(&g))
                .count();
            if left == 0 {
                continue;
            }
            let free = (0..self.devices.len())
                .filter(|d| !self.used[g].contains(d) && self.load[*d] < self.devices[*d].capacity)
                .count();
            if left > free {
                return true;
            }
        }
        false
    }

    fn candidates(&self, unit: usize) -> Vec<usize> {
        let mut c: Vec<usize> = (0..self.devices.len())
            .filter(|d| self.fits(unit, *d))
            .collect();
        // Prefer fresh locations for the unit's groups, then the least loaded device.
        c.sort_by_key(|&d| {
            let loc = self.devices[d].tags.get("location");
            let repeats = self.unit_groups[unit]
                .iter()
                .filter(|g| loc.is_some_and(|l| self.locations[**g].contains(l)))
                .count();
            (repeats, self.load[d], d)
        });
        c
    }

    fn solve(&mut self, next: usize) -> Result<bool, PlanError> {
        if next == self.choice.len() {
            return Ok(true);
        }
        if self.choice[next].is_some() {
            return self.solve(next + 1);
        }
        self.steps += 1;
        if self.steps > SEARCH_BUDGET {
            return Err(PlanError::SearchExhausted(SEARCH_BUDGET));
        }
        if self.prune(next) {
            return Ok(false);
        }
        for dev in self.candidates(next) {
            self.place(next, dev);
            if self.solve(next + 1)? {
                return Ok(true);
            }
            self.unplace(next, dev);
        }
        Ok(false)
    }
}

/// Assigns every unit of `resa` to a device and plans key distribution.
pub fn plan_deployment(
    resa: &Resa,
    devices: &[DeviceDescriptor],
    pins: &BTreeMap<UnitId, String>,
    seed: u64,
) -> Result<DeploymentPlan, PlanError> {
    let unit_ids: BTreeSet<&UnitId> = resa.units.iter().map(|u| &u.id).collect();
    let dev_index: BTreeMap<&str, usize> = devices
        .iter()
        .enumerate()
        .map(|(i, d)| (d.name.as_str(), i))
        .collect();
    for (u, d) in pins {
        if !unit_ids.contains(u) {
            return Err(PlanError::UnknownUnit(u.clone()));
        }
        if !dev_index.contains_key(d.as_str()) {
            return Err(PlanError::UnknownDevice(d.clone()));
        }
    }

    let groups = group_units(resa);
    // Pins that break anti-affinity are rejected up front.
    for (gid, units) in &groups {
        let mut seen: BTreeMap<&String, &UnitId> = BTreeMap::new();
        for u in units {
            if let Some(d) = pins.get(u) {
                if let Some(prev) = seen.insert(d, u) {
                    return Err(PlanError::PinConflict {
                        group: gid.clone(),
                        a: prev.clone(),
                        b: u.clone(),
                        device: d.clone(),
                    });
                }
            }
        }
    }
    let mut pin_load: BTreeMap<&str, u32> = BTreeMap::new();
    for d in pins.values() {
        *pin_load.entry(d).or_default() += 1;
    }
    for (d, load) in &pin_load {
        let cap = devices[dev_index[d]].capacity;
        if *load > cap {
            return Err(PlanError::PinCapacity {
                device: d.to_string(),
                capacity: cap,
            });
        }
    }
    let eligible = devices.iter().filter(|d| d.capacity > 0).count();
    for (gid, units) in &groups {
        if units.len() > eligible {
            return Err(PlanError::GroupInfeasible {
                group: gid.clone(),
                needed: units.len(),
                eligible,
                shortfall: units.len() - eligible,
            });
        }
    }

    // Search order: units of larger groups first, then the rest.
    let mut order: Vec<UnitId> = Vec::new();
    let mut by_size: Vec<&(ComponentId, Vec<UnitId>)> = groups.iter().collect();
    by_size.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
    for (_, units) in by_size {
        for u in units {
            if !order.contains(u) {
                order.push(u.clone());
            }
        }
    }
    for u in &resa.units {
        if !order.contains(&u.id) {
            order.push(u.id.clone());
        }
    }
    let unit_groups: Vec<Vec<usize>> = order
        .iter()
        .map(|u| {
            groups
                .iter()
                .enumerate()
                .filter(|(_, (_, us))| us.contains(u))
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    let mut search = Search {
        devices,
        unit_groups,
        group_count: groups.len(),
        load: vec![0; devices.len()],
        used: vec![BTreeSet::new(); groups.len()],
        locations: vec![BTreeSet::new(); groups.len()],
        choice: vec![None; order.len()],
        steps: 0,
    };
    for (i, u) in order.iter().enumerate() {
        if let Some(d) = pins.get(u) {
            search.place(i, dev_index[d.as_str()]);
        }
    }
    if !search.solve(0)? {
        return Err(PlanError::Infeasible {
            units: order.len(),
            devices: devices.len(),
        });
    }
    let assignment: BTreeMap<UnitId, String> = order
        .iter()
        .zip(&search.choice)
        .map(|(u, d)| (u.clone(), devices[d.expect("all placed")].name.clone()))
        .collect();

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let key_plans = resa
        .groups
        .iter()
        .map(|g| generate_keys(g, resa, &mut rng))
        .collect();
    Ok(DeploymentPlan {
        assignment,
        key_plans,
    })
}

/// Checks anti-affinity and capacity of a plan; returns violations.
pub fn check_plan(plan: &DeploymentPlan, resa: &Resa, devices: &[DeviceDescriptor]) -> Vec<String> {
    let mut errs = Vec::new();
    for u in &resa.units {
        if !plan.assignment.contains_key(&u.id) {
            errs.push(format!("unit {} unassigned", u.id));
        }
    }
    for d in devices {
        let load = plan.assignment.values().filter(|n| **n == d.name).count() as u32;
        if load > d.capacity {
            errs.push(format!(
                "device {} over capacity: {load} > {}",
                d.name, d.capacity
            ));
        }
    }
    for (gid, units) in group_units(resa) {
        let devs: BTreeSet<&String> = units
            .iter()
            .filter_map(|u| plan.assignment.get(u))
            .collect();
        if devs.len() != units.len() {
            errs.push(format!(
                "group {gid}: {} replicas on {} devices",
                units.len(),
                devs.len()
            ));
        }
    }
    errs
}

/// Checks that no secret appears in more than one bundle and that public
/// keys reach exactly the group's replica and frontend units.
pub fn check_key_confinement(plan: &KeyPlan, resa: &Resa) -> Vec<String> {
    let mut errs = Vec::new();
    let mut holders: BTreeMap<&[u8; 32], Vec<&UnitId>> = BTreeMap::new();
    for (u, b) in &plan.bundles {
        for k in &b.own_keys {
            holders.entry(&k.secret_key).or_default().push(u);
        }
    }
    for (secret, units) in &holders {
        if units.len() > 1 {
            errs.push(format!(
                "secret {}.. held by {units:?}",
                hex::encode(&secret[..4])
            ));
        }
    }
    let placement = resa.placement();
    let Some(group) = resa.group(&plan.group) else {
        return vec![format!("unknown group {}", plan.group)];
    };
    let mut expected: BTreeSet<UnitId> = group
        .replica_ids
        .iter()
        .filter_map(|r| placement.get(r).cloned())
        .collect();
    expected.extend(
        resa.frontends
            .iter()
            .filter(|f| f.target_group == plan.group)
            .map(|f| f.on_unit.clone()),
    );
    if plan.public_key_recipients() != expected {
        errs.push(format!(
            "public keys of {} reach {:?}, expected {expected:?}",
            plan.group,
            plan.public_key_recipients()
        ));
    }
    errs
}

/// Host configuration of a group: `<replicaIndex> <service-name> <port>` per line.
pub fn host_config(resa: &Resa, group_index: usize) -> String {
    let g = &resa.groups[group_index];
    let placement = resa.placement();
    let port = BASE_PORT + GROUP_PORT_OFFSET * group_index as u16;
    let mut out = String::new();
    for (i, r) in g.replica_ids.iter().enumerate() {
        let unit = placement.get(r).map(|u| u.as_str()).unwrap_or("?");
        out.push_str(&format!("{i} {unit} {port}\n"));
    }
    out
}

/// Renders all deployment artifacts as path → bytes.
pub fn emit_artifacts(plan: &DeploymentPlan, resa: &Resa) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let pretty = |v: serde_json::Value| {
        let mut s = serde_json::to_string_pretty(&v).expect("json");
        s.push('\n');
        s.into_bytes()
    };

    let mut units: Vec<&crate::model::UnitSpec> = resa.units.iter().collect();
    units.sort_by(|a, b| a.id.cmp(&b.id));
    let manifest_units: Vec<serde_json::Value> = units
        .iter()
        .map(|u| {
            json!({
                "unit": u.id,
                "device": plan.assignment.get(&u.id),
                "service": u.id,
                "configMap": format!("units/{}.json", u.id),
            })
        })
        .collect();
    files.insert(
        "manifest.json".to_string(),
        pretty(json!({ "kind": "DeploymentManifest", "units": manifest_units })),
    );

    let placement = resa.placement();
    for u in &units {
        let on_unit = |n: &ComponentId| placement.get(n) == Some(&u.id);
        let components: Vec<_> = resa
            .components
            .iter()
            .filter(|c| u.components.contains(&c.id))
            .collect();
        let connections: Vec<_> = resa
            .connections
            .iter()
            .filter(|c| on_unit(&c.source.node) || on_unit(&c.target.node))
            .collect();
        let replicas: Vec<serde_json::Value> = resa
            .groups
            .iter()
            .flat_map(|g| {
                g.replica_ids.iter().enumerate().filter(|(_, r)| u.components.contains(r)).map(move |(i, r)| {
                    json!({ "component": r, "group": g.base_component, "index": i, "n": g.n, "f": g.f, "faultModel": g.fault_model })
                })
            })
            .collect();
        let frontends: Vec<_> = resa
            .frontends
            .iter()
            .filter(|f| f.on_unit == u.id)
            .collect();
        let proxies: Vec<_> = resa
            .replica_proxies
            .iter()
            .filter(|r| r.on_unit == u.id)
            .collect();
        let cfg = json!({
            "unit": u.id,
            "device": plan.assignment.get(&u.id),
            "components": components,
            "connections": connections,
            "replicas": replicas,
            "frontends": frontends,
            "replicaProxies": proxies,
        });
        files.insert(format!("units/{}.json", u.id), pretty(cfg));
    }

    for (i, g) in resa.groups.iter().enumerate() {
        files.insert(
            format!("hosts/{}.config", g.base_component),
            host_config(resa, i).into_bytes(),
        );
    }

    let mut bundles: BTreeMap<&UnitId, Vec<(&ComponentId, &KeyBundle)>> = BTreeMap::new();
    for kp in &plan.key_plans {
        for (u, b) in &kp.bundles {
            bundles.entry(u).or_default().push((&kp.group, b));
        }
    }
    for (u, list) in bundles {
        let v: BTreeMap<String, &KeyBundle> =
            list.into_iter().map(|(g, b)| (g.to_string(), b)).collect();
        files.insert(
            format!("keys/{u}.json"),
            pretty(serde_json::to_value(v).expect("bundle")),
        );
    }
    files
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::architecture::{Connection, Endpoint, FaultModel, Lsa, Technology};
    use crate::consolidate::ConsolidatorRegistry;
    use crate::model::{BehaviorSpec, ComponentSpec, UnitSpec};
    use crate::transform::{setup_replication, PlacementHints};

    fn fig2_resa(f: u32, model: &str) -> Resa {
        let fwd = |id: &str| {
            ComponentSpec::new(id, BehaviorSpec::new("forward"))
                .with_input("in")
                .with_output("out")
        };
        let lsa = Lsa {
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
        };
        let cons = if model == "BFT" {
            "BFTConsolidator"
        } else {
            "CFTConsolidator"
        };
        let text = format!(
            r#"{{"components":[{{"id":"B","mechanisms":{{"activeReplication":{{"enabled":true,"f":{f},"faultModel":"{model}","consolidator":"{cons}"}}}}}}]}}"#
        );
        let reg = ConsolidatorRegistry::with_builtins();
        let cfg = crate::architecture::parse_resilience_config(text.as_bytes(), &reg).unwrap();
        setup_replication(&lsa, &cfg, &PlacementHints::new(), &reg).unwrap()
    }

    fn devices(n: usize) -> Vec<DeviceDescriptor> {
        (0..n)
            .map(|i| DeviceDescriptor::new(format!("pi{i}"), 2))
            .collect()
    }

    #[test]
    fn four_replicas_on_four_devices() {
        let resa = fig2_resa(1, "BFT");
        let plan = plan_deployment(&resa, &devices(6), &BTreeMap::new(), 1).unwrap();
        assert!(check_plan(&plan, &resa, &devices(6)).is_empty());
        let placement = resa.placement();
        let devs: BTreeSet<_> = resa.groups[0]
            .replica_ids
            .iter()
            .map(|r| &plan.assignment[&placement[r]])
            .collect();
        assert_eq!(devs.len(), 4);
    }

    #[test]
    fn three_devices_is_short_by_one() {
        let resa = fig2_resa(1, "BFT");
        let err = plan_deployment(&resa, &devices(3), &BTreeMap::new(), 1).unwrap_err();
        assert_eq!(
            err,
            PlanError::GroupInfeasible {
                group: "B".into(),
                needed: 4,
                eligible: 3,
                shortfall: 1
            }
        );
    }

    #[test]
    fn pinning_two_replicas_together_is_rejected() {
        let resa = fig2_resa(1, "BFT");
        let pins: BTreeMap<UnitId, String> = [("unit-b0", "pi0"), ("unit-b1", "pi0")]
            .iter()
            .map(|(u, d)| (UnitId::new(*u), d.to_string()))
            .collect();
        let err = plan_deployment(&resa, &devices(6), &pins, 1).unwrap_err();
        assert!(matches!(err, PlanError::PinConflict { .. }));
        assert!(err.to_string().contains("anti-affinity"));
    }

    #[test]
    fn pins_are_honored() {
        let resa = fig2_resa(1, "BFT");
        let pins: BTreeMap<UnitId, String> = [(UnitId::new("unit-b2"), "pi5".to_string())]
            .into_iter()
            .collect();
        let plan = plan_deployment(&resa, &devices(6), &pins, 1).unwrap();
        assert_eq!(plan.assignment[&UnitId::new("unit-b2")], "pi5");
    }

    #[test]
    fn key_counts() {
        let resa = fig2_resa(1, "BFT");
        let plan = plan_deployment(&resa, &devices(6), &BTreeMap::new(), 9).unwrap();
        let kp = &plan.key_plans[0];
        assert_eq!(kp.replica_keys.len(), 4);
        for i in 0..4 {
            let b = &kp.bundles[&UnitId(format!("unit-b{i}"))];
            assert_eq!(b.own_keys.len(), 1);
            assert_eq!(b.own_keys[0].owner, format!("replica:B:{i}"));
            assert_eq!(b.public_keys.len(), 4);
        }
        let fe = &kp.bundles[&UnitId::new("unit-a")];
        assert!(fe.own_keys.iter().all(|k| !k.owner.starts_with("replica:")));
        assert_eq!(fe.own_keys.len(), 1, "own client key pair");
        assert_eq!(fe.public_keys.len(), 4);
        assert!(check_key_confinement(kp, &resa).is_empty());
    }

    #[test]
    fn single_replica_holds_own_key() {
        let resa = fig2_resa(0, "BFT");
        let plan = plan_deployment(&resa, &devices(3), &BTreeMap::new(), 2).unwrap();
        let kp = &plan.key_plans[0];
        assert_eq!(kp.replica_keys.len(), 1);
        let b = &kp.bundles[&UnitId::new("unit-b0")];
        assert_eq!(b.own_keys[0], kp.replica_keys[0]);
        assert_eq!(resa.groups[0].fault_model, FaultModel::Bft);
    }

    #[test]
    fn artifact_counts_and_host_lines() {
        let resa = fig2_resa(1, "BFT");
        let plan = plan_deployment(&resa, &devices(6), &BTreeMap::new(), 1).unwrap();
        let files = emit_artifacts(&plan, &resa);
        assert_eq!(files.keys().filter(|k| *k == "manifest.json").count(), 1);
        assert_eq!(files.keys().filter(|k| k.starts_with("units/")).count(), 6);
        let hosts: Vec<_> = files.keys().filter(|k| k.starts_with("hosts/")).collect();
        assert_eq!(hosts.len(), 1);
        let text = String::from_utf8(files[hosts[0]].clone()).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().nth(2), Some("2 unit-b2 11000"));
        assert_eq!(emit_artifacts(&plan, &resa), files);
    }

    #[test]
    fn empty_resa_has_empty_manifest() {
        let resa = Resa::default();
        let plan = plan_deployment(&resa, &devices(1), &BTreeMap::new(), 0).unwrap();
        let files = emit_artifacts(&plan, &resa);
        let m: serde_json::Value = serde_json::from_slice(&files["manifest.json"]).unwrap();
        assert_eq!(m["units"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn location_spread_preferred() {
        let resa = fig2_resa(1, "CFT");
        let devs = vec![
            DeviceDescriptor::new("a1", 3).with_location("lab"),
            DeviceDescriptor::new("a2", 3).with_location("lab"),
            DeviceDescriptor::new("b1", 3).with_location("hall"),
            DeviceDescriptor::new("c1", 3).with_location("roof"),
        ];
        let plan = plan_deployment(&resa, &devs, &BTreeMap::new(), 0).unwrap();
        let placement = resa.placement();
        let locs: BTreeSet<_> = resa.groups[0]
            .replica_ids
            .iter()
            .map(|r| {
                devs.iter()
                    .find(|d| d.name == plan.assignment[&placement[r]])
                    .unwrap()
                    .tags["location"]
                    .clone()
            })
            .collect();
        assert_eq!(locs.len(), 3);
    }
}
