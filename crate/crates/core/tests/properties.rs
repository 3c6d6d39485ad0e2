use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use repli_core::architecture::{
    group_size, parse_resilience_config, Connection, Endpoint, FaultModel, Lsa, Technology,
};
use repli_core::consolidate::{
    Consolidator, ConsolidatorRegistry, BFT_CONSOLIDATOR, CFT_CONSOLIDATOR,
};
use repli_core::model::{BehaviorSpec, ComponentId, ComponentSpec, Event, UnitId, UnitSpec};
use repli_core::transform::{setup_replication, PlacementHints};

fn model_name(m: FaultModel) -> &'static str {
    match m {
        FaultModel::Bft => "BFT",
        FaultModel::Cft => "CFT",
    }
}

fn config_text(entries: &[(String, u32, FaultModel, bool)]) -> String {
    let parts: Vec<String> = entries
        .iter()
        .map(|(id, f, m, enabled)| {
            let cons = if *m == FaultModel::Bft { BFT_CONSOLIDATOR } else { CFT_CONSOLIDATOR };
            format!(
                r#"{{"id":"{id}","mechanisms":{{"activeReplication":{{"enabled":{enabled},"f":{f},"faultModel":"{}","consolidator":"{cons}"}}}}}}"#,
                model_name(*m)
            )
        })
        .collect();
    format!(r#"{{"components":[{}]}}"#, parts.join(","))
}

fn arb_model() -> impl Strategy<Value = FaultModel> {
    prop_oneof![Just(FaultModel::Bft), Just(FaultModel::Cft)]
}

/// Components X0..Xk, each on its own unit, with random forward edges.
fn arb_lsa() -> impl Strategy<Value = Lsa> {
    (2usize..7).prop_flat_map(|k| {
        let pairs: Vec<(usize, usize)> = (0..k)
            .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
            .collect();
        proptest::sample::subsequence(pairs.clone(), 1..=pairs.len()).prop_map(move |edges| {
            let mut lsa = Lsa {
                components: (0..k)
                    .map(|i| {
                        ComponentSpec::new(format!("X{i}"), BehaviorSpec::new("forward"))
                            .with_input("in")
                            .with_output("out")
                    })
                    .collect(),
                connections: edges
                    .iter()
                    .map(|(i, j)| {
                        Connection::new(
                            Endpoint::new(format!("X{i}"), "out"),
                            Endpoint::new(format!("X{j}"), "in"),
                            Technology::Local,
                        )
                    })
                    .collect(),
                units: (0..k)
                    .map(|i| UnitSpec {
                        id: UnitId(format!("host{i}")),
                        components: vec![ComponentId(format!("X{i}"))],
                    })
                    .collect(),
            };
            lsa.normalize_technology();
            lsa
        })
    })
}

proptest! {
    #[test]
    fn group_size_matches_closed_form_and_is_monotone(f in 0i64..1000, model in arb_model()) {
        let per_fault = if model == FaultModel::Bft { 3 } else { 2 };
        prop_assert_eq!(group_size(f, model).unwrap() as i64, per_fault * f + 1);
        prop_assert!(group_size(f + 1, model).unwrap() > group_size(f, model).unwrap());
        prop_assert!(group_size(-f - 1, model).is_err());
    }

    #[test]
    fn resilience_config_round_trips(entries in proptest::collection::vec((0u32..5, arb_model(), any::<bool>()), 0..6)) {
        let entries: Vec<(String, u32, FaultModel, bool)> =
            entries.into_iter().enumerate().map(|(i, (f, m, e))| (format!("C{i}"), f, m, e)).collect();
        let reg = ConsolidatorRegistry::with_builtins();
        let cfg = parse_resilience_config(config_text(&entries).as_bytes(), &reg).unwrap();
        let again = parse_resilience_config(cfg.to_json().as_bytes(), &reg).unwrap();
        prop_assert_eq!(&again, &cfg);
        let requests = cfg.requests();
        prop_assert_eq!(requests.len(), entries.iter().filter(|e| e.3).count());
        for r in requests {
            prop_assert_eq!(r.n, group_size(r.f as i64, r.fault_model).unwrap());
        }
    }

    #[test]
    fn transform_counts_match_oracle(
        lsa in arb_lsa(),
        picks in proptest::collection::vec((any::<bool>(), 0u32..3, arb_model()), 7),
    ) {
        let k = lsa.components.len();
        let chosen: Vec<(String, u32, FaultModel, bool)> =
            (0..k).filter(|i| picks[*i].0).map(|i| (format!("X{i}"), picks[i].1, picks[i].2, true)).collect();
        let reg = ConsolidatorRegistry::with_builtins();
        let cfg = parse_resilience_config(config_text(&chosen).as_bytes(), &reg).unwrap();
        let resa = setup_replication(&lsa, &cfg, &PlacementHints::new(), &reg).unwrap();

        let n_of: BTreeMap<String, u32> =
            chosen.iter().map(|(id, f, m, _)| (id.clone(), group_size(*f as i64, *m).unwrap())).collect();
        let mult = |id: &str| n_of.get(id).copied().unwrap_or(1);
        let edges: BTreeSet<(String, String)> =
            lsa.connections.iter().map(|c| (c.source.node.0.clone(), c.target.node.0.clone())).collect();
        let frontends: u32 = edges.iter().filter(|(_, t)| n_of.contains_key(t)).map(|(s, _)| mult(s)).sum();
        let consolidators: u32 = edges.iter().filter(|(s, _)| n_of.contains_key(s)).map(|(_, t)| mult(t)).sum();
        let replicas: u32 = n_of.values().sum();

        prop_assert_eq!(resa.frontends.len() as u32, frontends);
        prop_assert_eq!(resa.consolidators.len() as u32, consolidators);
        prop_assert_eq!(resa.replica_proxies.len() as u32, replicas);
        let replica_ids: BTreeSet<&ComponentId> = resa.groups.iter().flat_map(|g| g.replica_ids.iter()).collect();
        prop_assert_eq!(replica_ids.len() as u32, replicas);
        prop_assert_eq!(resa.units.len() as u32, (k - n_of.len()) as u32 + replicas);
        for base in n_of.keys() {
            prop_assert!(!resa.components.iter().any(|c| c.id.as_str() == base), "base {} removed", base);
        }
        // Replicas of one group never share a unit.
        for g in &resa.groups {
            let units: BTreeSet<_> = g.replica_ids.iter().map(|r| resa.unit_of(r).unwrap()).collect();
            prop_assert_eq!(units.len(), g.replica_ids.len());
        }
        prop_assert!(resa.check_endpoints().is_ok());
    }

    #[test]
    fn consolidator_releases_correct_value_once_in_any_order(
        f in 1u32..3,
        slots in 1u64..6,
        seed in any::<u64>(),
        faulty_mask in any::<u8>(),
    ) {
        let n = 3 * f + 1;
        let policy = ConsolidatorRegistry::with_builtins().policy(BFT_CONSOLIDATOR, f, FaultModel::Bft, &serde_json::Value::Null).unwrap();
        let faulty: BTreeSet<u32> = (0..n).filter(|r| faulty_mask & (1 << r) != 0).take(f as usize).collect();
        let mut votes = Vec::new();
        for seq in 0..slots {
            for r in 0..n {
                let payload = if faulty.contains(&r) { format!("bad{r}") } else { format!("ok{seq}") };
                let mut e = Event::new("B", "out", seq, payload.into_bytes());
                e.origin_replica = Some(r);
                votes.push(e);
            }
        }
        // Deterministic shuffle from the seed.
        let mut s = seed | 1;
        for i in (1..votes.len()).rev() {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            votes.swap(i, (s % (i as u64 + 1)) as usize);
        }
        let mut c = Consolidator::new(ComponentId::new("B"), n, policy);
        let released: Vec<_> = votes.iter().flat_map(|v| c.ingest(v)).collect();
        let want: Vec<(u64, Vec<u8>)> = (0..slots).map(|s| (s, format!("ok{s}").into_bytes())).collect();
        prop_assert_eq!(released.into_iter().map(|r| (r.seq, r.payload)).collect::<Vec<_>>(), want);
        prop_assert!(c.take_reports().is_empty());
    }
}
