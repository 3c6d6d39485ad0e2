#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repli_core::architecture::FaultModel;
use repli_core::auth::KeyedHash;
use repli_order::{client_principal, Client, Dest, Envelope, OrderConfig, Output, Replica};

/// Deterministic message pump for one ordering group and its clients.
pub struct Net {
    pub cfg: OrderConfig,
    pub replicas: Vec<Replica>,
    pub clients: BTreeMap<String, Client>,
    pub now: u64,
    queue: BTreeMap<(u64, u64), (Dest, Envelope)>,
    next_id: u64,
    rng: ChaCha8Rng,
    pub max_delay: u64,
    pub drop_prob: f64,
    /// Messages sent before this tick may be dropped.
    pub gst: u64,
    pub crashed: BTreeSet<u32>,
    pub acked: BTreeMap<String, BTreeSet<u64>>,
    pub failed: BTreeMap<String, BTreeSet<u64>>,
    /// Executed (client, seq) per replica, in execution order.
    pub executed: Vec<Vec<(String, u64)>>,
    /// Drop messages matching this predicate.
    pub filter: Option<DropFilter>,
}

pub type DropFilter = Box<dyn Fn(u64, &Dest, &Envelope) -> bool>;

impl Net {
    pub fn new(cfg: OrderConfig, seed: u64) -> Self {
        let keys = Arc::new(KeyedHash::from_seed(seed));
        let replicas = (0..cfg.n)
            .map(|i| {
                Replica::new(
                    cfg.clone(),
                    i,
                    Arc::new(keys.signer(&cfg.replica_principal(i))),
                    keys.clone(),
                )
            })
            .collect();
        let executed = vec![Vec::new(); cfg.n as usize];
        let mut net = Net {
            cfg,
            replicas,
            clients: BTreeMap::new(),
            now: 0,
            queue: BTreeMap::new(),
            next_id: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            max_delay: 1,
            drop_prob: 0.0,
            gst: 0,
            crashed: BTreeSet::new(),
            acked: BTreeMap::new(),
            failed: BTreeMap::new(),
            executed,
            filter: None,
        };
        for c in ["c0", "c1"] {
            let client = Client::new(
                c,
                net.cfg.clone(),
                Arc::new(keys.signer(&client_principal(c))),
                keys.clone(),
            );
            net.clients.insert(c.to_string(), client);
        }
        net
    }

    pub fn bft(n: u32, f: u32, seed: u64) -> Self {
        Self::new(OrderConfig::simulated("G", n, f, FaultModel::Bft), seed)
    }

    fn enqueue(&mut self, dest: Dest, env: Envelope) {
        if let Some(f) = &self.filter {
            if f(self.now, &dest, &env) {
                return;
            }
        }
        if self.now < self.gst && self.rng.gen_bool(self.drop_prob) {
            return;
        }
        let delay = self.rng.gen_range(1..=self.max_delay);
        let id = self.next_id;
        self.next_id += 1;
        self.queue.insert((self.now + delay, id), (dest, env));
    }

    fn absorb(&mut self, who: Option<usize>, client: Option<&str>, out: Output) {
        for (d, e) in out.sends {
            self.enqueue(d, e);
        }
        if let Some(i) = who {
            for e in out.executed {
                self.executed[i].push(e.request.key());
            }
        }
        if let Some(c) = client {
            self.acked
                .entry(c.to_string())
                .or_default()
                .extend(out.acked);
            self.failed
                .entry(c.to_string())
                .or_default()
                .extend(out.failed);
        }
    }

    pub fn invoke(&mut self, client: &str, payload: &[u8]) -> u64 {
        let (seq, out) = self
            .clients
            .get_mut(client)
            .unwrap()
            .invoke(self.now, payload.to_vec());
        self.absorb(None, Some(client), out);
        seq
    }

    /// Delivers `env` to replica `i` immediately.
    pub fn deliver_to(&mut self, i: u32, env: Envelope) -> Output {
        self.replicas[i as usize].handle(self.now, env)
    }

    pub fn step(&mut self) {
        self.now += 1;
        while let Some((&(t, id), _)) = self.queue.iter().next() {
            if t > self.now {
                break;
            }
            let (dest, env) = self.queue.remove(&(t, id)).unwrap();
            match dest {
                Dest::Replica(i) => {
                    if self.crashed.contains(&i) {
                        continue;
                    }
                    let out = self.replicas[i as usize].handle(self.now, env);
                    self.absorb(Some(i as usize), None, out);
                }
                Dest::Client(c) => {
                    let Some(cl) = self.clients.get_mut(&c) else {
                        continue;
                    };
                    let out = cl.handle(self.now, env);
                    self.absorb(None, Some(&c), out);
                }
            }
        }
        for i in 0..self.replicas.len() {
            if self.crashed.contains(&(i as u32)) {
                continue;
            }
            let out = self.replicas[i].tick(self.now);
            self.absorb(Some(i), None, out);
        }
        let ids: Vec<String> = self.clients.keys().cloned().collect();
        for c in ids {
            let out = self.clients.get_mut(&c).unwrap().tick(self.now);
            self.absorb(None, Some(&c), out);
        }
    }

    pub fn run(&mut self, ticks: u64) {
        for _ in 0..ticks {
            self.step();
        }
    }

    pub fn run_until(&mut self, limit: u64, mut done: impl FnMut(&Net) -> bool) -> bool {
        for _ in 0..limit {
            if done(self) {
                return true;
            }
            self.step();
        }
        done(self)
    }

    pub fn acked_count(&self, client: &str) -> usize {
        self.acked.get(client).map(|s| s.len()).unwrap_or(0)
    }

    pub fn correct(&self) -> Vec<usize> {
        (0..self.replicas.len())
            .filter(|i| {
                !self.crashed.contains(&(*i as u32)) && self.replicas[*i].byzantine().is_none()
            })
            .collect()
    }

    pub fn assert_prefix_consistent(&self) {
        let c = self.correct();
        for a in &c {
            for b in &c {
                assert!(
                    self.replicas[*a]
                        .log()
                        .prefix_consistent(self.replicas[*b].log()),
                    "logs of {a} and {b} diverge"
                );
            }
        }
    }

    pub fn assert_exactly_once(&self) {
        for i in self.correct() {
            let mut seen = BTreeSet::new();
            for k in &self.executed[i] {
                assert!(seen.insert(k.clone()), "replica {i} executed {k:?} twice");
            }
        }
    }
}
