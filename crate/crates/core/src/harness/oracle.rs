//! Sorted-set oracle and whole-file verification.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::client::ClientOp;
use crate::key_space::{Bound, Key};
use crate::server::ReplyStatus;
use crate::sim::{own_region, OpRecord, Simulation};
use crate::trie::Trie;

use super::workload::random_keys;

/// Every key the file acknowledged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OracleMap {
    keys: BTreeSet<Key>,
}

impl OracleMap {
    pub fn new() -> OracleMap {
        OracleMap::default()
    }

    pub fn insert(&mut self, key: Key) -> bool {
        self.keys.insert(key)
    }

    pub fn contains(&self, key: &Key) -> bool {
        self.keys.contains(key)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &BTreeSet<Key> {
        &self.keys
    }

    pub fn range(&self, kmin: &Key, kmax: &Key) -> Vec<Key> {
        self.keys.range(kmin.clone()..=kmax.clone()).cloned().collect()
    }

    /// Mirrors the acknowledged inserts of an op log.
    pub fn from_log(log: &[OpRecord]) -> OracleMap {
        let mut oracle = OracleMap::new();
        for rec in log {
            let acked = matches!(rec.status, ReplyStatus::Ok | ReplyStatus::Duplicate);
            if rec.op == "insert" && acked {
                oracle.insert(rec.keys.parse().expect("logged keys are valid"));
            }
        }
        oracle
    }
}

impl FromIterator<Key> for OracleMap {
    fn from_iter<I: IntoIterator<Item = Key>>(iter: I) -> Self {
        OracleMap { keys: iter.into_iter().collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub check: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.check, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Report {
    pub checks: Vec<&'static str>,
    pub violations: Vec<Violation>,
}

/// Violations listed per check before the rest are only counted.
const DETAIL_LIMIT: usize = 10;

impl Report {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, check: &str) -> bool {
        self.violations.iter().any(|v| v.check == check)
    }

    fn run(&mut self, check: &'static str, found: Vec<String>) {
        self.checks.push(check);
        let extra = found.len().saturating_sub(DETAIL_LIMIT);
        for detail in found.into_iter().take(DETAIL_LIMIT) {
            self.violations.push(Violation { check, detail });
        }
        if extra > 0 {
            self.violations.push(Violation { check, detail: format!("and {extra} more") });
        }
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for check in &self.checks {
            let bad: Vec<_> = self.violations.iter().filter(|v| v.check == *check).collect();
            if bad.is_empty() {
                writeln!(f, "ok   {check}")?;
            } else {
                writeln!(f, "FAIL {check}")?;
                for v in bad {
                    writeln!(f, "     {}", v.detail)?;
                }
            }
        }
        Ok(())
    }
}

pub const CONTENTS: &str = "contents";
pub const KEY_PLACEMENT: &str = "key-placement";
pub const DISJOINT_COVER: &str = "disjoint-cover";
pub const TRIE_VALIDITY: &str = "trie-validity";
pub const LOCAL_TRIE_SELF: &str = "local-trie-self";
pub const FRESH_SEARCH: &str = "fresh-client-search";
pub const ABSENT_SEARCH: &str = "absent-key-search";
pub const RANGES: &str = "range-exactness";

/// Number of random range queries checked.
pub const RANGE_QUERIES: usize = 100;

/// Checks a quiescent simulation against the oracle. Probing runs on a
/// copy, so `sim` is untouched.
pub fn verify_against_oracle(sim: &Simulation, oracle: &OracleMap, seed: u64) -> Report {
    let mut report = Report::default();
    let servers = sim.servers();
    let max_len = sim.config().max_key_len;

    let mut found = Vec::new();
    let mut union = BTreeSet::new();
    for s in servers {
        for k in s.bucket.keys() {
            if !union.insert(k.clone()) {
                found.push(format!("key {k} stored twice"));
            }
        }
    }
    for k in union.difference(oracle.keys()) {
        found.push(format!("key {k} stored but never acknowledged"));
    }
    for k in oracle.keys().difference(&union) {
        found.push(format!("key {k} acknowledged but not stored"));
    }
    report.run(CONTENTS, found);

    let found = servers
        .iter()
        .flat_map(|s| {
            s.bucket
                .keys()
                .iter()
                .filter(|k| !s.interval.contains(k))
                .map(move |k| format!("server {} holds {k} outside {}", s.id, s.interval))
        })
        .collect();
    report.run(KEY_PLACEMENT, found);

    report.run(DISJOINT_COVER, cover_gaps(sim));

    let mut found = Vec::new();
    let n = servers.len();
    let mut check_trie = |t: &Trie, what: String| {
        for v in t.validate(max_len) {
            found.push(format!("{what}: {v}"));
        }
        match t.leaf_sequence() {
            Ok(seq) => {
                if let Some((id, _)) = seq.iter().find(|(id, _)| id.0 as usize >= n) {
                    found.push(format!("{what}: leaf names unallocated server {id}"));
                }
            }
            Err(e) => found.push(format!("{what}: {e}")),
        }
    };
    for s in servers {
        check_trie(&s.trie, format!("server {}", s.id));
    }
    for c in sim.clients() {
        check_trie(c.image(), format!("client {}", c.id));
    }
    report.run(TRIE_VALIDITY, found);

    let found = servers
        .iter()
        .filter_map(|s| {
            let want = (s.interval.lower.clone(), s.interval.upper.clone());
            let got = own_region(&s.trie, s.id);
            (got.as_ref() != Some(&want)).then(|| {
                format!("server {} trie sends {got:?} to itself, interval {}", s.id, s.interval)
            })
        })
        .collect();
    report.run(LOCAL_TRIE_SELF, found);

    let mut probe = sim.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let searcher = probe.add_client();
    let mut found = Vec::new();
    for k in oracle.keys() {
        match probe.execute(searcher, ClientOp::Search(k.clone())) {
            Ok(r) if r.status == ReplyStatus::Ok => {}
            Ok(r) => found.push(format!("search {k}: {}", r.status)),
            Err(e) => found.push(format!("search {k}: {e}")),
        }
    }
    report.run(FRESH_SEARCH, found);

    let mut found = Vec::new();
    let fresh = probe.add_client();
    for k in random_keys(100, 1, 6, &mut rng).into_iter().filter(|k| !oracle.contains(k)) {
        match probe.execute(fresh, ClientOp::Search(k.clone())) {
            Ok(r) if r.status == ReplyStatus::NotFound => {}
            Ok(r) => found.push(format!("absent key {k}: {}", r.status)),
            Err(e) => found.push(format!("absent key {k}: {e}")),
        }
    }
    report.run(ABSENT_SEARCH, found);

    let mut found = Vec::new();
    let ranger = probe.add_client();
    let stored: Vec<&Key> = oracle.keys().iter().collect();
    for _ in 0..RANGE_QUERIES {
        let mut pick = || -> Key {
            if !stored.is_empty() && rng.gen_bool(0.5) {
                stored[rng.gen_range(0..stored.len())].clone()
            } else {
                random_keys(1, 1, 4, &mut rng).pop().expect("one key")
            }
        };
        let (a, b) = (pick(), pick());
        let (kmin, kmax) = if a <= b { (a, b) } else { (b, a) };
        let want = oracle.range(&kmin, &kmax);
        match probe.execute(ranger, ClientOp::Range(kmin.clone(), kmax.clone())) {
            Ok(r) if r.status == ReplyStatus::Ok && r.keys == want => {}
            Ok(r) => found.push(format!(
                "range [{kmin}, {kmax}]: {} keys, oracle has {} ({})",
                r.keys.len(),
                want.len(),
                r.status
            )),
            Err(e) => found.push(format!("range [{kmin}, {kmax}]: {e}")),
        }
    }
    report.run(RANGES, found);
    report
}

fn cover_gaps(sim: &Simulation) -> Vec<String> {
    let mut ivs: Vec<_> = sim.servers().iter().map(|s| (s.interval.clone(), s.id)).collect();
    ivs.sort_by(|a, b| a.0.lower.cmp(&b.0.lower));
    let mut found = Vec::new();
    let mut reach = Bound::Bottom;
    for (iv, id) in &ivs {
        if iv.lower != reach {
            found.push(format!("server {id} starts at {} but cover reaches {reach}", iv.lower));
        }
        if iv.upper <= iv.lower {
            found.push(format!("server {id} has empty interval {iv}"));
        }
        reach = iv.upper.clone();
    }
    if reach != Bound::TOP {
        found.push(format!("cover ends at {reach}, not TOP"));
    }
    found
}
