//! Workload generation.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::client::ClientOp;
use crate::key_space::{Key, KeySpace};
use crate::ClientId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribution {
    Random,
    Ascending,
    Script,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkloadKind {
    Insert,
    /// All inserts, then one search of every inserted key.
    InsertSearch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadSpec {
    pub n_keys: usize,
    pub distribution: Distribution,
    pub kind: WorkloadKind,
    pub key_len_min: usize,
    pub key_len_max: usize,
    pub clients: usize,
    pub seed: u64,
}

/// The 25-insert, 4-client script, clients numbered 1 to 4.
pub const SCRIPT: [(u32, &str); 25] = [
    (1, "js"),
    (1, "hw"),
    (3, "c"),
    (2, "gwmr"),
    (3, "g"),
    (2, "km"),
    (4, "zur"),
    (1, "ewg"),
    (3, "lewhv"),
    (2, "nrq"),
    (3, "mf"),
    (4, "pem"),
    (4, "rl"),
    (2, "bqyg"),
    (3, "v"),
    (1, "j"),
    (2, "qcm"),
    (4, "czxav"),
    (2, "lhgd"),
    (3, "z"),
    (1, "lrz"),
    (3, "kiyfg"),
    (4, "pbtpr"),
    (3, "hpqtp"),
    (4, "h"),
];

/// Script client `n` runs as `ClientId(n - 1)`.
pub fn script_ops() -> Vec<(ClientId, ClientOp)> {
    SCRIPT
        .iter()
        .map(|(c, k)| (ClientId(c - 1), ClientOp::Insert(k.parse().expect("script keys are valid"))))
        .collect()
}

/// `n` distinct uniform keys over the default alphabet.
pub fn random_keys(n: usize, len_min: usize, len_max: usize, rng: &mut ChaCha8Rng) -> Vec<Key> {
    let digits: Vec<u8> = KeySpace::default().digits().collect();
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    let mut buf = Vec::with_capacity(len_max);
    while out.len() < n {
        let len = rng.gen_range(len_min..=len_max);
        buf.clear();
        buf.extend((0..len).map(|_| digits[rng.gen_range(0..digits.len())]));
        if seen.insert(buf.clone()) {
            out.push(Key::new(&buf).expect("generated from the alphabet"));
        }
    }
    out
}

pub fn gen_workload(spec: &WorkloadSpec) -> Vec<(ClientId, ClientOp)> {
    // Offset so the workload stream differs from the simulator's.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0f7a_b1e5);
    let mut ops = match spec.distribution {
        Distribution::Script => script_ops(),
        Distribution::Random | Distribution::Ascending => {
            let mut keys = random_keys(spec.n_keys, spec.key_len_min, spec.key_len_max, &mut rng);
            if spec.distribution == Distribution::Ascending {
                keys.sort();
            }
            keys.into_iter()
                .map(|k| (ClientId(rng.gen_range(0..spec.clients as u32)), ClientOp::Insert(k)))
                .collect()
        }
    };
    if spec.kind == WorkloadKind::InsertSearch {
        let mut keys: Vec<Key> = ops
            .iter()
            .filter_map(|(_, op)| match op {
                ClientOp::Insert(k) => Some(k.clone()),
                _ => None,
            })
            .collect();
        keys.shuffle(&mut rng);
        let clients = spec.clients as u32;
        ops.extend(keys.into_iter().map(|k| (ClientId(rng.gen_range(0..clients)), ClientOp::Search(k))));
    }
    ops
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(distribution: Distribution, n: usize) -> WorkloadSpec {
        WorkloadSpec {
            n_keys: n,
            distribution,
            kind: WorkloadKind::Insert,
            key_len_min: 1,
            key_len_max: 6,
            clients: 4,
            seed: 3,
        }
    }

    #[test]
    fn script_is_fixed() {
        let ops = gen_workload(&spec(Distribution::Script, 1));
        assert_eq!(ops.len(), 25);
        assert_eq!(ops[0], (ClientId(0), ClientOp::Insert("js".parse().unwrap())));
        assert_eq!(ops[24], (ClientId(3), ClientOp::Insert("h".parse().unwrap())));
    }

    #[test]
    fn random_is_seeded_and_distinct() {
        let a = gen_workload(&spec(Distribution::Random, 500));
        assert_eq!(a, gen_workload(&spec(Distribution::Random, 500)));
        let keys: HashSet<String> = a.iter().map(|(_, op)| op.keys_text()).collect();
        assert_eq!(keys.len(), 500);
    }

    #[test]
    fn ascending_is_sorted() {
        let ops = gen_workload(&spec(Distribution::Ascending, 3));
        let keys: Vec<_> = ops
            .iter()
            .map(|(_, op)| match op {
                ClientOp::Insert(k) => k.clone(),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(keys.len(), 3);
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn insert_search_appends_searches() {
        let mut s = spec(Distribution::Random, 50);
        s.kind = WorkloadKind::InsertSearch;
        let ops = gen_workload(&s);
        assert_eq!(ops.len(), 100);
        assert!(ops[50..].iter().all(|(_, op)| matches!(op, ClientOp::Search(_))));
    }
}
