//! Server state machine: bucket storage, interval ownership, forwarding,
//! splitting and image adjustment messages.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::key_space::{
    bound_compare, common_prefix, digits_vs_bound, Bound, Interval, Key, KeySide, MIN_DIGIT,
};
use crate::trie::{Trie, TrieError};
use crate::{ClientId, ServerId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AllocError {
    #[error("server cap of {cap} reached")]
    CapReached { cap: usize },
}

/// Source of fresh server ids.
pub trait ServerAllocator {
    fn allocate_server(&mut self) -> Result<ServerId, AllocError>;
}

/// What an IAM carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IamPayload {
    /// Only the routing the client needs around the misaddressed key.
    #[default]
    Minimal,
    /// The server's whole local trie.
    Whole,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerConfig {
    pub capacity: usize,
    pub iam_payload: IamPayload,
    /// Fault injection: lose one key while transferring keys to a new
    /// server.
    pub fault_skip_transfer: bool,
}

impl ServerConfig {
    pub fn new(capacity: usize) -> ServerConfig {
        assert!(capacity >= 1, "bucket capacity must be positive");
        ServerConfig { capacity, iam_payload: IamPayload::default(), fault_skip_transfer: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Bucket {
    keys: BTreeSet<Key>,
}

impl Bucket {
    pub fn keys(&self) -> &BTreeSet<Key> {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn contains(&self, key: &Key) -> bool {
        self.keys.contains(key)
    }
}

impl FromIterator<Key> for Bucket {
    fn from_iter<I: IntoIterator<Item = Key>>(iter: I) -> Self {
        Bucket { keys: iter.into_iter().collect() }
    }
}

/// Where a request is headed in key space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RangeCursor {
    /// First leg: the server owning `kmin`.
    Start,
    /// Later legs: the server owning the keys just above this bound.
    After(Bound),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Insert(Key),
    Search(Key),
    Range { kmin: Key, kmax: Key, cursor: RangeCursor },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Insert(_) => "insert",
            Op::Search(_) => "search",
            Op::Range { .. } => "range",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestEnvelope {
    pub op: Op,
    pub client: ClientId,
    /// The server the client sent the request to.
    pub addressed: ServerId,
    /// Upper bound of the client's image leaf, when the client has one
    /// for the addressed point.
    pub cm_client: Option<Bound>,
    pub hops: u32,
}

impl RequestEnvelope {
    /// The key-space point the request is routed by.
    fn point(&self) -> Point<'_> {
        match &self.op {
            Op::Insert(k) | Op::Search(k) => Point::Key(k),
            Op::Range { kmin, cursor: RangeCursor::Start, .. } => Point::Key(kmin),
            Op::Range { cursor: RangeCursor::After(b), .. } => Point::Above(b),
        }
    }
}

#[derive(Clone, Copy)]
enum Point<'a> {
    Key(&'a Key),
    Above(&'a Bound),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplyStatus {
    Ok,
    Duplicate,
    NotFound,
    Failed(String),
}

impl fmt::Display for ReplyStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReplyStatus::Ok => f.write_str("OK"),
            ReplyStatus::Duplicate => f.write_str("DUPLICATE"),
            ReplyStatus::NotFound => f.write_str("NOT_FOUND"),
            ReplyStatus::Failed(why) => write!(f, "FAILED({why})"),
        }
    }
}

/// Image adjustment message: a donor trie, the leaf retarget pair, and
/// the bound up to which the donor's routing may be trusted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Iam {
    pub trie: Trie,
    pub m: ServerId,
    pub m_prime: ServerId,
    pub coverage: Bound,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangePayload {
    pub keys: Vec<Key>,
    pub cm_server: Bound,
    pub stop: bool,
    pub next_hint: Option<ServerId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplyEnvelope {
    pub status: ReplyStatus,
    pub client: ClientId,
    pub server: ServerId,
    pub hops: u32,
    pub iam: Option<Iam>,
    pub range: Option<RangePayload>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Reply(ReplyEnvelope),
    Forward(ServerId, RequestEnvelope),
}

/// Result of handling one request.
#[derive(Debug)]
pub struct Handled {
    pub action: Action,
    /// The server created by a split this request caused.
    pub spawned: Option<ServerState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Ok,
    Duplicate,
    SplitTriggered,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Trie(#[from] TrieError),
    #[error("bucket holds {have} keys, split needs at least 2")]
    TooFewKeys { have: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerState {
    pub id: ServerId,
    pub bucket: Bucket,
    pub trie: Trie,
    pub interval: Interval,
}

impl ServerState {
    /// Server 0 at file creation: empty bucket, the whole key space.
    pub fn initial() -> ServerState {
        ServerState {
            id: ServerId(0),
            bucket: Bucket::default(),
            trie: Trie::leaf(ServerId(0)),
            interval: Interval::full(),
        }
    }

    fn owns(&self, point: Point<'_>) -> bool {
        match point {
            Point::Key(k) => self.interval.contains(k),
            Point::Above(b) => self.interval.owns_successor_of(b),
        }
    }

    fn route(&self, point: Point<'_>) -> Result<crate::trie::SearchOutcome, TrieError> {
        match point {
            Point::Key(k) => self.trie.search(k),
            Point::Above(b) => self.trie.search_above(b),
        }
    }

    pub fn handle_request(
        &mut self,
        req: RequestEnvelope,
        cfg: &ServerConfig,
        alloc: &mut dyn ServerAllocator,
    ) -> Handled {
        let point = req.point();
        if !self.owns(point) {
            let action = match self.route(point) {
                Ok(out) if out.target == self.id => self.fail(&req, "trie routes a foreign key to self"),
                Ok(out) => {
                    let mut fwd = req;
                    fwd.hops += 1;
                    Action::Forward(out.target, fwd)
                }
                Err(e) => self.fail(&req, &e.to_string()),
            };
            return Handled { action, spawned: None };
        }

        let iam = match &req.cm_client {
            Some(cm) if req.hops > 0 || *cm > self.interval.upper => {
                Some(self.build_iam(cm, point, req.addressed, cfg.iam_payload))
            }
            _ => None,
        };
        let mut spawned = None;
        let mut range = None;
        let status = match &req.op {
            Op::Search(k) if self.bucket.contains(k) => ReplyStatus::Ok,
            Op::Search(_) => ReplyStatus::NotFound,
            Op::Insert(k) => match self.insert_local(k.clone(), cfg.capacity) {
                InsertOutcome::Ok => ReplyStatus::Ok,
                InsertOutcome::Duplicate => ReplyStatus::Duplicate,
                InsertOutcome::SplitTriggered => match self.split(cfg, alloc) {
                    Ok(new) => {
                        spawned = Some(new);
                        ReplyStatus::Ok
                    }
                    Err(e) => {
                        self.bucket.keys.remove(k);
                        ReplyStatus::Failed(format!("split aborted: {e}"))
                    }
                },
            },
            Op::Range { kmin, kmax, .. } => {
                range = Some(self.range_scan(kmin, kmax));
                ReplyStatus::Ok
            }
        };
        let reply = ReplyEnvelope {
            status,
            client: req.client,
            server: self.id,
            hops: req.hops,
            iam,
            range,
        };
        Handled { action: Action::Reply(reply), spawned }
    }

    fn fail(&self, req: &RequestEnvelope, why: &str) -> Action {
        Action::Reply(ReplyEnvelope {
            status: ReplyStatus::Failed(format!("server {}: {why}", self.id)),
            client: req.client,
            server: self.id,
            hops: req.hops,
            iam: None,
            range: None,
        })
    }

    /// Adds `key` to the bucket. The caller must split on
    /// [`InsertOutcome::SplitTriggered`] before replying.
    pub fn insert_local(&mut self, key: Key, capacity: usize) -> InsertOutcome {
        debug_assert!(self.interval.contains(&key), "{key} outside {}", self.interval);
        if !self.bucket.keys.insert(key) {
            InsertOutcome::Duplicate
        } else if self.bucket.len() > capacity {
            InsertOutcome::SplitTriggered
        } else {
            InsertOutcome::Ok
        }
    }

    /// Moves the keys above the split string to a newly allocated server.
    pub fn split(
        &mut self,
        cfg: &ServerConfig,
        alloc: &mut dyn ServerAllocator,
    ) -> Result<ServerState, SplitError> {
        let sorted: Vec<&Key> = self.bucket.keys.iter().collect();
        if sorted.len() < 2 {
            return Err(SplitError::TooFewKeys { have: sorted.len() });
        }
        let split = compute_split_string(&sorted);
        let first_moved = sorted[lower_half_len(sorted.len())].clone();
        let new_id = alloc.allocate_server()?;
        let mut trie = self.trie.clone();
        trie.split_owner(&split, self.id, new_id)?;

        let mut moved = self.bucket.keys.split_off(&first_moved);
        if cfg.fault_skip_transfer {
            moved.pop_last();
        }
        let upper = std::mem::replace(&mut self.interval.upper, split.clone());
        self.trie = trie;
        Ok(ServerState {
            id: new_id,
            bucket: Bucket { keys: moved },
            trie: self.trie.clone(),
            interval: Interval::new(split, upper),
        })
    }

    /// Image adjustment for a client whose image leaf for `point` has
    /// upper bound `cm_client` and targets `addressed`.
    fn build_iam(
        &self,
        cm_client: &Bound,
        point: Point<'_>,
        addressed: ServerId,
        payload: IamPayload,
    ) -> Iam {
        let cm_server = self
            .route(point)
            .expect("owned points route through a valid local trie")
            .cm;
        let prefix = common_prefix(&cm_server, cm_client).unwrap_or(Bound::TOP);
        let (trie, coverage) = if prefix == cm_server {
            (self.trie.clone(), Bound::TOP)
        } else {
            let trie = match payload {
                IamPayload::Minimal => self
                    .trie
                    .extract_subtrie(&prefix)
                    .expect("local trie is valid"),
                IamPayload::Whole => self.trie.clone(),
            };
            (trie, prefix)
        };
        let m_prime = trie.last_target();
        Iam { trie, m: addressed, m_prime, coverage }
    }

    /// Public entry for building an IAM about `key`.
    pub fn iam_for_key(&self, cm_client: &Bound, key: &Key, addressed: ServerId, payload: IamPayload) -> Iam {
        self.build_iam(cm_client, Point::Key(key), addressed, payload)
    }

    pub fn range_scan(&self, kmin: &Key, kmax: &Key) -> RangePayload {
        let keys = self.bucket.keys.range(kmin.clone()..=kmax.clone()).cloned().collect();
        let cm_server = self.interval.upper.clone();
        let stop = bound_compare(kmax, &cm_server) == KeySide::Le;
        let next_hint = if stop {
            None
        } else {
            self.trie.search_above(&cm_server).ok().map(|o| o.target)
        };
        RangePayload { keys, cm_server, stop, next_hint }
    }
}

/// Number of keys an overflowing bucket of `n` keys keeps.
pub fn lower_half_len(n: usize) -> usize {
    n.div_ceil(2)
}

/// Split string for a sorted, duplicate-free overflowing bucket: the
/// shortest prefix of the median that the median's successor lies above.
///
/// When the median is a proper prefix of its successor no prefix
/// separates them, and the median extended by the min digit is used.
pub fn compute_split_string<K: AsRef<Key>>(keys: &[K]) -> Bound {
    assert!(keys.len() >= 2, "split needs at least two keys");
    let h = lower_half_len(keys.len());
    let median = keys[h - 1].as_ref().as_bytes();
    let succ = keys[h].as_ref().as_bytes();
    debug_assert!(median < succ, "keys not sorted");
    for i in 1..=median.len() {
        if digits_vs_bound(succ, &median[..i]) == KeySide::Gt {
            return Bound::from_digits(&median[..i]);
        }
    }
    let mut c = median.to_vec();
    c.push(MIN_DIGIT);
    Bound::Digits(c)
}

impl AsRef<Key> for Key {
    fn as_ref(&self) -> &Key {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trie::TrieNode;

    struct Counter(u32);

    impl ServerAllocator for Counter {
        fn allocate_server(&mut self) -> Result<ServerId, AllocError> {
            self.0 += 1;
            Ok(ServerId(self.0))
        }
    }

    struct Exhausted;

    impl ServerAllocator for Exhausted {
        fn allocate_server(&mut self) -> Result<ServerId, AllocError> {
            Err(AllocError::CapReached { cap: 1 })
        }
    }

    fn k(s: &str) -> Key {
        s.parse().unwrap()
    }

    fn keys(list: &[&str]) -> Vec<Key> {
        list.iter().map(|s| k(s)).collect()
    }

    fn insert(key: &str, cm: Option<Bound>, hops: u32) -> RequestEnvelope {
        RequestEnvelope {
            op: Op::Insert(k(key)),
            client: ClientId(1),
            addressed: ServerId(0),
            cm_client: cm,
            hops,
        }
    }

    fn split_fixture() -> (ServerState, ServerState) {
        let cfg = ServerConfig::new(4);
        let mut s = ServerState::initial();
        let mut alloc = Counter(0);
        let mut spawned = None;
        for key in ["abmf", "abnm", "acnm", "aczm", "acz"] {
            let h = s.handle_request(insert(key, Some(Bound::TOP), 0), &cfg, &mut alloc);
            spawned = spawned.or(h.spawned);
        }
        (s, spawned.expect("fifth insert splits"))
    }

    #[test]
    fn split_string_examples() {
        assert_eq!(
            compute_split_string(&keys(&["abmf", "abnm", "acnm", "acz", "aczm"])),
            Bound::from("acn")
        );
        assert_eq!(compute_split_string(&keys(&["a", "z"])), Bound::from("a"));
        // median is a prefix of its successor
        assert_eq!(compute_split_string(&keys(&["a", "ab", "abc"])), Bound::from("ab_"));
        assert_eq!(compute_split_string(&keys(&["ab", "abc"])), Bound::from("ab_"));
    }

    #[test]
    fn insert_local_outcomes() {
        let mut s = ServerState::initial();
        assert_eq!(s.insert_local(k("a"), 4), InsertOutcome::Ok);
        assert_eq!(s.insert_local(k("a"), 4), InsertOutcome::Duplicate);
        for key in ["b", "c", "d"] {
            assert_eq!(s.insert_local(k(key), 4), InsertOutcome::Ok);
        }
        assert_eq!(s.insert_local(k("e"), 4), InsertOutcome::SplitTriggered);
    }

    #[test]
    fn split_partitions_fixture() {
        let (s0, s1) = split_fixture();
        assert_eq!(s0.bucket.keys().iter().cloned().collect::<Vec<_>>(), keys(&["abmf", "abnm", "acnm"]));
        assert_eq!(s1.bucket.keys().iter().cloned().collect::<Vec<_>>(), keys(&["acz", "aczm"]));
        assert_eq!(s0.interval, Interval::new(Bound::Bottom, Bound::from("acn")));
        assert_eq!(s1.interval, Interval::new(Bound::from("acn"), Bound::TOP));
        assert_eq!(s1.id, ServerId(1));
        assert_eq!(s0.trie, s1.trie);
        assert_eq!(
            s0.trie.to_node(),
            TrieNode::internal(
                b'a',
                0,
                TrieNode::internal(
                    b'c',
                    1,
                    TrieNode::internal(b'n', 2, TrieNode::leaf(0), TrieNode::leaf(1)),
                    TrieNode::leaf(1)
                ),
                TrieNode::leaf(1)
            )
        );
    }

    #[test]
    fn second_split_of_upper_server() {
        let (_, mut s1) = split_fixture();
        let cfg = ServerConfig::new(4);
        let mut alloc = Counter(1);
        let mut spawned = None;
        for key in ["mf", "mz", "z"] {
            let h = s1.handle_request(insert(key, None, 0), &cfg, &mut alloc);
            spawned = spawned.or(h.spawned);
        }
        let s2 = spawned.unwrap();
        assert_eq!(s1.interval.upper, Bound::from("mf"));
        assert_eq!(s2.interval, Interval::new(Bound::from("mf"), Bound::TOP));
        assert!(s2.trie.validate(32).is_empty());
    }

    #[test]
    fn handle_request_forwards_foreign_keys() {
        let (mut s0, _) = split_fixture();
        let h = s0.handle_request(insert("aczz", Some(Bound::TOP), 0), &ServerConfig::new(4), &mut Counter(9));
        match h.action {
            Action::Forward(to, req) => {
                assert_eq!(to, ServerId(1));
                assert_eq!(req.hops, 1);
            }
            other => panic!("expected forward, got {other:?}"),
        }
    }

    #[test]
    fn iam_only_on_stale_image() {
        let (mut s0, _) = split_fixture();
        let cfg = ServerConfig::new(10);
        let h = s0.handle_request(insert("abmg", Some(Bound::from("acn")), 0), &cfg, &mut Counter(9));
        let Action::Reply(r) = h.action else { panic!() };
        assert_eq!(r.status, ReplyStatus::Ok);
        assert!(r.iam.is_none());

        let h = s0.handle_request(insert("abmh", Some(Bound::TOP), 0), &cfg, &mut Counter(9));
        let Action::Reply(r) = h.action else { panic!() };
        let iam = r.iam.expect("stale image gets an IAM");
        assert_eq!((iam.m, iam.m_prime), (ServerId(0), ServerId(1)));
        assert_eq!(iam.trie, s0.trie);
        assert_eq!(iam.coverage, Bound::TOP);

        // a forwarded request always carries one
        let h = s0.handle_request(insert("abmi", Some(Bound::from("acn")), 1), &cfg, &mut Counter(9));
        let Action::Reply(r) = h.action else { panic!() };
        assert!(r.iam.is_some());
    }

    #[test]
    fn split_aborts_when_allocation_fails() {
        let cfg = ServerConfig::new(1);
        let mut s = ServerState::initial();
        s.handle_request(insert("a", None, 0), &cfg, &mut Exhausted);
        let h = s.handle_request(insert("b", None, 0), &cfg, &mut Exhausted);
        let Action::Reply(r) = h.action else { panic!() };
        assert!(matches!(r.status, ReplyStatus::Failed(_)));
        assert_eq!(s.bucket.len(), 1);
        assert!(h.spawned.is_none());
    }

    #[test]
    fn range_scan_example() {
        let (s0, s1) = split_fixture();
        let r = s0.range_scan(&k("abn"), &k("acz"));
        assert_eq!(r.keys, keys(&["abnm", "acnm"]));
        assert_eq!(r.cm_server, Bound::from("acn"));
        assert!(!r.stop);
        assert_eq!(r.next_hint, Some(ServerId(1)));
        let r = s1.range_scan(&k("abn"), &k("acz"));
        assert_eq!(r.keys, keys(&["acz"]));
        assert!(r.stop);
        assert!(s0.range_scan(&k("a"), &k("acn")).stop);
    }

    #[test]
    fn fault_injection_drops_a_key() {
        let mut cfg = ServerConfig::new(4);
        cfg.fault_skip_transfer = true;
        let mut s = ServerState::initial();
        let mut alloc = Counter(0);
        let mut spawned = None;
        for key in ["abmf", "abnm", "acnm", "aczm", "acz"] {
            spawned = spawned.or(s.handle_request(insert(key, None, 0), &cfg, &mut alloc).spawned);
        }
        assert_eq!(s.bucket.len() + spawned.unwrap().bucket.len(), 4);
    }
}
