//! Client state machine: addressing through a partial image, applying
//! image adjustments, and driving insert, search and range operations.

use thiserror::Error;

use crate::key_space::{Bound, Key};
use crate::server::{Iam, Op, RangeCursor, ReplyEnvelope, ReplyStatus, RequestEnvelope};
use crate::trie::{LeafLocator, SearchOutcome, Trie, TrieError};
use crate::{ClientId, ServerId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientOp {
    Insert(Key),
    Search(Key),
    Range(Key, Key),
}

impl ClientOp {
    pub fn name(&self) -> &'static str {
        match self {
            ClientOp::Insert(_) => "insert",
            ClientOp::Search(_) => "search",
            ClientOp::Range(..) => "range",
        }
    }

    /// Key column of the op log.
    pub fn keys_text(&self) -> String {
        match self {
            ClientOp::Insert(k) | ClientOp::Search(k) => k.to_string(),
            ClientOp::Range(a, b) => format!("{a}..{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("range lower end {kmin} exceeds upper end {kmax}")]
    InvertedRange { kmin: Key, kmax: Key },
    #[error("client already has an operation in flight")]
    Busy,
    #[error("reply arrived with no operation in flight")]
    Unsolicited,
    #[error(transparent)]
    Trie(#[from] TrieError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientStats {
    pub ops: u64,
    pub iams_received: u64,
    pub iams_applied: u64,
    /// IAMs dropped because they did not fit the image.
    pub graft_failures: u64,
    pub hops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpResult {
    pub op: ClientOp,
    pub seq: u64,
    pub status: ReplyStatus,
    /// Range results, in order.
    pub keys: Vec<Key>,
    pub first_addressed: ServerId,
    pub hops: u32,
    pub iam_received: bool,
    /// Request/reply round trips; more than one only for ranges.
    pub legs: u32,
}

#[derive(Debug, Clone)]
struct Pending {
    op: ClientOp,
    seq: u64,
    first_addressed: ServerId,
    locator: Option<LeafLocator>,
    keys: Vec<Key>,
    hops: u32,
    iam_received: bool,
    legs: u32,
}

/// What the client does after a reply.
#[derive(Debug)]
pub enum Step {
    Send(RequestEnvelope),
    Done(OpResult),
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: ClientId,
    image: Trie,
    pub stats: ClientStats,
    next_seq: u64,
    pending: Option<Pending>,
}

impl ClientState {
    /// A new client whose image sends everything to server 0.
    pub fn new(id: ClientId) -> ClientState {
        ClientState {
            id,
            image: Trie::leaf(ServerId(0)),
            stats: ClientStats::default(),
            next_seq: 0,
            pending: None,
        }
    }

    pub fn image(&self) -> &Trie {
        &self.image
    }

    pub fn is_idle(&self) -> bool {
        self.pending.is_none()
    }

    pub fn address(&self, key: &Key) -> Result<SearchOutcome, TrieError> {
        self.image.search(key)
    }

    /// Grafts `iam` at `loc`. On failure the image is left unchanged.
    pub fn apply_iam(&mut self, iam: &Iam, loc: &LeafLocator) -> Result<(), TrieError> {
        self.stats.iams_received += 1;
        match self.image.graft_within(loc, &iam.trie, iam.m, iam.m_prime, &iam.coverage) {
            Ok(()) => {
                self.stats.iams_applied += 1;
                Ok(())
            }
            Err(e) => {
                self.stats.graft_failures += 1;
                Err(e)
            }
        }
    }

    /// Begins `op` and returns the first request to send to
    /// `request.addressed`.
    pub fn start(&mut self, op: ClientOp) -> Result<RequestEnvelope, ClientError> {
        if self.pending.is_some() {
            return Err(ClientError::Busy);
        }
        let (req_op, point) = match &op {
            ClientOp::Insert(k) => (Op::Insert(k.clone()), k),
            ClientOp::Search(k) => (Op::Search(k.clone()), k),
            ClientOp::Range(a, b) => {
                if a > b {
                    return Err(ClientError::InvertedRange { kmin: a.clone(), kmax: b.clone() });
                }
                let op = Op::Range { kmin: a.clone(), kmax: b.clone(), cursor: RangeCursor::Start };
                (op, a)
            }
        };
        let out = self.image.search(point)?;
        let req = RequestEnvelope {
            op: req_op,
            client: self.id,
            addressed: out.target,
            cm_client: Some(out.cm),
            hops: 0,
        };
        self.pending = Some(Pending {
            op,
            seq: self.next_seq,
            first_addressed: out.target,
            locator: Some(out.locator),
            keys: Vec::new(),
            hops: 0,
            iam_received: false,
            legs: 1,
        });
        self.next_seq += 1;
        Ok(req)
    }

    pub fn on_reply(&mut self, reply: ReplyEnvelope) -> Result<Step, ClientError> {
        let mut p = self.pending.take().ok_or(ClientError::Unsolicited)?;
        p.hops += reply.hops;
        self.stats.hops += u64::from(reply.hops);
        if let Some(iam) = &reply.iam {
            p.iam_received = true;
            match &p.locator {
                Some(loc) => {
                    let _ = self.apply_iam(iam, loc);
                }
                None => {
                    self.stats.iams_received += 1;
                    self.stats.graft_failures += 1;
                }
            }
        }
        if let (ClientOp::Range(kmin, kmax), Some(rp)) = (&p.op, reply.range) {
            p.keys.extend(rp.keys);
            if reply.status == ReplyStatus::Ok && !rp.stop {
                let Some(next) = rp.next_hint else {
                    return Ok(Step::Done(self.finish(
                        p,
                        ReplyStatus::Failed("range reply without a next server".into()),
                    )));
                };
                let (cm_client, locator) = match self.image.search_above(&rp.cm_server) {
                    Ok(out) if out.target == next => (Some(out.cm), Some(out.locator)),
                    _ => (None, None),
                };
                let req = RequestEnvelope {
                    op: Op::Range {
                        kmin: kmin.clone(),
                        kmax: kmax.clone(),
                        cursor: RangeCursor::After(rp.cm_server),
                    },
                    client: self.id,
                    addressed: next,
                    cm_client,
                    hops: 0,
                };
                p.locator = locator;
                p.legs += 1;
                self.pending = Some(p);
                return Ok(Step::Send(req));
            }
        }
        Ok(Step::Done(self.finish(p, reply.status)))
    }

    fn finish(&mut self, p: Pending, status: ReplyStatus) -> OpResult {
        self.stats.ops += 1;
        OpResult {
            op: p.op,
            seq: p.seq,
            status,
            keys: p.keys,
            first_addressed: p.first_addressed,
            hops: p.hops,
            iam_received: p.iam_received,
            legs: p.legs,
        }
    }

    /// Routes keys immediately above `b` through the image.
    pub fn address_above(&self, b: &Bound) -> Result<SearchOutcome, TrieError> {
        self.image.search_above(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::server::{Action, AllocError, ServerAllocator, ServerConfig, ServerState};

    struct Counter(u32);

    impl ServerAllocator for Counter {
        fn allocate_server(&mut self) -> Result<ServerId, AllocError> {
            self.0 += 1;
            Ok(ServerId(self.0))
        }
    }

    fn k(s: &str) -> Key {
        s.parse().unwrap()
    }

    /// Delivers a client op through `servers` until a reply comes back.
    fn run(c: &mut ClientState, servers: &mut Vec<ServerState>, alloc: &mut Counter, op: ClientOp) -> OpResult {
        let cfg = ServerConfig::new(4);
        let mut req = c.start(op).unwrap();
        let mut dest = req.addressed;
        loop {
            let h = servers[dest.0 as usize].handle_request(req, &cfg, alloc);
            if let Some(s) = h.spawned {
                servers.push(s);
            }
            match h.action {
                Action::Forward(to, r) => {
                    dest = to;
                    req = r;
                }
                Action::Reply(rep) => match c.on_reply(rep).unwrap() {
                    Step::Send(r) => {
                        dest = r.addressed;
                        req = r;
                    }
                    Step::Done(res) => return res,
                },
            }
        }
    }

    fn two_servers() -> (Vec<ServerState>, Counter) {
        let mut servers = vec![ServerState::initial()];
        let mut alloc = Counter(0);
        let mut loader = ClientState::new(ClientId(9));
        for key in ["abmf", "abnm", "acnm", "aczm", "acz"] {
            run(&mut loader, &mut servers, &mut alloc, ClientOp::Insert(k(key)));
        }
        (servers, alloc)
    }

    #[test]
    fn fresh_client_addresses_server_zero() {
        let c = ClientState::new(ClientId(0));
        let out = c.address(&k("anything")).unwrap();
        assert_eq!((out.target, out.cm), (ServerId(0), Bound::TOP));
    }

    #[test]
    fn stale_insert_gets_iam_then_converges() {
        let (mut servers, mut alloc) = two_servers();
        let mut c = ClientState::new(ClientId(1));
        let first = run(&mut c, &mut servers, &mut alloc, ClientOp::Search(k("aczm")));
        assert_eq!(first.status, ReplyStatus::Ok);
        assert_eq!(first.hops, 1);
        assert!(first.iam_received);
        assert_eq!(c.image(), &servers[0].trie);
        let again = run(&mut c, &mut servers, &mut alloc, ClientOp::Search(k("aczm")));
        assert_eq!((again.hops, again.iam_received), (0, false));
        assert_eq!(c.address(&k("abmf")).unwrap().cm, Bound::from("acn"));
        assert_eq!(c.address(&k("zz")).unwrap().target, ServerId(1));
    }

    #[test]
    fn search_absent_key() {
        let (mut servers, mut alloc) = two_servers();
        let mut c = ClientState::new(ClientId(1));
        let r = run(&mut c, &mut servers, &mut alloc, ClientOp::Search(k("q")));
        assert_eq!(r.status, ReplyStatus::NotFound);
    }

    #[test]
    fn range_crosses_servers() {
        let (mut servers, mut alloc) = two_servers();
        let mut c = ClientState::new(ClientId(1));
        let r = run(&mut c, &mut servers, &mut alloc, ClientOp::Range(k("abn"), k("acz")));
        assert_eq!(r.keys, vec![k("abnm"), k("acnm"), k("acz")]);
        assert_eq!(r.legs, 2);
        let r = run(&mut c, &mut servers, &mut alloc, ClientOp::Range(k("x"), k("y")));
        assert!(r.keys.is_empty());
        let r = run(&mut c, &mut servers, &mut alloc, ClientOp::Range(k("!"), k("zzz")));
        assert_eq!(r.keys.len(), 5);
        assert!(matches!(
            c.start(ClientOp::Range(k("b"), k("a"))),
            Err(ClientError::InvertedRange { .. })
        ));
    }

    #[test]
    fn iam_is_idempotent() {
        let (servers, _) = two_servers();
        let mut c = ClientState::new(ClientId(1));
        let out = c.address(&k("abmf")).unwrap();
        let iam = servers[0].iam_for_key(&out.cm, &k("abmf"), out.target, Default::default());
        c.apply_iam(&iam, &out.locator).unwrap();
        let once = c.image().clone();
        let loc = c.address(&k("abmf")).unwrap().locator;
        c.apply_iam(&iam, &loc).unwrap();
        assert_eq!(c.image().leaf_sequence().unwrap(), once.leaf_sequence().unwrap());
    }

    #[test]
    fn failed_graft_leaves_image_alone() {
        let (servers, _) = two_servers();
        let mut c = ClientState::new(ClientId(1));
        let out = c.address(&k("abmf")).unwrap();
        let mut iam = servers[0].iam_for_key(&out.cm, &k("abmf"), out.target, Default::default());
        iam.m = ServerId(7);
        assert!(c.apply_iam(&iam, &out.locator).is_err());
        assert_eq!(c.image(), &Trie::leaf(ServerId(0)));
        assert_eq!(c.stats.graft_failures, 1);
    }
}
