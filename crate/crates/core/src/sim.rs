//! Deterministic in-process transport.
//!
//! All actors live in one [`Simulation`]. Messages are events ordered by
//! `(tick, seq)`; every send is delivered one tick later, so per-pair FIFO
//! holds. Client interleaving is either strictly sequential or seeded
//! round-robin with random skips.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::client::{ClientError, ClientOp, ClientState, OpResult, Step};
use crate::key_space::{Bound, DEFAULT_MAX_KEY_LEN};
use crate::server::{
    Action, AllocError, ReplyEnvelope, ReplyStatus, RequestEnvelope, ServerAllocator,
    ServerConfig, ServerState,
};
use crate::trie::Trie;
use crate::wire::{self, WireError};
use crate::{ClientId, ServerId};

/// Hands out server ids in order; server 0 exists from the start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coordinator {
    next: u32,
    cap: Option<usize>,
}

impl Coordinator {
    /// `cap` bounds the total number of servers, server 0 included.
    pub fn new(cap: Option<usize>) -> Coordinator {
        Coordinator { next: 1, cap }
    }

    pub fn allocated(&self) -> usize {
        self.next as usize
    }
}

impl ServerAllocator for Coordinator {
    fn allocate_server(&mut self) -> Result<ServerId, AllocError> {
        if let Some(cap) = self.cap {
            if self.next as usize >= cap {
                return Err(AllocError::CapReached { cap });
            }
        }
        let id = ServerId(self.next);
        self.next += 1;
        Ok(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interleaving {
    /// One operation in flight at a time, in submission order.
    Sequential,
    /// Clients run concurrently; each round starts idle clients in
    /// rotating order, skipping each with a seeded coin flip.
    #[default]
    Seeded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub server: ServerConfig,
    pub clients: usize,
    pub seed: u64,
    pub server_cap: Option<usize>,
    pub interleaving: Interleaving,
    /// Probability that an idle client sits out a round.
    pub skip_probability: f64,
    /// Validate every trie after each mutation.
    pub check_invariants: bool,
    /// Encode and decode every message.
    pub wire_roundtrip: bool,
    /// Record a sample every this many successful inserts.
    pub sample_every: Option<u64>,
    pub max_key_len: usize,
}

impl SimConfig {
    pub fn new(capacity: usize, clients: usize, seed: u64) -> SimConfig {
        SimConfig {
            server: ServerConfig::new(capacity),
            clients,
            seed,
            server_cap: None,
            interleaving: Interleaving::default(),
            skip_probability: 0.25,
            check_invariants: false,
            wire_roundtrip: false,
            sample_every: None,
            max_key_len: DEFAULT_MAX_KEY_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("message for unallocated server {0}")]
    UnallocatedServer(ServerId),
    #[error("unknown client {0}")]
    UnknownClient(ClientId),
    #[error("{0}")]
    UnexpectedMessage(String),
    #[error("client {client}: {source}")]
    Client { client: ClientId, source: ClientError },
    #[error("wire codec: {0}")]
    Wire(#[from] WireError),
    #[error("wire round trip changed a message")]
    WireMismatch,
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("simulation is not quiescent")]
    Busy,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Request(RequestEnvelope),
    Reply(ReplyEnvelope),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Actor {
    Server(ServerId),
    Client(ClientId),
}

#[derive(Debug, Clone)]
pub struct SimEvent {
    pub tick: u64,
    pub seq: u64,
    pub dest: Actor,
    pub msg: Message,
}

#[derive(Clone)]
struct Queued(SimEvent);

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.0.tick, self.0.seq) == (other.0.tick, other.0.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.0.tick, self.0.seq).cmp(&(other.0.tick, other.0.seq))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimStats {
    pub messages: u64,
    /// Client-issued requests (one per range leg).
    pub requests: u64,
    pub forwards: u64,
    /// Replies carrying an IAM.
    pub iams: u64,
    pub splits: u64,
    pub ops: u64,
    pub failed_ops: u64,
    pub graft_failures: u64,
    /// Operations by total hop count.
    pub hops: BTreeMap<u32, u64>,
    pub max_hops: u32,
}

/// One row of the stats series.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tick: u64,
    pub keys: u64,
    pub servers: u64,
    pub splits: u64,
    pub messages: u64,
    pub forwards: u64,
    pub iams: u64,
    pub load_factor: f64,
}

/// One row of the op log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpRecord {
    pub client: ClientId,
    pub seq: u64,
    pub op: &'static str,
    pub keys: String,
    pub first_addressed: ServerId,
    pub hops: u32,
    pub iam_received: bool,
    pub messages: u64,
    pub status: ReplyStatus,
}

#[derive(Clone)]
pub struct Simulation {
    cfg: SimConfig,
    servers: Vec<ServerState>,
    /// Genealogy depth of each server: 0 for server 0, parent + 1 after.
    depth: Vec<u32>,
    clients: Vec<ClientState>,
    op_messages: Vec<u64>,
    last_result: Vec<Option<OpResult>>,
    backlog: VecDeque<(ClientId, ClientOp)>,
    queues: Vec<VecDeque<ClientOp>>,
    coord: Coordinator,
    heap: BinaryHeap<Reverse<Queued>>,
    tick: u64,
    seq: u64,
    round: usize,
    rng: ChaCha8Rng,
    stats: SimStats,
    keys: u64,
    op_log: Vec<OpRecord>,
    samples: Vec<Sample>,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Simulation {
        Simulation::with_servers(cfg, vec![ServerState::initial()], None)
    }

    /// Resumes from saved server states (ids must be `0..n`). Genealogy
    /// is unknown, so hop checks fall back to the server count.
    pub fn from_servers(cfg: SimConfig, servers: Vec<ServerState>) -> Simulation {
        let n = servers.len() as u32;
        let mut sim = Simulation::with_servers(cfg, servers, Some(n));
        sim.stats.splits = u64::from(n.saturating_sub(1));
        sim.keys = sim.servers.iter().map(|s| s.bucket.len() as u64).sum();
        sim
    }

    fn with_servers(cfg: SimConfig, servers: Vec<ServerState>, flat_depth: Option<u32>) -> Simulation {
        assert!(cfg.clients >= 1, "at least one client");
        for (i, s) in servers.iter().enumerate() {
            assert_eq!(s.id.0 as usize, i, "server ids must be dense");
        }
        let depth = match flat_depth {
            Some(d) => vec![d; servers.len()],
            None => vec![0; servers.len()],
        };
        let mut coord = Coordinator::new(cfg.server_cap);
        coord.next = servers.len() as u32;
        Simulation {
            clients: (0..cfg.clients as u32).map(|i| ClientState::new(ClientId(i))).collect(),
            op_messages: vec![0; cfg.clients],
            last_result: vec![None; cfg.clients],
            queues: vec![VecDeque::new(); cfg.clients],
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            servers,
            depth,
            backlog: VecDeque::new(),
            coord,
            heap: BinaryHeap::new(),
            tick: 0,
            seq: 0,
            round: 0,
            stats: SimStats::default(),
            keys: 0,
            op_log: Vec::new(),
            samples: Vec::new(),
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn servers(&self) -> &[ServerState] {
        &self.servers
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn stats(&self) -> &SimStats {
        &self.stats
    }

    pub fn op_log(&self) -> &[OpRecord] {
        &self.op_log
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Successfully inserted keys.
    pub fn key_count(&self) -> u64 {
        self.keys
    }

    pub fn load_factor(&self) -> f64 {
        self.keys as f64 / (self.servers.len() * self.cfg.server.capacity) as f64
    }

    pub fn genealogy_depth(&self, id: ServerId) -> u32 {
        self.depth[id.0 as usize]
    }

    /// Adds a client with a fresh image.
    pub fn add_client(&mut self) -> ClientId {
        let id = ClientId(self.clients.len() as u32);
        self.clients.push(ClientState::new(id));
        self.op_messages.push(0);
        self.last_result.push(None);
        self.queues.push(VecDeque::new());
        id
    }

    pub fn is_quiescent(&self) -> bool {
        self.heap.is_empty()
            && self.backlog.is_empty()
            && self.queues.iter().all(VecDeque::is_empty)
            && self.clients.iter().all(ClientState::is_idle)
    }

    pub fn submit(&mut self, ops: impl IntoIterator<Item = (ClientId, ClientOp)>) -> Result<(), SimError> {
        for (c, op) in ops {
            if c.0 as usize >= self.clients.len() {
                return Err(SimError::UnknownClient(c));
            }
            self.backlog.push_back((c, op));
        }
        Ok(())
    }

    pub fn run_until_quiescent(&mut self) -> Result<&SimStats, SimError> {
        match self.cfg.interleaving {
            Interleaving::Sequential => {
                while let Some((c, op)) = self.backlog.pop_front() {
                    self.start(c, op)?;
                    self.drain()?;
                }
            }
            Interleaving::Seeded => {
                while let Some((c, op)) = self.backlog.pop_front() {
                    self.queues[c.0 as usize].push_back(op);
                }
                loop {
                    self.start_some()?;
                    if self.heap.is_empty() {
                        if self.queues.iter().all(VecDeque::is_empty) {
                            break;
                        }
                        continue;
                    }
                    self.step_tick()?;
                }
            }
        }
        self.check_accounting()?;
        Ok(&self.stats)
    }

    /// Runs one operation to completion on a quiescent simulation.
    pub fn execute(&mut self, client: ClientId, op: ClientOp) -> Result<OpResult, SimError> {
        if !self.is_quiescent() {
            return Err(SimError::Busy);
        }
        if client.0 as usize >= self.clients.len() {
            return Err(SimError::UnknownClient(client));
        }
        self.start(client, op)?;
        self.drain()?;
        Ok(self.last_result[client.0 as usize].take().expect("op completed"))
    }

    fn start_some(&mut self) -> Result<(), SimError> {
        let n = self.clients.len();
        let offset = self.round % n;
        self.round += 1;
        let mut started = false;
        let mut first_ready = None;
        for i in 0..n {
            let c = (offset + i) % n;
            if !self.clients[c].is_idle() || self.queues[c].is_empty() {
                continue;
            }
            first_ready.get_or_insert(c);
            if self.rng.gen_bool(self.cfg.skip_probability) {
                continue;
            }
            let op = self.queues[c].pop_front().expect("checked non-empty");
            self.start(ClientId(c as u32), op)?;
            started = true;
        }
        if let (false, true, Some(c)) = (started, self.heap.is_empty(), first_ready) {
            let op = self.queues[c].pop_front().expect("checked non-empty");
            self.start(ClientId(c as u32), op)?;
        }
        Ok(())
    }

    fn start(&mut self, c: ClientId, op: ClientOp) -> Result<(), SimError> {
        let req = self.clients[c.0 as usize]
            .start(op)
            .map_err(|source| SimError::Client { client: c, source })?;
        self.op_messages[c.0 as usize] = 0;
        self.stats.requests += 1;
        let dest = req.addressed;
        self.send(Actor::Server(dest), Message::Request(req))
    }

    fn drain(&mut self) -> Result<(), SimError> {
        while !self.heap.is_empty() {
            self.step_tick()?;
        }
        Ok(())
    }

    /// Delivers every event of the earliest pending tick.
    fn step_tick(&mut self) -> Result<(), SimError> {
        let Some(Reverse(Queued(first))) = self.heap.pop() else { return Ok(()) };
        self.tick = first.tick;
        self.deliver(first)?;
        while self.heap.peek().is_some_and(|Reverse(Queued(e))| e.tick == self.tick) {
            let Reverse(Queued(ev)) = self.heap.pop().expect("peeked");
            self.deliver(ev)?;
        }
        Ok(())
    }

    fn send(&mut self, dest: Actor, msg: Message) -> Result<(), SimError> {
        let msg = if self.cfg.wire_roundtrip { roundtrip(msg)? } else { msg };
        let client = match &msg {
            Message::Request(r) => r.client,
            Message::Reply(r) => r.client,
        };
        if let Some(n) = self.op_messages.get_mut(client.0 as usize) {
            *n += 1;
        }
        self.stats.messages += 1;
        self.seq += 1;
        self.heap.push(Reverse(Queued(SimEvent { tick: self.tick + 1, seq: self.seq, dest, msg })));
        Ok(())
    }

    fn deliver(&mut self, ev: SimEvent) -> Result<(), SimError> {
        match (ev.dest, ev.msg) {
            (Actor::Server(id), Message::Request(req)) => self.deliver_request(id, req),
            (Actor::Client(id), Message::Reply(rep)) => self.deliver_reply(id, rep),
            (dest, _) => Err(SimError::UnexpectedMessage(format!("wrong message kind for {dest:?}"))),
        }
    }

    fn deliver_request(&mut self, id: ServerId, req: RequestEnvelope) -> Result<(), SimError> {
        let i = id.0 as usize;
        if i >= self.servers.len() {
            return Err(SimError::UnallocatedServer(id));
        }
        let handled = self.servers[i].handle_request(req, &self.cfg.server, &mut self.coord);
        if let Some(new) = handled.spawned {
            if new.id.0 as usize != self.servers.len() {
                return Err(SimError::Invariant(format!("server {} allocated out of order", new.id)));
            }
            self.depth.push(self.depth[i] + 1);
            self.servers.push(new);
            self.stats.splits += 1;
            if self.cfg.check_invariants {
                self.check_server(i)?;
                self.check_server(self.servers.len() - 1)?;
            }
        }
        match handled.action {
            Action::Forward(to, fwd) => {
                self.stats.forwards += 1;
                self.send(Actor::Server(to), Message::Request(fwd))
            }
            Action::Reply(rep) => {
                if rep.iam.is_some() {
                    self.stats.iams += 1;
                }
                self.check_hops(&rep)?;
                self.send(Actor::Client(rep.client), Message::Reply(rep))
            }
        }
    }

    fn check_hops(&self, rep: &ReplyEnvelope) -> Result<(), SimError> {
        if matches!(rep.status, ReplyStatus::Failed(_)) {
            return Ok(());
        }
        let depth = self.depth[rep.server.0 as usize];
        if u64::from(rep.hops) > self.stats.splits || rep.hops > depth {
            return Err(SimError::Invariant(format!(
                "{} hops to server {} (genealogy depth {depth}, {} splits)",
                rep.hops, rep.server, self.stats.splits
            )));
        }
        Ok(())
    }

    fn deliver_reply(&mut self, c: ClientId, rep: ReplyEnvelope) -> Result<(), SimError> {
        let i = c.0 as usize;
        let client = self.clients.get_mut(i).ok_or(SimError::UnknownClient(c))?;
        let (failures, applied) = (client.stats.graft_failures, client.stats.iams_applied);
        let step = client.on_reply(rep).map_err(|source| SimError::Client { client: c, source })?;
        self.stats.graft_failures += self.clients[i].stats.graft_failures - failures;
        // The image only changes when an IAM is grafted.
        if self.cfg.check_invariants && self.clients[i].stats.iams_applied != applied {
            self.check_trie(self.clients[i].image(), &format!("client {c} image"))?;
        }
        match step {
            Step::Send(req) => {
                self.stats.requests += 1;
                let dest = req.addressed;
                self.send(Actor::Server(dest), Message::Request(req))
            }
            Step::Done(res) => {
                self.complete(c, res);
                Ok(())
            }
        }
    }

    fn complete(&mut self, c: ClientId, res: OpResult) {
        self.stats.ops += 1;
        *self.stats.hops.entry(res.hops).or_default() += 1;
        self.stats.max_hops = self.stats.max_hops.max(res.hops);
        let failed = matches!(res.status, ReplyStatus::Failed(_));
        if failed {
            self.stats.failed_ops += 1;
        }
        let inserted = matches!(res.op, ClientOp::Insert(_)) && res.status == ReplyStatus::Ok;
        self.op_log.push(OpRecord {
            client: c,
            seq: res.seq,
            op: res.op.name(),
            keys: res.op.keys_text(),
            first_addressed: res.first_addressed,
            hops: res.hops,
            iam_received: res.iam_received,
            messages: self.op_messages[c.0 as usize],
            status: res.status.clone(),
        });
        self.last_result[c.0 as usize] = Some(res);
        if inserted {
            self.keys += 1;
            if let Some(every) = self.cfg.sample_every.filter(|e| *e > 0) {
                if self.keys.is_multiple_of(every) {
                    self.samples.push(self.sample());
                }
            }
        }
    }

    pub fn sample(&self) -> Sample {
        Sample {
            tick: self.tick,
            keys: self.keys,
            servers: self.servers.len() as u64,
            splits: self.stats.splits,
            messages: self.stats.messages,
            forwards: self.stats.forwards,
            iams: self.stats.iams,
            load_factor: self.load_factor(),
        }
    }

    fn check_accounting(&self) -> Result<(), SimError> {
        let s = &self.stats;
        if s.messages != 2 * s.requests + s.forwards {
            return Err(SimError::Invariant(format!(
                "{} messages for {} requests and {} forwards",
                s.messages, s.requests, s.forwards
            )));
        }
        Ok(())
    }

    fn check_trie(&self, t: &Trie, what: &str) -> Result<(), SimError> {
        let violations = t.validate(self.cfg.max_key_len);
        if let Some(v) = violations.first() {
            return Err(SimError::Invariant(format!("{what}: {v}")));
        }
        let seq = t.leaf_sequence().map_err(|e| SimError::Invariant(format!("{what}: {e}")))?;
        if let Some((id, _)) = seq.iter().find(|(id, _)| id.0 as usize >= self.servers.len()) {
            return Err(SimError::Invariant(format!("{what}: leaf names unallocated server {id}")));
        }
        Ok(())
    }

    /// Trie validity, bucket containment, and the local trie sending
    /// exactly the server's own interval to itself.
    fn check_server(&self, i: usize) -> Result<(), SimError> {
        let s = &self.servers[i];
        let what = format!("server {}", s.id);
        self.check_trie(&s.trie, &what)?;
        if let Some(k) = s.bucket.keys().iter().find(|k| !s.interval.contains(k)) {
            return Err(SimError::Invariant(format!("{what}: key {k} outside {}", s.interval)));
        }
        match own_region(&s.trie, s.id) {
            Some(iv) if iv == (s.interval.lower.clone(), s.interval.upper.clone()) => Ok(()),
            other => Err(SimError::Invariant(format!(
                "{what}: local trie sends {other:?} to itself, interval is {}",
                s.interval
            ))),
        }
    }
}

/// The contiguous region a trie sends to `id`, or `None` when that region
/// is empty or not contiguous.
pub fn own_region(t: &Trie, id: ServerId) -> Option<(Bound, Bound)> {
    let leaves = t.leaves().ok()?;
    let first = leaves.iter().position(|l| l.target == id)?;
    let run = leaves[first..].iter().take_while(|l| l.target == id).count();
    if leaves[first + run..].iter().any(|l| l.target == id) {
        return None;
    }
    Some((leaves[first].lower.clone(), leaves[first + run - 1].upper.clone()))
}

fn roundtrip(msg: Message) -> Result<Message, SimError> {
    let back = match &msg {
        Message::Request(r) => Message::Request(wire::decode_request(&wire::encode_request(r))?),
        Message::Reply(r) => Message::Reply(wire::decode_reply(&wire::encode_reply(r))?),
    };
    if back != msg {
        return Err(SimError::WireMismatch);
    }
    Ok(back)
}
