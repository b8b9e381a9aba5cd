//! Nil-free binary trie of `(digit, position)` nodes.
//!
//! Descent keeps a bound prefix `B`, initially empty (TOP). At an internal
//! node `(d, i)` the candidate bound is `B[..i]` followed by `d`; a key at or
//! below the candidate goes left and `B` becomes the candidate, otherwise
//! it goes right with `B` unchanged. The bound reached at a leaf is the
//! leaf's upper bound, and in-order leaves tile the key space.
//!
//! Every leaf names a server; there is no Nil leaf. When a leaf is split
//! by a string `C`, the inserted chain encodes the digits of `C` starting at
//! the first position where `C` drops below the leaf's bound, and every
//! right child of the chain is the new server.

use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

use crate::key_space::{
    common_prefix_len, digits_order, digits_vs_bound, Bound, Key, KeySide, MAX_DIGIT,
};
use crate::ServerId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrieError {
    #[error("corrupt trie: node at depth {depth} reads position {pos} of a {have}-digit bound")]
    Corrupt { depth: usize, pos: usize, have: usize },
    #[error("locator does not address a leaf of this trie")]
    InvalidLocator,
    #[error("split string {split} is not strictly inside ]{lower}, {upper}]")]
    SplitBoundViolation { split: Bound, lower: Bound, upper: Bound },
    #[error("graft expects a leaf targeting {expected}, found {found}")]
    GraftMismatch { expected: ServerId, found: ServerId },
    #[error("donor trie ends with server {found}, IAM names {expected}")]
    DonorMismatch { expected: ServerId, found: ServerId },
    #[error("segments do not form a partition: {0}")]
    BadPartition(String),
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },
    #[error("nil leaf at byte {offset}")]
    NilRejected { offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Node {
    Internal { digit: u8, pos: u16, left: u32, right: u32 },
    Leaf(ServerId),
}

/// Owned tree form, for building tries by hand and inspecting them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrieNode {
    Internal { digit: u8, pos: usize, left: Box<TrieNode>, right: Box<TrieNode> },
    Leaf(ServerId),
}

impl TrieNode {
    pub fn leaf(id: u32) -> TrieNode {
        TrieNode::Leaf(ServerId(id))
    }

    pub fn internal(digit: u8, pos: usize, left: TrieNode, right: TrieNode) -> TrieNode {
        TrieNode::Internal { digit, pos, left: Box::new(left), right: Box::new(right) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Turn {
    Left,
    Right,
}

/// Handle on a leaf: the turns from the root and the bound accumulated on
/// the way down.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafLocator {
    pub path: Vec<Turn>,
    pub bound: Bound,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchOutcome {
    pub target: ServerId,
    /// Upper bound of the leaf reached.
    pub cm: Bound,
    pub locator: LeafLocator,
}

/// One leaf of the in-order sequence, with its interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafInfo {
    pub target: ServerId,
    pub lower: Bound,
    pub upper: Bound,
    pub locator: LeafLocator,
}

/// A structural problem reported by [`Trie::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Leaf bounds not strictly increasing.
    Monotonicity { index: usize, previous: Bound, next: Bound },
    LastBoundNotTop(Bound),
    PositionOutOfRange { pos: usize, max_len: usize },
    SentinelDigit { pos: usize },
    /// A node reads past the end of the bound built so far.
    MissingPrefix { depth: usize, pos: usize, have: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Monotonicity { index, previous, next } => {
                write!(f, "leaf {index}: bound {next} does not exceed {previous}")
            }
            Violation::LastBoundNotTop(b) => write!(f, "last leaf bound is {b}, not TOP"),
            Violation::PositionOutOfRange { pos, max_len } => {
                write!(f, "node position {pos} not below key length limit {max_len}")
            }
            Violation::SentinelDigit { pos } => write!(f, "max digit used as node digit at {pos}"),
            Violation::MissingPrefix { depth, pos, have } => {
                write!(f, "node at depth {depth} reads position {pos} of a {have}-digit bound")
            }
        }
    }
}

/// A leaf target with its upper bound, as a raw digit string (empty = TOP).
#[derive(Debug, Clone, PartialEq, Eq)]
struct Seg {
    target: ServerId,
    upper: Vec<u8>,
}

struct LeafVisit {
    node: u32,
    target: ServerId,
    upper: Vec<u8>,
}

#[derive(Clone)]
pub struct Trie {
    nodes: Vec<Node>,
    root: u32,
}

impl Trie {
    /// Single-leaf trie routing everything to `id`.
    pub fn leaf(id: ServerId) -> Trie {
        Trie { nodes: vec![Node::Leaf(id)], root: 0 }
    }

    pub fn from_node(node: &TrieNode) -> Trie {
        fn push(nodes: &mut Vec<Node>, n: &TrieNode) -> u32 {
            match n {
                TrieNode::Leaf(id) => {
                    nodes.push(Node::Leaf(*id));
                }
                TrieNode::Internal { digit, pos, left, right } => {
                    let l = push(nodes, left);
                    let r = push(nodes, right);
                    let pos = u16::try_from(*pos).expect("node position exceeds u16");
                    nodes.push(Node::Internal { digit: *digit, pos, left: l, right: r });
                }
            }
            (nodes.len() - 1) as u32
        }
        let mut nodes = Vec::new();
        let root = push(&mut nodes, node);
        Trie { nodes, root }
    }

    pub fn to_node(&self) -> TrieNode {
        fn pull(nodes: &[Node], i: u32) -> TrieNode {
            match nodes[i as usize] {
                Node::Leaf(id) => TrieNode::Leaf(id),
                Node::Internal { digit, pos, left, right } => TrieNode::Internal {
                    digit,
                    pos: pos as usize,
                    left: Box::new(pull(nodes, left)),
                    right: Box::new(pull(nodes, right)),
                },
            }
        }
        pull(&self.nodes, self.root)
    }

    /// Builds a trie from an in-order partition: strictly increasing upper
    /// bounds, the last one TOP.
    pub fn from_partition(parts: &[(ServerId, Bound)]) -> Result<Trie, TrieError> {
        let mut segs = Vec::with_capacity(parts.len());
        for (target, b) in parts {
            let upper = b
                .digits()
                .ok_or_else(|| TrieError::BadPartition("BOTTOM as upper bound".into()))?;
            if let Some(prev) = segs.last().map(|s: &Seg| &s.upper) {
                if digits_order(prev, upper) != Ordering::Less {
                    return Err(TrieError::BadPartition(format!(
                        "{} does not exceed {}",
                        b,
                        Bound::from_digits(prev.clone())
                    )));
                }
            }
            segs.push(Seg { target: *target, upper: upper.to_vec() });
        }
        match segs.last() {
            Some(s) if s.upper.is_empty() => {}
            _ => return Err(TrieError::BadPartition("last bound must be TOP".into())),
        }
        let segs = merge_runs(segs);
        let mut t = Trie { nodes: Vec::new(), root: 0 };
        t.root = t.build(&[], &segs);
        Ok(t)
    }

    /// Reachable node count.
    pub fn node_count(&self) -> usize {
        let mut n = 0;
        let mut stack = vec![self.root];
        while let Some(i) = stack.pop() {
            n += 1;
            if let Node::Internal { left, right, .. } = self.nodes[i as usize] {
                stack.push(left);
                stack.push(right);
            }
        }
        n
    }

    pub fn depth(&self) -> usize {
        let mut max = 0;
        let mut stack = vec![(self.root, 0usize)];
        while let Some((i, d)) = stack.pop() {
            max = max.max(d);
            if let Node::Internal { left, right, .. } = self.nodes[i as usize] {
                stack.push((left, d + 1));
                stack.push((right, d + 1));
            }
        }
        max
    }

    fn descend(
        &self,
        mut go_left: impl FnMut(&[u8]) -> bool,
    ) -> Result<SearchOutcome, TrieError> {
        let mut bound: Vec<u8> = Vec::new();
        let mut cand: Vec<u8> = Vec::new();
        let mut path = Vec::new();
        let mut i = self.root;
        loop {
            match self.nodes[i as usize] {
                Node::Leaf(target) => {
                    let cm = Bound::Digits(bound);
                    return Ok(SearchOutcome {
                        target,
                        cm: cm.clone(),
                        locator: LeafLocator { path, bound: cm },
                    });
                }
                Node::Internal { digit, pos, left, right } => {
                    let pos = pos as usize;
                    if bound.len() < pos {
                        return Err(TrieError::Corrupt {
                            depth: path.len(),
                            pos,
                            have: bound.len(),
                        });
                    }
                    cand.clear();
                    cand.extend_from_slice(&bound[..pos]);
                    cand.push(digit);
                    if go_left(&cand) {
                        std::mem::swap(&mut bound, &mut cand);
                        path.push(Turn::Left);
                        i = left;
                    } else {
                        path.push(Turn::Right);
                        i = right;
                    }
                }
            }
        }
    }

    /// Routes a key to its leaf.
    pub fn search(&self, key: &Key) -> Result<SearchOutcome, TrieError> {
        let k = key.as_bytes();
        self.descend(|cand| digits_vs_bound(k, cand) == KeySide::Le)
    }

    /// Routes the keys lying immediately above `b`.
    pub fn search_above(&self, b: &Bound) -> Result<SearchOutcome, TrieError> {
        match b {
            Bound::Bottom => self.descend(|_| true),
            Bound::Digits(x) => self.descend(|cand| digits_order(x, cand) == Ordering::Less),
        }
    }

    /// In-order walk over the leaves.
    fn walk(&self, mut visit: impl FnMut(LeafVisit, &[Turn])) -> Result<(), TrieError> {
        let mut stack: Vec<(u32, Vec<u8>, usize, Option<Turn>)> =
            vec![(self.root, Vec::new(), 0, None)];
        let mut path: Vec<Turn> = Vec::new();
        while let Some((i, bound, depth, turn)) = stack.pop() {
            path.truncate(depth.saturating_sub(1));
            if let Some(t) = turn {
                path.push(t);
            }
            match self.nodes[i as usize] {
                Node::Leaf(target) => visit(LeafVisit { node: i, target, upper: bound }, &path),
                Node::Internal { digit, pos, left, right } => {
                    let pos = pos as usize;
                    if bound.len() < pos {
                        return Err(TrieError::Corrupt { depth, pos, have: bound.len() });
                    }
                    let mut cand = bound[..pos].to_vec();
                    cand.push(digit);
                    stack.push((right, bound, depth + 1, Some(Turn::Right)));
                    stack.push((left, cand, depth + 1, Some(Turn::Left)));
                }
            }
        }
        Ok(())
    }

    fn visits(&self) -> Result<Vec<LeafVisit>, TrieError> {
        let mut out = Vec::new();
        self.walk(|v, _| out.push(v))?;
        Ok(out)
    }

    fn segments(&self) -> Result<Vec<Seg>, TrieError> {
        let mut out = Vec::new();
        self.walk(|v, _| out.push(Seg { target: v.target, upper: v.upper }))?;
        Ok(out)
    }

    /// Leaves in order with their upper bounds. Leaf `i` owns
    /// `]bound[i-1], bound[i]]`, with BOTTOM before the first.
    pub fn leaf_sequence(&self) -> Result<Vec<(ServerId, Bound)>, TrieError> {
        Ok(self
            .segments()?
            .into_iter()
            .map(|s| (s.target, Bound::Digits(s.upper)))
            .collect())
    }

    /// Leaves in order with intervals and locators.
    pub fn leaves(&self) -> Result<Vec<LeafInfo>, TrieError> {
        let mut out: Vec<LeafInfo> = Vec::new();
        self.walk(|v, path| {
            let lower = out.last().map_or(Bound::Bottom, |l| l.upper.clone());
            let upper = Bound::Digits(v.upper);
            out.push(LeafInfo {
                target: v.target,
                lower,
                upper: upper.clone(),
                locator: LeafLocator { path: path.to_vec(), bound: upper },
            });
        })?;
        Ok(out)
    }

    /// Follows `path` from the root, returning the node reached and the
    /// bound accumulated.
    fn follow(&self, path: &[Turn]) -> Option<(u32, Vec<u8>)> {
        let mut bound = Vec::new();
        let mut i = self.root;
        for turn in path {
            match self.nodes[i as usize] {
                Node::Leaf(_) => return None,
                Node::Internal { digit, pos, left, right } => {
                    let pos = pos as usize;
                    if bound.len() < pos {
                        return None;
                    }
                    match turn {
                        Turn::Left => {
                            bound.truncate(pos);
                            bound.push(digit);
                            i = left;
                        }
                        Turn::Right => i = right,
                    }
                }
            }
        }
        Some((i, bound))
    }

    /// Extends `path` to the leftmost (or rightmost) leaf below it.
    fn extreme_leaf(&self, mut path: Vec<Turn>, leftmost: bool) -> Option<LeafLocator> {
        let (mut i, mut bound) = self.follow(&path)?;
        loop {
            match self.nodes[i as usize] {
                Node::Leaf(_) => {
                    return Some(LeafLocator { path, bound: Bound::Digits(bound) });
                }
                Node::Internal { digit, pos, left, right } => {
                    if leftmost {
                        let pos = pos as usize;
                        if bound.len() < pos {
                            return None;
                        }
                        bound.truncate(pos);
                        bound.push(digit);
                        path.push(Turn::Left);
                        i = left;
                    } else {
                        path.push(Turn::Right);
                        i = right;
                    }
                }
            }
        }
    }

    /// Node index of the leaf a locator addresses.
    fn resolve(&self, loc: &LeafLocator) -> Result<u32, TrieError> {
        let (i, bound) = self.follow(&loc.path).ok_or(TrieError::InvalidLocator)?;
        match (self.nodes[i as usize], loc.bound.digits()) {
            (Node::Leaf(_), Some(b)) if b == bound.as_slice() => Ok(i),
            _ => Err(TrieError::InvalidLocator),
        }
    }

    pub fn target_at(&self, loc: &LeafLocator) -> Result<ServerId, TrieError> {
        match self.nodes[self.resolve(loc)? as usize] {
            Node::Leaf(id) => Ok(id),
            Node::Internal { .. } => unreachable!("resolve returns leaves"),
        }
    }

    /// Next leaf in order, or `None` after the last one.
    pub fn successor_leaf(&self, loc: &LeafLocator) -> Result<Option<LeafLocator>, TrieError> {
        self.resolve(loc)?;
        let Some(at) = loc.path.iter().rposition(|t| *t == Turn::Left) else {
            return Ok(None);
        };
        let mut path = loc.path[..at].to_vec();
        path.push(Turn::Right);
        self.extreme_leaf(path, true).map(Some).ok_or(TrieError::InvalidLocator)
    }

    /// Previous leaf in order, or `None` before the first one.
    pub fn predecessor_leaf(&self, loc: &LeafLocator) -> Result<Option<LeafLocator>, TrieError> {
        self.resolve(loc)?;
        let Some(at) = loc.path.iter().rposition(|t| *t == Turn::Right) else {
            return Ok(None);
        };
        let mut path = loc.path[..at].to_vec();
        path.push(Turn::Left);
        self.extreme_leaf(path, false).map(Some).ok_or(TrieError::InvalidLocator)
    }

    /// Builds the subtree for a region whose upper bound is `entry`, cut
    /// into `segs` (strictly increasing, last upper equal to `entry`).
    /// Returns the index of the subtree root, which is always the last
    /// node pushed.
    fn build(&mut self, entry: &[u8], segs: &[Seg]) -> u32 {
        debug_assert!(!segs.is_empty());
        debug_assert_eq!(segs.last().map(|s| s.upper.as_slice()), Some(entry));
        if segs.len() == 1 {
            self.nodes.push(Node::Leaf(segs[0].target));
            return (self.nodes.len() - 1) as u32;
        }
        // Cut at the prefix of the middle bound that first drops below
        // `entry`; the left side inherits that prefix as its bound.
        let cut = &segs[(segs.len() - 1) / 2].upper;
        let pos = common_prefix_len(cut, entry);
        debug_assert!(pos < cut.len(), "cut {cut:?} not below entry {entry:?}");
        let q = &cut[..=pos];
        let first_ge = segs.partition_point(|s| digits_order(&s.upper, q) == Ordering::Less);
        let mut left: Vec<Seg> = segs[..first_ge].to_vec();
        left.push(Seg { target: segs[first_ge].target, upper: q.to_vec() });
        let right_from = if segs[first_ge].upper == q { first_ge + 1 } else { first_ge };
        let q = q.to_vec();
        let digit = cut[pos];
        let l = self.build(&q, &left);
        let r = self.build(entry, &segs[right_from..]);
        let pos = u16::try_from(pos).expect("node position exceeds u16");
        self.nodes.push(Node::Internal { digit, pos, left: l, right: r });
        (self.nodes.len() - 1) as u32
    }

    /// Replaces the leaf at `node` (upper bound `entry`) by a subtree for
    /// `segs`, reusing the leaf's slot for the new root.
    fn replace_leaf(&mut self, node: u32, entry: &[u8], segs: &[Seg]) {
        let root = self.build(entry, segs);
        debug_assert_eq!(root as usize, self.nodes.len() - 1);
        self.nodes[node as usize] = self.nodes[root as usize];
        self.nodes.pop();
    }

    /// Splits the leaf at `loc` by `split`: keys at or below `split` keep
    /// the leaf's server, the rest go to `new_server`.
    pub fn attach_split(
        &mut self,
        loc: &LeafLocator,
        split: &Bound,
        new_server: ServerId,
    ) -> Result<(), TrieError> {
        let node = self.resolve(loc)?;
        let Node::Leaf(old) = self.nodes[node as usize] else { unreachable!() };
        let lower = self.predecessor_leaf(loc)?.map_or(Bound::Bottom, |p| p.bound);
        let upper = loc.bound.clone();
        let inside = matches!(split, Bound::Digits(c) if !c.is_empty())
            && lower < *split
            && *split < upper;
        if !inside {
            return Err(TrieError::SplitBoundViolation { split: split.clone(), lower, upper });
        }
        let entry = upper.digits().expect("leaf bounds are never BOTTOM").to_vec();
        let segs = [
            Seg { target: old, upper: split.digits().unwrap().to_vec() },
            Seg { target: new_server, upper: entry.clone() },
        ];
        self.replace_leaf(node, &entry, &segs);
        Ok(())
    }

    /// Server-side split of `owner`'s region at `split`: the leaf holding
    /// `split` is cut there, and every following leaf of `owner` passes to
    /// `new_server`.
    pub fn split_owner(
        &mut self,
        split: &Bound,
        owner: ServerId,
        new_server: ServerId,
    ) -> Result<(), TrieError> {
        let c = match split {
            Bound::Digits(c) if !c.is_empty() => c.clone(),
            _ => {
                return Err(TrieError::SplitBoundViolation {
                    split: split.clone(),
                    lower: Bound::Bottom,
                    upper: Bound::TOP,
                })
            }
        };
        let leaves = self.visits()?;
        let at = leaves.partition_point(|l| digits_order(&l.upper, &c) == Ordering::Less);
        let leaf = &leaves[at];
        if leaf.target != owner {
            return Err(TrieError::GraftMismatch { expected: owner, found: leaf.target });
        }
        if leaf.upper != c {
            let segs = [
                Seg { target: owner, upper: c },
                Seg { target: new_server, upper: leaf.upper.clone() },
            ];
            self.replace_leaf(leaf.node, &leaf.upper, &segs);
        }
        for l in leaves[at + 1..].iter().take_while(|l| l.target == owner) {
            self.nodes[l.node as usize] = Node::Leaf(new_server);
        }
        Ok(())
    }

    /// Sub-trie for an IAM whose client-side leaf lies at or below
    /// `prefix`: routes exactly like `self` on `]BOTTOM, prefix]`, sends
    /// everything above to this trie's last server. An empty prefix (TOP)
    /// keeps the whole routing.
    pub fn extract_subtrie(&self, prefix: &Bound) -> Result<Trie, TrieError> {
        let segs = self.segments()?;
        let last = segs.last().expect("a trie has a leaf").target;
        let mut parts = match prefix.digits() {
            None => return Ok(Trie::leaf(last)),
            Some([]) => segs,
            Some(p) => {
                let mut parts = restrict(&segs, &Bound::Bottom, p);
                parts.push(Seg { target: last, upper: Vec::new() });
                parts
            }
        };
        parts = merge_runs(parts);
        let mut t = Trie { nodes: Vec::new(), root: 0 };
        t.root = t.build(&[], &parts);
        Ok(t)
    }

    /// Target of the in-order last leaf.
    pub fn last_target(&self) -> ServerId {
        let mut i = self.root;
        loop {
            match self.nodes[i as usize] {
                Node::Leaf(id) => return id,
                Node::Internal { right, .. } => i = right,
            }
        }
    }

    /// Replaces the leaf `m` at `loc` by `donor`, then keeps replacing the
    /// following leaves while they target `m`.
    pub fn graft(
        &mut self,
        loc: &LeafLocator,
        donor: &Trie,
        m: ServerId,
        m_prime: ServerId,
    ) -> Result<(), TrieError> {
        self.graft_within(loc, donor, m, m_prime, &Bound::TOP)
    }

    /// [`graft`](Self::graft) limited to keys at or below `coverage`.
    ///
    /// Each replaced leaf takes the donor's routing restricted to its own
    /// interval, so the result stays a valid trie wherever the leaf sits.
    /// Leaves after the first one are the `m` leaves the donor's last
    /// server takes over when the donor ends in one leaf there.
    ///
    /// A donor piece pointing below `m` is kept at `m`: servers are created
    /// in key order along any owner chain, so the higher id is never less
    /// accurate, and a donor may be older than the client's own entry.
    pub fn graft_within(
        &mut self,
        loc: &LeafLocator,
        donor: &Trie,
        m: ServerId,
        m_prime: ServerId,
        coverage: &Bound,
    ) -> Result<(), TrieError> {
        let node = self.resolve(loc)?;
        let Node::Leaf(found) = self.nodes[node as usize] else { unreachable!() };
        if found != m {
            return Err(TrieError::GraftMismatch { expected: m, found });
        }
        let last = donor.last_target();
        if last != m_prime {
            return Err(TrieError::DonorMismatch { expected: m_prime, found: last });
        }
        let Some(cov) = coverage.digits() else { return Ok(()) };
        let donor_segs = donor.segments()?;
        let below = |lower: &Bound| match lower {
            Bound::Bottom => true,
            Bound::Digits(lo) => digits_order(lo, cov) == Ordering::Less,
        };
        // Collect the run first: replacing a leaf turns it into a subtree
        // and would invalidate the locators of the walk.
        let mut run: Vec<(u32, Vec<u8>, Bound)> = Vec::new();
        let mut lower = self.predecessor_leaf(loc)?.map_or(Bound::Bottom, |p| p.bound);
        let mut cur = Some(loc.clone());
        while let Some(l) = cur {
            let n = if run.is_empty() { node } else { self.resolve(&l)? };
            if self.nodes[n as usize] != Node::Leaf(m) || !below(&lower) {
                break;
            }
            let upper = l.bound.digits().ok_or(TrieError::InvalidLocator)?.to_vec();
            cur = self.successor_leaf(&l)?;
            let next_lower = Bound::Digits(upper.clone());
            run.push((n, upper, std::mem::replace(&mut lower, next_lower)));
        }
        let raise = |segs: Vec<Seg>| segs.into_iter().map(|g| Seg { target: g.target.max(m), upper: g.upper });
        for (n, upper, lower) in run {
            let segs = if digits_order(&upper, cov) == Ordering::Greater {
                let mut s: Vec<Seg> = raise(restrict(&donor_segs, &lower, cov)).collect();
                s.push(Seg { target: m, upper: upper.clone() });
                merge_runs(s)
            } else {
                merge_runs(raise(restrict(&donor_segs, &lower, &upper)).collect())
            };
            self.replace_leaf(n, &upper, &segs);
        }
        Ok(())
    }

    /// Checks the structural invariants. Empty result means valid.
    pub fn validate(&self, max_key_len: usize) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut uppers: Vec<Vec<u8>> = Vec::new();
        let mut stack: Vec<(u32, Vec<u8>, usize)> = vec![(self.root, Vec::new(), 0)];
        while let Some((i, bound, depth)) = stack.pop() {
            match self.nodes[i as usize] {
                Node::Leaf(_) => uppers.push(bound),
                Node::Internal { digit, pos, left, right } => {
                    let pos = pos as usize;
                    if pos >= max_key_len {
                        out.push(Violation::PositionOutOfRange { pos, max_len: max_key_len });
                    }
                    if digit == MAX_DIGIT {
                        out.push(Violation::SentinelDigit { pos });
                    }
                    if bound.len() < pos {
                        out.push(Violation::MissingPrefix { depth, pos, have: bound.len() });
                        continue;
                    }
                    let mut cand = bound[..pos].to_vec();
                    cand.push(digit);
                    stack.push((right, bound, depth + 1));
                    stack.push((left, cand, depth + 1));
                }
            }
        }
        for (index, w) in uppers.windows(2).enumerate() {
            if digits_order(&w[0], &w[1]) != Ordering::Less {
                out.push(Violation::Monotonicity {
                    index: index + 1,
                    previous: Bound::Digits(w[0].clone()),
                    next: Bound::Digits(w[1].clone()),
                });
            }
        }
        if let Some(last) = uppers.last() {
            if !last.is_empty() {
                out.push(Violation::LastBoundNotTop(Bound::Digits(last.clone())));
            }
        }
        out
    }

    /// Preorder text: `I(<digit>,<pos>)<left><right>` or `L(<id>)`.
    pub fn serialize(&self) -> String {
        let mut out = String::with_capacity(self.nodes.len() * 6);
        let mut stack = vec![self.root];
        while let Some(i) = stack.pop() {
            match self.nodes[i as usize] {
                Node::Leaf(id) => {
                    out.push_str("L(");
                    out.push_str(&id.0.to_string());
                    out.push(')');
                }
                Node::Internal { digit, pos, left, right } => {
                    out.push_str("I(");
                    out.push(digit as char);
                    out.push(',');
                    out.push_str(&pos.to_string());
                    out.push(')');
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    pub fn deserialize(text: &[u8]) -> Result<Trie, TrieError> {
        Parser { text, at: 0 }.trie()
    }
}

/// Segments of `segs` intersected with `]lower, upper]`, the last one
/// clipped to `upper`.
fn restrict(segs: &[Seg], lower: &Bound, upper: &[u8]) -> Vec<Seg> {
    let start = match lower {
        Bound::Bottom => 0,
        Bound::Digits(lo) => {
            segs.partition_point(|s| digits_order(&s.upper, lo) != Ordering::Greater)
        }
    };
    let mut out = Vec::new();
    for s in &segs[start..] {
        if digits_order(&s.upper, upper) == Ordering::Less {
            out.push(s.clone());
        } else {
            out.push(Seg { target: s.target, upper: upper.to_vec() });
            break;
        }
    }
    out
}

/// Collapses neighbouring segments with the same target.
fn merge_runs(segs: Vec<Seg>) -> Vec<Seg> {
    let mut out: Vec<Seg> = Vec::with_capacity(segs.len());
    for s in segs {
        match out.last_mut() {
            Some(prev) if prev.target == s.target => prev.upper = s.upper,
            _ => out.push(s),
        }
    }
    out
}

impl PartialEq for Trie {
    fn eq(&self, other: &Self) -> bool {
        let mut stack = vec![(self.root, other.root)];
        while let Some((a, b)) = stack.pop() {
            match (self.nodes[a as usize], other.nodes[b as usize]) {
                (Node::Leaf(x), Node::Leaf(y)) if x == y => {}
                (
                    Node::Internal { digit: d1, pos: p1, left: l1, right: r1 },
                    Node::Internal { digit: d2, pos: p2, left: l2, right: r2 },
                ) if d1 == d2 && p1 == p2 => {
                    stack.push((l1, l2));
                    stack.push((r1, r2));
                }
                _ => return false,
            }
        }
        true
    }
}

impl Eq for Trie {}

impl fmt::Debug for Trie {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Trie({})", self.serialize())
    }
}

impl fmt::Display for Trie {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

struct Parser<'a> {
    text: &'a [u8],
    at: usize,
}

impl Parser<'_> {
    fn err(&self, msg: impl Into<String>) -> TrieError {
        TrieError::Parse { offset: self.at, msg: msg.into() }
    }

    fn expect(&mut self, b: u8) -> Result<(), TrieError> {
        match self.text.get(self.at) {
            Some(&c) if c == b => {
                self.at += 1;
                Ok(())
            }
            Some(&c) => Err(self.err(format!("expected '{}', found '{}'", b as char, c as char))),
            None => Err(self.err(format!("expected '{}', found end of input", b as char))),
        }
    }

    fn number(&mut self) -> Result<u32, TrieError> {
        let start = self.at;
        while self.text.get(self.at).is_some_and(u8::is_ascii_digit) {
            self.at += 1;
        }
        if start == self.at {
            return Err(self.err("expected a decimal number"));
        }
        std::str::from_utf8(&self.text[start..self.at])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| TrieError::Parse { offset: start, msg: "number out of range".into() })
    }

    fn trie(mut self) -> Result<Trie, TrieError> {
        // Internal nodes still waiting for children; the flag records
        // whether the left child is already in place.
        let mut open: Vec<(u32, bool)> = Vec::new();
        let mut nodes: Vec<Node> = Vec::new();
        let mut root = None;
        loop {
            let start = self.at;
            let node = match self.text.get(self.at) {
                Some(b'I') => {
                    self.at += 1;
                    self.expect(b'(')?;
                    let digit = *self.text.get(self.at).ok_or_else(|| self.err("missing digit"))?;
                    if !(0x21..=0x7e).contains(&digit) || digit == MAX_DIGIT {
                        return Err(self.err(format!("invalid node digit 0x{digit:02x}")));
                    }
                    self.at += 1;
                    self.expect(b',')?;
                    let pos = self.number()?;
                    let pos = u16::try_from(pos)
                        .map_err(|_| TrieError::Parse { offset: start, msg: "position too large".into() })?;
                    self.expect(b')')?;
                    Node::Internal { digit, pos, left: u32::MAX, right: u32::MAX }
                }
                Some(b'L') => {
                    self.at += 1;
                    self.expect(b'(')?;
                    if self.text[self.at..].starts_with(b"nil)") {
                        return Err(TrieError::NilRejected { offset: start });
                    }
                    let id = self.number()?;
                    self.expect(b')')?;
                    Node::Leaf(ServerId(id))
                }
                Some(b'N') => return Err(TrieError::NilRejected { offset: start }),
                Some(&c) => return Err(self.err(format!("unexpected '{}'", c as char))),
                None => return Err(self.err("unexpected end of input")),
            };
            let idx = nodes.len() as u32;
            nodes.push(node);
            match open.last_mut() {
                None => root = Some(idx),
                Some((parent, has_left)) => {
                    let Node::Internal { left, right, .. } = &mut nodes[*parent as usize] else {
                        unreachable!()
                    };
                    if *has_left {
                        *right = idx;
                        open.pop();
                    } else {
                        *left = idx;
                        *has_left = true;
                    }
                }
            }
            if matches!(node, Node::Internal { .. }) {
                open.push((idx, false));
            }
            if open.is_empty() {
                break;
            }
        }
        if self.at != self.text.len() {
            return Err(self.err("trailing bytes after trie"));
        }
        Ok(Trie { nodes, root: root.expect("at least one node parsed") })
    }
}
