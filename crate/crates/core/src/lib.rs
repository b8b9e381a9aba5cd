//! TH*: a scalable distributed trie-hashing file.
//!
//! Keys are partitioned over servers by a nil-free binary trie of
//! `(digit, position)` nodes. Servers split when their bucket overflows,
//! clients address servers through possibly stale partial tries, and
//! servers correct misaddressing clients with image adjustment messages.
//!
//! The crate contains the data structure ([`trie`]), the server and client
//! state machines ([`server`], [`client`]), a deterministic in-process
//! transport ([`sim`]) and the experiment harness ([`harness`]).

use std::fmt;
use std::str::FromStr;

pub mod client;
pub mod harness;
pub mod key_space;
pub mod server;
pub mod sim;
pub mod trie;
pub mod wire;

pub use key_space::{Bound, Interval, Key, KeySide, KeySpace};
pub use trie::Trie;

/// Server address. Server 0 exists from the start; the rest are numbered
/// in allocation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ServerId(pub u32);

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for ServerId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(ServerId)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ClientId(pub u32);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for ClientId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(ClientId)
    }
}
