//! Ordered digit alphabet, keys, boundary strings and intervals.
//!
//! A boundary string `C` stands for `C` followed by infinitely many
//! [`MAX_DIGIT`]s. The empty boundary is therefore above every key (TOP),
//! and the distinguished [`Bound::Bottom`] is below every key.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Smallest digit of every alphabet. Never part of a key.
pub const MIN_DIGIT: u8 = b'_';
/// Greatest digit of every alphabet. Never part of a key.
pub const MAX_DIGIT: u8 = b'|';
/// Default maximum key length.
pub const DEFAULT_MAX_KEY_LEN: usize = 32;

/// Position of a digit in the total order: `_` first, `|` last, everything
/// else by code point.
#[inline]
pub fn digit_rank(d: u8) -> u16 {
    match d {
        MIN_DIGIT => 0,
        MAX_DIGIT => 0x200,
        _ => d as u16 + 1,
    }
}

#[inline]
pub fn digit_cmp(a: u8, b: u8) -> Ordering {
    digit_rank(a).cmp(&digit_rank(b))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyError {
    #[error("key is empty")]
    Empty,
    #[error("key is {len} digits long, limit is {max}")]
    TooLong { len: usize, max: usize },
    #[error("byte 0x{byte:02x} at offset {offset} is not a key digit")]
    BadDigit { byte: u8, offset: usize },
}

/// The set of digits keys may use, plus the key length limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeySpace {
    first: u8,
    last: u8,
    max_len: usize,
}

impl Default for KeySpace {
    fn default() -> Self {
        KeySpace { first: 0x21, last: 0x7a, max_len: DEFAULT_MAX_KEY_LEN }
    }
}

impl KeySpace {
    /// Digits `first..=last` (sentinels excluded), keys up to `max_len` long.
    pub fn new(first: u8, last: u8, max_len: usize) -> Self {
        assert!(first <= last, "empty alphabet");
        assert!(max_len >= 1, "keys need at least one digit");
        let space = KeySpace { first, last, max_len };
        assert!(space.digits().next().is_some(), "alphabet holds only sentinels");
        space
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn is_digit(&self, b: u8) -> bool {
        b >= self.first && b <= self.last && b != MIN_DIGIT && b != MAX_DIGIT
    }

    /// Non-sentinel digits in ascending order.
    pub fn digits(&self) -> impl Iterator<Item = u8> + '_ {
        (self.first..=self.last).filter(move |b| self.is_digit(*b))
    }

    pub fn key(&self, bytes: &[u8]) -> Result<Key, KeyError> {
        if bytes.is_empty() {
            return Err(KeyError::Empty);
        }
        if bytes.len() > self.max_len {
            return Err(KeyError::TooLong { len: bytes.len(), max: self.max_len });
        }
        if let Some(offset) = bytes.iter().position(|b| !self.is_digit(*b)) {
            return Err(KeyError::BadDigit { byte: bytes[offset], offset });
        }
        Ok(Key(bytes.into()))
    }

    /// Every key of length `1..=max_len`, in ascending order. Only sensible
    /// for tiny spaces.
    pub fn enumerate(&self) -> Vec<Key> {
        let digits: Vec<u8> = self.digits().collect();
        let mut out = Vec::new();
        let mut frontier: Vec<Vec<u8>> = vec![Vec::new()];
        for _ in 0..self.max_len {
            let mut next = Vec::with_capacity(frontier.len() * digits.len());
            for prefix in &frontier {
                for &d in &digits {
                    let mut k = prefix.clone();
                    k.push(d);
                    next.push(k);
                }
            }
            out.extend(next.iter().map(|k| Key(k.as_slice().into())));
            frontier = next;
        }
        out.sort();
        out
    }
}

/// A non-empty digit sequence without sentinels.
///
/// Byte order equals digit order for keys, so the derived `Ord` is the
/// lexicographic key order.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Key(Box<[u8]>);

impl Key {
    /// Validates against the default key space.
    pub fn new(bytes: &[u8]) -> Result<Key, KeyError> {
        KeySpace::default().key(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromStr for Key {
    type Err = KeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Key::new(s.as_bytes())
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from_utf8_lossy(&self.0))
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", String::from_utf8_lossy(&self.0))
    }
}

/// A boundary: BOTTOM, or a digit string padded with max digits.
///
/// `Digits(vec![])` is TOP. `Ord` is the padded order: a proper prefix is
/// greater than its extensions.
#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Bound {
    Bottom,
    Digits(Vec<u8>),
}

impl Bound {
    pub const TOP: Bound = Bound::Digits(Vec::new());

    pub fn top() -> Bound {
        Bound::TOP
    }

    pub fn from_digits(d: impl Into<Vec<u8>>) -> Bound {
        Bound::Digits(d.into())
    }

    pub fn is_top(&self) -> bool {
        matches!(self, Bound::Digits(d) if d.is_empty())
    }

    pub fn is_bottom(&self) -> bool {
        matches!(self, Bound::Bottom)
    }

    /// Digits of a non-BOTTOM bound (empty for TOP).
    pub fn digits(&self) -> Option<&[u8]> {
        match self {
            Bound::Bottom => None,
            Bound::Digits(d) => Some(d),
        }
    }

    /// Parses the textual rendering: `_` is BOTTOM, `|` is TOP.
    pub fn parse(s: &str) -> Bound {
        match s {
            "_" => Bound::Bottom,
            "|" => Bound::TOP,
            other => Bound::Digits(other.as_bytes().to_vec()),
        }
    }
}

impl From<&str> for Bound {
    fn from(s: &str) -> Self {
        Bound::Digits(s.as_bytes().to_vec())
    }
}

impl From<&Key> for Bound {
    fn from(k: &Key) -> Self {
        Bound::Digits(k.as_bytes().to_vec())
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Bottom => f.write_str("_"),
            Bound::Digits(d) if d.is_empty() => f.write_str("|"),
            Bound::Digits(d) => f.write_str(&String::from_utf8_lossy(d)),
        }
    }
}

impl fmt::Debug for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bound({self})")
    }
}

impl Ord for Bound {
    fn cmp(&self, other: &Self) -> Ordering {
        bound_order(self, other)
    }
}

impl PartialOrd for Bound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Where a key falls relative to a bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeySide {
    /// At or below the bound.
    Le,
    /// Above the bound.
    Gt,
}

/// Compares a key against a bound padded with max digits.
pub fn bound_compare(key: &Key, bound: &Bound) -> KeySide {
    match bound {
        Bound::Bottom => KeySide::Gt,
        Bound::Digits(c) => digits_vs_bound(key.as_bytes(), c),
    }
}

/// Key-vs-bound comparison on raw digit slices.
#[inline]
pub(crate) fn digits_vs_bound(key: &[u8], bound: &[u8]) -> KeySide {
    for (k, c) in key.iter().zip(bound) {
        match digit_cmp(*k, *c) {
            Ordering::Less => return KeySide::Le,
            Ordering::Greater => return KeySide::Gt,
            Ordering::Equal => {}
        }
    }
    KeySide::Le
}

/// Padded order on raw (non-BOTTOM) digit strings.
pub(crate) fn digits_order(a: &[u8], b: &[u8]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match digit_cmp(*x, *y) {
            Ordering::Equal => {}
            o => return o,
        }
    }
    // The shorter string is padded with max digits, so it wins.
    b.len().cmp(&a.len())
}

/// Total order on padded bounds; BOTTOM least, TOP greatest.
pub fn bound_order(a: &Bound, b: &Bound) -> Ordering {
    match (a, b) {
        (Bound::Bottom, Bound::Bottom) => Ordering::Equal,
        (Bound::Bottom, _) => Ordering::Less,
        (_, Bound::Bottom) => Ordering::Greater,
        (Bound::Digits(x), Bound::Digits(y)) => digits_order(x, y),
    }
}

pub(crate) fn common_prefix_len(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// Longest common leading digit sequence. `None` when either side is BOTTOM.
pub fn common_prefix(a: &Bound, b: &Bound) -> Option<Bound> {
    let (x, y) = (a.digits()?, b.digits()?);
    Some(Bound::Digits(x[..common_prefix_len(x, y)].to_vec()))
}

/// Half-open key range `(lower, upper]` under padded comparison.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Interval {
    pub lower: Bound,
    pub upper: Bound,
}

impl Interval {
    pub fn new(lower: Bound, upper: Bound) -> Interval {
        debug_assert!(lower.is_bottom() || lower < upper, "inverted interval {lower} {upper}");
        Interval { lower, upper }
    }

    /// `(BOTTOM, TOP]`, the initial interval of server 0.
    pub fn full() -> Interval {
        Interval { lower: Bound::Bottom, upper: Bound::TOP }
    }

    pub fn contains(&self, key: &Key) -> bool {
        interval_contains(self, key)
    }

    /// Whether keys immediately above `b` fall into this interval.
    pub fn owns_successor_of(&self, b: &Bound) -> bool {
        self.lower <= *b && *b < self.upper
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "]{}, {}]", self.lower, self.upper)
    }
}

impl fmt::Debug for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Interval{self}")
    }
}

pub fn interval_contains(iv: &Interval, key: &Key) -> bool {
    bound_compare(key, &iv.lower) == KeySide::Gt && bound_compare(key, &iv.upper) == KeySide::Le
}
