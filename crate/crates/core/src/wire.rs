//! Byte encoding of request and reply envelopes.
//!
//! An envelope is a sequence of fields, each written as its decimal byte
//! length, a colon, then the bytes: `3:REQ6:INSERT...`. Bounds use their
//! text rendering (`_` BOTTOM, `|` TOP), absent optional values are empty
//! fields, and IAM payloads carry the trie serialization.

use thiserror::Error;

use crate::key_space::{Bound, Key, KeyError};
use crate::server::{
    Iam, Op, RangeCursor, RangePayload, ReplyEnvelope, ReplyStatus, RequestEnvelope,
};
use crate::trie::{Trie, TrieError};
use crate::{ClientId, ServerId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("truncated envelope at byte {0}")]
    Truncated(usize),
    #[error("bad field length at byte {0}")]
    BadLength(usize),
    #[error("unexpected field {found:?} at byte {offset}, wanted {wanted}")]
    Unexpected { offset: usize, wanted: &'static str, found: String },
    #[error("bad number {0:?}")]
    BadNumber(String),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error(transparent)]
    Trie(#[from] TrieError),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

struct Writer(Vec<u8>);

impl Writer {
    fn field(&mut self, bytes: &[u8]) -> &mut Self {
        self.0.extend_from_slice(bytes.len().to_string().as_bytes());
        self.0.push(b':');
        self.0.extend_from_slice(bytes);
        self
    }

    fn text(&mut self, s: &str) -> &mut Self {
        self.field(s.as_bytes())
    }

    fn num(&mut self, n: u32) -> &mut Self {
        self.text(&n.to_string())
    }

    fn bound(&mut self, b: &Bound) -> &mut Self {
        self.text(&b.to_string())
    }

    fn flag(&mut self, on: bool) -> &mut Self {
        self.field(if on { b"1" } else { b"0" })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn field(&mut self) -> Result<&'a [u8], WireError> {
        let start = self.at;
        let colon = self.buf[self.at..]
            .iter()
            .position(|b| *b == b':')
            .ok_or(WireError::Truncated(start))?;
        let digits = &self.buf[self.at..self.at + colon];
        if digits.is_empty() || !digits.iter().all(u8::is_ascii_digit) {
            return Err(WireError::BadLength(start));
        }
        let len: usize = std::str::from_utf8(digits)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(WireError::BadLength(start))?;
        let body = self.at + colon + 1;
        let end = body.checked_add(len).ok_or(WireError::BadLength(start))?;
        if end > self.buf.len() {
            return Err(WireError::Truncated(start));
        }
        self.at = end;
        Ok(&self.buf[body..end])
    }

    fn expect(&mut self, wanted: &'static str) -> Result<(), WireError> {
        let offset = self.at;
        let f = self.field()?;
        if f != wanted.as_bytes() {
            return Err(WireError::Unexpected {
                offset,
                wanted,
                found: String::from_utf8_lossy(f).into_owned(),
            });
        }
        Ok(())
    }

    fn text(&mut self) -> Result<&'a str, WireError> {
        let f = self.field()?;
        std::str::from_utf8(f).map_err(|_| WireError::BadNumber(String::from_utf8_lossy(f).into()))
    }

    fn num(&mut self) -> Result<u32, WireError> {
        let t = self.text()?;
        t.parse().map_err(|_| WireError::BadNumber(t.to_string()))
    }

    fn key(&mut self) -> Result<Key, WireError> {
        Ok(Key::new(self.field()?)?)
    }

    fn bound(&mut self) -> Result<Bound, WireError> {
        Ok(Bound::parse(self.text()?))
    }

    fn flag(&mut self) -> Result<bool, WireError> {
        let offset = self.at;
        match self.field()? {
            b"1" => Ok(true),
            b"0" => Ok(false),
            f => Err(WireError::Unexpected {
                offset,
                wanted: "0 or 1",
                found: String::from_utf8_lossy(f).into_owned(),
            }),
        }
    }

    fn finish(&self) -> Result<(), WireError> {
        match self.buf.len() - self.at {
            0 => Ok(()),
            n => Err(WireError::Trailing(n)),
        }
    }
}

pub fn encode_request(req: &RequestEnvelope) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(64));
    w.text("REQ").text(op_tag(&req.op)).num(req.client.0).num(req.addressed.0);
    match &req.cm_client {
        Some(cm) => w.flag(true).bound(cm),
        None => w.flag(false),
    };
    w.num(req.hops);
    match &req.op {
        Op::Insert(k) | Op::Search(k) => {
            w.field(k.as_bytes());
        }
        Op::Range { kmin, kmax, cursor } => {
            w.field(kmin.as_bytes()).field(kmax.as_bytes());
            match cursor {
                RangeCursor::Start => w.flag(false),
                RangeCursor::After(b) => w.flag(true).bound(b),
            };
        }
    }
    w.0
}

fn op_tag(op: &Op) -> &'static str {
    match op {
        Op::Insert(_) => "INSERT",
        Op::Search(_) => "SEARCH",
        Op::Range { .. } => "RANGE",
    }
}

pub fn decode_request(buf: &[u8]) -> Result<RequestEnvelope, WireError> {
    let mut r = Reader { buf, at: 0 };
    r.expect("REQ")?;
    let tag_at = r.at;
    let tag = r.text()?;
    let client = ClientId(r.num()?);
    let addressed = ServerId(r.num()?);
    let cm_client = if r.flag()? { Some(r.bound()?) } else { None };
    let hops = r.num()?;
    let op = match tag {
        "INSERT" => Op::Insert(r.key()?),
        "SEARCH" => Op::Search(r.key()?),
        "RANGE" => {
            let kmin = r.key()?;
            let kmax = r.key()?;
            let cursor = if r.flag()? { RangeCursor::After(r.bound()?) } else { RangeCursor::Start };
            Op::Range { kmin, kmax, cursor }
        }
        other => {
            return Err(WireError::Unexpected {
                offset: tag_at,
                wanted: "INSERT, SEARCH or RANGE",
                found: other.to_string(),
            })
        }
    };
    r.finish()?;
    Ok(RequestEnvelope { op, client, addressed, cm_client, hops })
}

pub fn encode_reply(rep: &ReplyEnvelope) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(64));
    w.text("REP");
    match &rep.status {
        ReplyStatus::Ok => w.text("OK"),
        ReplyStatus::Duplicate => w.text("DUPLICATE"),
        ReplyStatus::NotFound => w.text("NOT_FOUND"),
        ReplyStatus::Failed(why) => w.text("FAILED").text(why),
    };
    w.num(rep.client.0).num(rep.server.0).num(rep.hops);
    match &rep.iam {
        Some(iam) => {
            w.flag(true)
                .text(&iam.trie.serialize())
                .num(iam.m.0)
                .num(iam.m_prime.0)
                .bound(&iam.coverage);
        }
        None => {
            w.flag(false);
        }
    }
    match &rep.range {
        Some(rp) => {
            w.flag(true).num(rp.keys.len() as u32);
            for k in &rp.keys {
                w.field(k.as_bytes());
            }
            w.bound(&rp.cm_server).flag(rp.stop);
            match rp.next_hint {
                Some(id) => w.flag(true).num(id.0),
                None => w.flag(false),
            };
        }
        None => {
            w.flag(false);
        }
    }
    w.0
}

pub fn decode_reply(buf: &[u8]) -> Result<ReplyEnvelope, WireError> {
    let mut r = Reader { buf, at: 0 };
    r.expect("REP")?;
    let status_at = r.at;
    let status = match r.text()? {
        "OK" => ReplyStatus::Ok,
        "DUPLICATE" => ReplyStatus::Duplicate,
        "NOT_FOUND" => ReplyStatus::NotFound,
        "FAILED" => ReplyStatus::Failed(r.text()?.to_string()),
        other => {
            return Err(WireError::Unexpected {
                offset: status_at,
                wanted: "reply status",
                found: other.to_string(),
            })
        }
    };
    let client = ClientId(r.num()?);
    let server = ServerId(r.num()?);
    let hops = r.num()?;
    let iam = if r.flag()? {
        let trie = Trie::deserialize(r.field()?)?;
        let m = ServerId(r.num()?);
        let m_prime = ServerId(r.num()?);
        let coverage = r.bound()?;
        Some(Iam { trie, m, m_prime, coverage })
    } else {
        None
    };
    let range = if r.flag()? {
        let n = r.num()?;
        let keys = (0..n).map(|_| r.key()).collect::<Result<Vec<_>, _>>()?;
        let cm_server = r.bound()?;
        let stop = r.flag()?;
        let next_hint = if r.flag()? { Some(ServerId(r.num()?)) } else { None };
        Some(RangePayload { keys, cm_server, stop, next_hint })
    } else {
        None
    };
    r.finish()?;
    Ok(ReplyEnvelope { status, client, server, hops, iam, range })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(s: &str) -> Key {
        s.parse().unwrap()
    }

    #[test]
    fn request_layout() {
        let req = RequestEnvelope {
            op: Op::Insert(k("acz")),
            client: ClientId(2),
            addressed: ServerId(0),
            cm_client: Some(Bound::TOP),
            hops: 1,
        };
        let bytes = encode_request(&req);
        assert_eq!(bytes, b"3:REQ6:INSERT1:21:01:11:|1:13:acz");
        assert_eq!(decode_request(&bytes).unwrap(), req);
    }

    #[test]
    fn reply_with_iam_and_range() {
        let rep = ReplyEnvelope {
            status: ReplyStatus::Ok,
            client: ClientId(1),
            server: ServerId(1),
            hops: 2,
            iam: Some(Iam {
                trie: Trie::deserialize(b"I(:,0)L(0)L(1)").unwrap(),
                m: ServerId(0),
                m_prime: ServerId(1),
                coverage: Bound::from("a:"),
            }),
            range: Some(RangePayload {
                keys: vec![k("a:b"), k("1:2")],
                cm_server: Bound::from("x"),
                stop: false,
                next_hint: Some(ServerId(3)),
            }),
        };
        assert_eq!(decode_reply(&encode_reply(&rep)).unwrap(), rep);
    }

    #[test]
    fn rejects_damage() {
        let req = RequestEnvelope {
            op: Op::Search(k("q")),
            client: ClientId(0),
            addressed: ServerId(0),
            cm_client: None,
            hops: 0,
        };
        let bytes = encode_request(&req);
        assert!(matches!(decode_request(&bytes[..bytes.len() - 1]), Err(WireError::Truncated(_))));
        let mut extra = bytes.clone();
        extra.push(b'x');
        assert_eq!(decode_request(&extra), Err(WireError::Trailing(1)));
        assert!(matches!(decode_reply(&bytes), Err(WireError::Unexpected { .. })));
    }
}
