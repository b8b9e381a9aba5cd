//! Saved file state: `state.csv` (one row per server), `buckets.txt`
//! (`id key` per line), `oracle.txt` (one key per line) and `config.txt`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::key_space::{Bound, Interval, Key, KeyError};
use crate::server::{Bucket, ServerState};
use crate::trie::{Trie, TrieError};
use crate::ServerId;

use super::config::{ConfigError, ExperimentConfig};
use super::oracle::OracleMap;

pub const STATE_CSV: &str = "state.csv";
pub const BUCKETS_TXT: &str = "buckets.txt";
pub const ORACLE_TXT: &str = "oracle.txt";
pub const CONFIG_TXT: &str = "config.txt";

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{file} line {line}: {why}")]
    Format { file: &'static str, line: usize, why: String },
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub config: ExperimentConfig,
    pub servers: Vec<ServerState>,
    pub oracle: OracleMap,
}

pub fn write_state_csv(servers: &[ServerState], w: impl Write) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["id", "lower", "upper", "keycount", "trie"])?;
    for s in servers {
        out.write_record([
            s.id.to_string(),
            s.interval.lower.to_string(),
            s.interval.upper.to_string(),
            s.bucket.len().to_string(),
            s.trie.serialize(),
        ])?;
    }
    out.flush()
}

pub fn write_snapshot(
    dir: &Path,
    config: &ExperimentConfig,
    servers: &[ServerState],
    oracle: &OracleMap,
) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_state_csv(servers, BufWriter::new(File::create(dir.join(STATE_CSV))?))?;
    let mut b = BufWriter::new(File::create(dir.join(BUCKETS_TXT))?);
    for s in servers {
        for k in s.bucket.keys() {
            writeln!(b, "{} {k}", s.id)?;
        }
    }
    b.flush()?;
    let mut o = BufWriter::new(File::create(dir.join(ORACLE_TXT))?);
    for k in oracle.keys() {
        writeln!(o, "{k}")?;
    }
    o.flush()?;
    std::fs::write(dir.join(CONFIG_TXT), config.to_string())
}

fn format_err(file: &'static str, line: usize, why: impl ToString) -> SnapshotError {
    SnapshotError::Format { file, line, why: why.to_string() }
}

fn key(file: &'static str, line: usize, text: &str) -> Result<Key, SnapshotError> {
    text.parse().map_err(|e: KeyError| format_err(file, line, e))
}

pub fn load_snapshot(dir: &Path) -> Result<Snapshot, SnapshotError> {
    let config = ExperimentConfig::parse(&std::fs::read_to_string(dir.join(CONFIG_TXT))?)?;

    let mut rows = Vec::new();
    let mut reader = csv::Reader::from_path(dir.join(STATE_CSV))?;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |n: usize| rec.get(n).ok_or_else(|| format_err(STATE_CSV, line, "missing field"));
        let id: ServerId = field(0)?.parse().map_err(|e| format_err(STATE_CSV, line, e))?;
        if id.0 as usize != rows.len() {
            return Err(format_err(STATE_CSV, line, format!("server {id} out of order")));
        }
        let lower = Bound::parse(field(1)?);
        let upper = Bound::parse(field(2)?);
        let count: usize = field(3)?.parse().map_err(|e| format_err(STATE_CSV, line, e))?;
        let trie = Trie::deserialize(field(4)?.as_bytes())
            .map_err(|e: TrieError| format_err(STATE_CSV, line, e))?;
        rows.push((id, Interval { lower, upper }, count, trie));
    }

    let mut buckets: BTreeMap<u32, Vec<Key>> = BTreeMap::new();
    let f = BufReader::new(File::open(dir.join(BUCKETS_TXT))?);
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        let (id, k) = line
            .split_once(' ')
            .ok_or_else(|| format_err(BUCKETS_TXT, i + 1, "expected `id key`"))?;
        let id: u32 = id.parse().map_err(|e| format_err(BUCKETS_TXT, i + 1, e))?;
        buckets.entry(id).or_default().push(key(BUCKETS_TXT, i + 1, k)?);
    }
    if let Some(id) = buckets.keys().find(|id| **id as usize >= rows.len()) {
        return Err(format_err(BUCKETS_TXT, 0, format!("keys for unknown server {id}")));
    }

    let mut servers = Vec::with_capacity(rows.len());
    for (id, interval, count, trie) in rows {
        let keys = buckets.remove(&id.0).unwrap_or_default();
        if keys.len() != count {
            return Err(format_err(
                STATE_CSV,
                id.0 as usize + 2,
                format!("keycount {count} but {} keys in {BUCKETS_TXT}", keys.len()),
            ));
        }
        servers.push(ServerState { id, bucket: keys.into_iter().collect::<Bucket>(), trie, interval });
    }

    let mut oracle = OracleMap::new();
    let f = BufReader::new(File::open(dir.join(ORACLE_TXT))?);
    for (i, line) in f.lines().enumerate() {
        oracle.insert(key(ORACLE_TXT, i + 1, &line?)?);
    }
    Ok(Snapshot { config, servers, oracle })
}
