//! `key=value` experiment configuration.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::key_space::DEFAULT_MAX_KEY_LEN;
use crate::server::IamPayload;
use crate::sim::{Interleaving, SimConfig};

use super::workload::{Distribution, WorkloadKind, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {why}")]
    BadValue { key: String, value: String, why: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub bucket_capacity: usize,
    pub clients: usize,
    pub seed: u64,
    pub server_cap: Option<usize>,
    pub workload: WorkloadKind,
    pub n_keys: usize,
    pub key_len_min: usize,
    pub key_len_max: usize,
    pub distribution: Distribution,
    pub interleaving: Interleaving,
    pub iam_payload: IamPayload,
    pub check_invariants: bool,
    pub wire_roundtrip: bool,
    pub fault_skip_transfer: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            bucket_capacity: 50,
            clients: 4,
            seed: 1,
            server_cap: None,
            workload: WorkloadKind::Insert,
            n_keys: 200_000,
            key_len_min: 4,
            key_len_max: 12,
            distribution: Distribution::Random,
            interleaving: Interleaving::Seeded,
            iam_payload: IamPayload::Minimal,
            check_invariants: false,
            wire_roundtrip: false,
            fault_skip_transfer: false,
        }
    }
}

pub const KEYS: &[&str] = &[
    "bucket_capacity",
    "clients",
    "seed",
    "server_cap",
    "workload",
    "n_keys",
    "key_len_min",
    "key_len_max",
    "distribution",
    "interleaving",
    "iam_payload",
    "check_invariants",
    "wire_roundtrip",
    "fault_skip_transfer",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        why: e.to_string(),
    })
}

fn bad(key: &str, value: &str, why: &str) -> ConfigError {
    ConfigError::BadValue { key: key.into(), value: value.into(), why: why.into() }
}

impl ExperimentConfig {
    /// Parses `key=value` lines over the defaults. Blank lines and `#`
    /// comments are skipped.
    pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "bucket_capacity" => self.bucket_capacity = parse(key, value)?,
            "clients" => self.clients = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "server_cap" => {
                self.server_cap = match value {
                    "" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "workload" => {
                self.workload = match value {
                    "insert" => WorkloadKind::Insert,
                    "insert_search" => WorkloadKind::InsertSearch,
                    _ => return Err(bad(key, value, "expected insert or insert_search")),
                }
            }
            "n_keys" => self.n_keys = parse(key, value)?,
            "key_len_min" => self.key_len_min = parse(key, value)?,
            "key_len_max" => self.key_len_max = parse(key, value)?,
            "distribution" => {
                self.distribution = match value {
                    "random" => Distribution::Random,
                    "ascending" => Distribution::Ascending,
                    "script" => Distribution::Script,
                    _ => return Err(bad(key, value, "expected random, ascending or script")),
                }
            }
            "interleaving" => {
                self.interleaving = match value {
                    "sequential" => Interleaving::Sequential,
                    "seeded" => Interleaving::Seeded,
                    _ => return Err(bad(key, value, "expected sequential or seeded")),
                }
            }
            "iam_payload" => {
                self.iam_payload = match value {
                    "minimal" => IamPayload::Minimal,
                    "whole" => IamPayload::Whole,
                    _ => return Err(bad(key, value, "expected minimal or whole")),
                }
            }
            "check_invariants" => self.check_invariants = parse(key, value)?,
            "wire_roundtrip" => self.wire_roundtrip = parse(key, value)?,
            "fault_skip_transfer" => self.fault_skip_transfer = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let num = |k: &str, v: usize| bad(k, &v.to_string(), "must be positive");
        if self.bucket_capacity == 0 {
            return Err(num("bucket_capacity", 0));
        }
        if self.clients == 0 {
            return Err(num("clients", 0));
        }
        if self.n_keys == 0 {
            return Err(num("n_keys", 0));
        }
        if self.key_len_min == 0 || self.key_len_min > self.key_len_max {
            return Err(bad("key_len_min", &self.key_len_min.to_string(), "need 1 <= key_len_min <= key_len_max"));
        }
        if self.key_len_max > DEFAULT_MAX_KEY_LEN {
            return Err(bad("key_len_max", &self.key_len_max.to_string(), "exceeds the key length limit"));
        }
        if self.distribution == Distribution::Script && self.clients < 4 {
            return Err(bad("clients", &self.clients.to_string(), "the script uses 4 clients"));
        }
        if self.server_cap == Some(0) {
            return Err(num("server_cap", 0));
        }
        Ok(())
    }

    pub fn workload_spec(&self) -> WorkloadSpec {
        WorkloadSpec {
            n_keys: self.n_keys,
            distribution: self.distribution,
            kind: self.workload,
            key_len_min: self.key_len_min,
            key_len_max: self.key_len_max,
            clients: self.clients,
            seed: self.seed,
        }
    }

    /// Keys the workload will insert; the script fixes its own count.
    pub fn effective_keys(&self) -> usize {
        match self.distribution {
            Distribution::Script => super::workload::SCRIPT.len(),
            _ => self.n_keys,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let mut sim = SimConfig::new(self.bucket_capacity, self.clients, self.seed);
        sim.server_cap = self.server_cap;
        sim.interleaving = self.interleaving;
        sim.server.iam_payload = self.iam_payload;
        sim.server.fault_skip_transfer = self.fault_skip_transfer;
        sim.check_invariants = self.check_invariants;
        sim.wire_roundtrip = self.wire_roundtrip;
        sim.sample_every = Some((self.effective_keys() as u64 / 100).max(1));
        sim
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "bucket_capacity={}", self.bucket_capacity)?;
        writeln!(f, "clients={}", self.clients)?;
        writeln!(f, "seed={}", self.seed)?;
        match self.server_cap {
            Some(c) => writeln!(f, "server_cap={c}")?,
            None => writeln!(f, "server_cap=none")?,
        }
        let workload = match self.workload {
            WorkloadKind::Insert => "insert",
            WorkloadKind::InsertSearch => "insert_search",
        };
        writeln!(f, "workload={workload}")?;
        writeln!(f, "n_keys={}", self.n_keys)?;
        writeln!(f, "key_len_min={}", self.key_len_min)?;
        writeln!(f, "key_len_max={}", self.key_len_max)?;
        let dist = match self.distribution {
            Distribution::Random => "random",
            Distribution::Ascending => "ascending",
            Distribution::Script => "script",
        };
        writeln!(f, "distribution={dist}")?;
        let il = match self.interleaving {
            Interleaving::Sequential => "sequential",
            Interleaving::Seeded => "seeded",
        };
        writeln!(f, "interleaving={il}")?;
        let iam = match self.iam_payload {
            IamPayload::Minimal => "minimal",
            IamPayload::Whole => "whole",
        };
        writeln!(f, "iam_payload={iam}")?;
        writeln!(f, "check_invariants={}", self.check_invariants)?;
        writeln!(f, "wire_roundtrip={}", self.wire_roundtrip)?;
        writeln!(f, "fault_skip_transfer={}", self.fault_skip_transfer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_print_agree() {
        let text = "# desk run\nbucket_capacity = 100\nclients=8\nserver_cap=64\ndistribution=ascending\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.bucket_capacity, 100);
        assert_eq!(cfg.server_cap, Some(64));
        assert_eq!(cfg.distribution, Distribution::Ascending);
        assert_eq!(ExperimentConfig::parse(&cfg.to_string()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(ExperimentConfig::parse("nope"), Err(ConfigError::Syntax { line: 1 }));
        assert_eq!(
            ExperimentConfig::parse("color=red"),
            Err(ConfigError::UnknownKey("color".into()))
        );
        assert!(ExperimentConfig::parse("bucket_capacity=0").is_err());
        assert!(ExperimentConfig::parse("distribution=zipf").is_err());
        assert!(ExperimentConfig::parse("key_len_min=5\nkey_len_max=3").is_err());
        assert!(ExperimentConfig::parse("distribution=script\nclients=2").is_err());
    }
}
