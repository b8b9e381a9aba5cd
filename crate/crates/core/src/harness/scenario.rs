//! Fixed small scenarios: the five-key overflow and the 25-key script.

use crate::client::ClientOp;
use crate::key_space::Bound;
use crate::sim::{Interleaving, SimConfig, SimError, Simulation};
use crate::ClientId;

use super::config::ExperimentConfig;
use super::experiment::{run_experiment, Experiment};
use super::oracle::{verify_against_oracle, Report};
use super::workload::Distribution;

/// Insert order of the five-key overflow.
pub const OVERFLOW_KEYS: [&str; 5] = ["abmf", "abnm", "acnm", "aczm", "acz"];

/// Servers the 25-key script is expected to end with.
pub const SCRIPT_SERVERS: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverflowOutcome {
    pub split: Bound,
    pub lower: usize,
    pub upper: usize,
    pub servers: usize,
}

/// Inserts [`OVERFLOW_KEYS`] with capacity 4 through one client.
pub fn overflow_split() -> Result<OverflowOutcome, SimError> {
    let mut cfg = SimConfig::new(4, 1, 0);
    cfg.interleaving = Interleaving::Sequential;
    cfg.check_invariants = true;
    cfg.wire_roundtrip = true;
    let mut sim = Simulation::new(cfg);
    sim.submit(OVERFLOW_KEYS.map(|k| (ClientId(0), ClientOp::Insert(k.parse().expect("valid key")))))?;
    sim.run_until_quiescent()?;
    let s = sim.servers();
    Ok(OverflowOutcome {
        split: s[0].interval.upper.clone(),
        lower: s[0].bucket.len(),
        upper: s.get(1).map_or(0, |s| s.bucket.len()),
        servers: s.len(),
    })
}

pub fn script_config() -> ExperimentConfig {
    ExperimentConfig {
        bucket_capacity: 4,
        clients: 4,
        distribution: Distribution::Script,
        n_keys: 25,
        interleaving: Interleaving::Sequential,
        check_invariants: true,
        wire_roundtrip: true,
        ..ExperimentConfig::default()
    }
}

/// Runs the 25-key script and verifies the result.
pub fn script_run() -> Result<(Experiment, Report), SimError> {
    let cfg = script_config();
    let exp = run_experiment(&cfg)?;
    let report = verify_against_oracle(&exp.sim, &exp.oracle, cfg.seed);
    Ok((exp, report))
}
