//! Experiment driver and CSV output.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::sim::{OpRecord, SimError, Simulation};

use super::config::ExperimentConfig;
use super::oracle::OracleMap;
use super::snapshot;
use super::workload::gen_workload;

/// One sampled point of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub tick: u64,
    pub keys: u64,
    pub servers: u64,
    pub splits: u64,
    pub messages: u64,
    pub forwards: u64,
    pub iams: u64,
    pub load_factor: f64,
    /// Messages per completed op since the previous row.
    pub msgs_per_op: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadStats {
    pub samples: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub keys: u64,
    pub servers: usize,
    pub splits: u64,
    pub final_load_factor: f64,
    /// Load factor over samples taken once keys exceed ten buckets' worth.
    pub post_warmup: Option<LoadStats>,
    pub msgs_per_op_second_decile: f64,
    pub msgs_per_op_last_decile: f64,
    pub ops: u64,
    pub messages: u64,
    pub forwards: u64,
    pub iams: u64,
    pub max_hops: u32,
    pub failed_ops: u64,
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub sim: Simulation,
    pub oracle: OracleMap,
    pub rows: Vec<MetricsRow>,
    pub summary: Summary,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment, SimError> {
    let mut sim = Simulation::new(cfg.sim_config());
    sim.submit(gen_workload(&cfg.workload_spec()))?;
    sim.run_until_quiescent()?;
    let oracle = OracleMap::from_log(sim.op_log());
    let rows = metrics_rows(&sim);
    let summary = summarize(cfg, &sim, &rows);
    Ok(Experiment { config: cfg.clone(), sim, oracle, rows, summary })
}

fn metrics_rows(sim: &Simulation) -> Vec<MetricsRow> {
    // Ops completed by each sample, from the log: the sample is taken as
    // the insert that crosses the threshold completes.
    let mut rows = Vec::with_capacity(sim.samples().len());
    let mut inserted = 0u64;
    let mut sample_ops = Vec::with_capacity(sim.samples().len());
    let mut next = sim.samples().iter().peekable();
    for (i, rec) in sim.op_log().iter().enumerate() {
        if rec.op == "insert" && rec.status == crate::server::ReplyStatus::Ok {
            inserted += 1;
            if next.peek().is_some_and(|s| s.keys == inserted) {
                next.next();
                sample_ops.push(i as u64 + 1);
            }
        }
    }
    let (mut prev_msgs, mut prev_ops) = (0u64, 0u64);
    for (s, ops) in sim.samples().iter().zip(sample_ops) {
        let d_ops = ops - prev_ops;
        let msgs_per_op = if d_ops == 0 { 0.0 } else { (s.messages - prev_msgs) as f64 / d_ops as f64 };
        rows.push(MetricsRow {
            tick: s.tick,
            keys: s.keys,
            servers: s.servers,
            splits: s.splits,
            messages: s.messages,
            forwards: s.forwards,
            iams: s.iams,
            load_factor: s.load_factor,
            msgs_per_op,
        });
        prev_msgs = s.messages;
        prev_ops = ops;
    }
    rows
}

/// Mean messages per insert over the inserts whose completion index lies
/// in `[lo·n, hi·n)`, `n` the number of inserts.
pub fn insert_msgs_window(log: &[OpRecord], lo: f64, hi: f64) -> f64 {
    let inserts: Vec<&OpRecord> = log.iter().filter(|r| r.op == "insert").collect();
    let n = inserts.len() as f64;
    let (a, b) = ((lo * n).round() as usize, ((hi * n).round() as usize).min(inserts.len()));
    if a >= b {
        return 0.0;
    }
    inserts[a..b].iter().map(|r| r.messages as f64).sum::<f64>() / (b - a) as f64
}

pub fn post_warmup_load(rows: &[MetricsRow], capacity: usize) -> Option<LoadStats> {
    let warm: Vec<f64> = rows
        .iter()
        .filter(|r| r.keys > 10 * capacity as u64)
        .map(|r| r.load_factor)
        .collect();
    if warm.is_empty() {
        return None;
    }
    Some(LoadStats {
        samples: warm.len(),
        min: warm.iter().copied().fold(f64::INFINITY, f64::min),
        mean: warm.iter().sum::<f64>() / warm.len() as f64,
        max: warm.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

fn summarize(cfg: &ExperimentConfig, sim: &Simulation, rows: &[MetricsRow]) -> Summary {
    let st = sim.stats();
    Summary {
        keys: sim.key_count(),
        servers: sim.servers().len(),
        splits: st.splits,
        final_load_factor: sim.load_factor(),
        post_warmup: post_warmup_load(rows, cfg.bucket_capacity),
        msgs_per_op_second_decile: insert_msgs_window(sim.op_log(), 0.1, 0.2),
        msgs_per_op_last_decile: insert_msgs_window(sim.op_log(), 0.9, 1.0),
        ops: st.ops,
        messages: st.messages,
        forwards: st.forwards,
        iams: st.iams,
        max_hops: st.max_hops,
        failed_ops: st.failed_ops,
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "keys={}", self.keys)?;
        writeln!(f, "servers={}", self.servers)?;
        writeln!(f, "splits={}", self.splits)?;
        writeln!(f, "final_load_factor={:.6}", self.final_load_factor)?;
        if let Some(w) = &self.post_warmup {
            writeln!(f, "post_warmup_samples={}", w.samples)?;
            writeln!(f, "post_warmup_load_min={:.6}", w.min)?;
            writeln!(f, "post_warmup_load_mean={:.6}", w.mean)?;
            writeln!(f, "post_warmup_load_max={:.6}", w.max)?;
        }
        writeln!(f, "msgs_per_op_second_decile={:.6}", self.msgs_per_op_second_decile)?;
        writeln!(f, "msgs_per_op_last_decile={:.6}", self.msgs_per_op_last_decile)?;
        writeln!(f, "ops={}", self.ops)?;
        writeln!(f, "messages={}", self.messages)?;
        writeln!(f, "forwards={}", self.forwards)?;
        writeln!(f, "iams={}", self.iams)?;
        writeln!(f, "max_hops={}", self.max_hops)?;
        writeln!(f, "failed_ops={}", self.failed_ops)
    }
}

pub fn write_stats_csv(rows: &[MetricsRow], w: impl Write) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["tick", "keys", "servers", "splits", "messages", "forwards", "iams", "loadfactor"])?;
    for r in rows {
        out.write_record([
            r.tick.to_string(),
            r.keys.to_string(),
            r.servers.to_string(),
            r.splits.to_string(),
            r.messages.to_string(),
            r.forwards.to_string(),
            r.iams.to_string(),
            format!("{:.6}", r.load_factor),
        ])?;
    }
    out.flush()
}

pub fn write_ops_csv(log: &[OpRecord], w: impl Write) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["clientId", "opSeq", "op", "key(s)", "serverFirstAddressed", "hops", "iamReceived"])?;
    for r in log {
        out.write_record([
            r.client.to_string(),
            r.seq.to_string(),
            r.op.to_string(),
            r.keys.clone(),
            r.first_addressed.to_string(),
            r.hops.to_string(),
            u8::from(r.iam_received).to_string(),
        ])?;
    }
    out.flush()
}

pub const STATS_CSV: &str = "stats.csv";
pub const OPS_CSV: &str = "ops.csv";
pub const SUMMARY_TXT: &str = "summary.txt";

/// Writes the stats series, op log, summary and a state snapshot.
pub fn write_outputs(exp: &Experiment, dir: &Path) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_stats_csv(&exp.rows, BufWriter::new(File::create(dir.join(STATS_CSV))?))?;
    write_ops_csv(exp.sim.op_log(), BufWriter::new(File::create(dir.join(OPS_CSV))?))?;
    std::fs::write(dir.join(SUMMARY_TXT), exp.summary.to_string())?;
    snapshot::write_snapshot(dir, &exp.config, exp.sim.servers(), &exp.oracle)
}
