use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use thstar::harness::config::{ConfigError, ExperimentConfig};
use thstar::harness::experiment::{run_experiment, write_outputs};
use thstar::harness::oracle::verify_against_oracle;
use thstar::harness::scenario::{overflow_split, script_run, SCRIPT_SERVERS};
use thstar::harness::snapshot::{self, load_snapshot};
use thstar::sim::Simulation;

#[derive(Parser)]
#[command(name = "thstar", version, about = "Distributed trie-hashed file simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Cmd {
    /// Run an experiment and write CSVs plus a state snapshot.
    Run(RunArgs),
    /// Five-key overflow with capacity 4; checks the split string and sizes.
    #[command(name = "scenario-3-2")]
    Scenario32,
    /// The 25-key, 4-client script with capacity 4.
    #[command(name = "scenario-4-2")]
    Scenario42 {
        /// Directory for CSVs and the state snapshot.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the per-server state of a saved run.
    Dump {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Check a saved run against its oracle.
    Verify {
        #[arg(long)]
        dir: PathBuf,
        /// Seed for the random probes (defaults to the run's seed).
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Verify against the oracle after the run.
    #[arg(long)]
    verify: bool,
    #[arg(long)]
    bucket_capacity: Option<String>,
    #[arg(long)]
    clients: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    server_cap: Option<String>,
    #[arg(long)]
    workload: Option<String>,
    #[arg(long)]
    n_keys: Option<String>,
    #[arg(long)]
    key_len_min: Option<String>,
    #[arg(long)]
    key_len_max: Option<String>,
    #[arg(long)]
    distribution: Option<String>,
    #[arg(long)]
    interleaving: Option<String>,
    #[arg(long)]
    iam_payload: Option<String>,
    #[arg(long)]
    check_invariants: bool,
    #[arg(long)]
    wire_roundtrip: bool,
    #[arg(long)]
    fault_skip_transfer: bool,
}

impl RunArgs {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ExperimentConfig::parse(&text)?
            }
            None => ExperimentConfig::default(),
        };
        let flags = [
            ("bucket_capacity", &self.bucket_capacity),
            ("clients", &self.clients),
            ("seed", &self.seed),
            ("server_cap", &self.server_cap),
            ("workload", &self.workload),
            ("n_keys", &self.n_keys),
            ("key_len_min", &self.key_len_min),
            ("key_len_max", &self.key_len_max),
            ("distribution", &self.distribution),
            ("interleaving", &self.interleaving),
            ("iam_payload", &self.iam_payload),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        cfg.check_invariants |= self.check_invariants;
        cfg.wire_roundtrip |= self.wire_roundtrip;
        cfg.fault_skip_transfer |= self.fault_skip_transfer;
        cfg.check()?;
        Ok(cfg)
    }
}

fn run(cmd: Cmd) -> anyhow::Result<bool> {
    match cmd {
        Cmd::Run(args) => {
            let cfg = args.config()?;
            let exp = run_experiment(&cfg)?;
            write_outputs(&exp, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
            print!("{}", exp.summary);
            if !args.verify {
                return Ok(true);
            }
            let report = verify_against_oracle(&exp.sim, &exp.oracle, cfg.seed);
            print!("{report}");
            Ok(report.is_ok())
        }
        Cmd::Scenario32 => {
            let o = overflow_split()?;
            println!("split_string={} lower={} upper={}", o.split, o.lower, o.upper);
            Ok(o.split.to_string() == "acn" && o.lower == 3 && o.upper == 2)
        }
        Cmd::Scenario42 { out } => {
            let (exp, report) = script_run()?;
            if let Some(dir) = out {
                write_outputs(&exp, &dir).with_context(|| format!("writing {}", dir.display()))?;
            }
            let servers = exp.sim.servers().len();
            snapshot::write_state_csv(exp.sim.servers(), std::io::stdout())?;
            println!("servers={servers} expected={SCRIPT_SERVERS}");
            if servers != SCRIPT_SERVERS {
                println!("deviation: script ended with {servers} servers instead of {SCRIPT_SERVERS}");
            }
            print!("{report}");
            println!("verification={}", if report.is_ok() { "pass" } else { "fail" });
            Ok(report.is_ok() && servers == SCRIPT_SERVERS)
        }
        Cmd::Dump { dir } => {
            let snap = load_snapshot(&dir)?;
            snapshot::write_state_csv(&snap.servers, std::io::stdout())?;
            for s in &snap.servers {
                let keys: Vec<String> = s.bucket.keys().iter().map(ToString::to_string).collect();
                println!("server {} {}: {}", s.id, s.interval, keys.join(" "));
            }
            Ok(true)
        }
        Cmd::Verify { dir, seed } => {
            let snap = load_snapshot(&dir)?;
            let seed = seed.unwrap_or(snap.config.seed);
            let sim = Simulation::from_servers(snap.config.sim_config(), snap.servers);
            let report = verify_against_oracle(&sim, &snap.oracle, seed);
            print!("{report}");
            Ok(report.is_ok())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
