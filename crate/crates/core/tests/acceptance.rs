//! One test per acceptance criterion. Each prints a single
//! `criterion N: PASS|FAIL ...` line with the measured values and the
//! pinned tolerance, then asserts.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use thstar::client::ClientOp;
use thstar::harness::experiment::{run_experiment, write_outputs, Experiment};
use thstar::harness::oracle::verify_against_oracle;
use thstar::harness::scenario::{overflow_split, script_run, SCRIPT_SERVERS};
use thstar::harness::thwn::ThwnFile;
use thstar::harness::ExperimentConfig;
use thstar::key_space::{Key, KeySpace};
use thstar::server::ReplyStatus;
use thstar::sim::{Interleaving, SimConfig, Simulation};
use thstar::{ClientId, ServerId};

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn experiment(b: usize, n: usize, seed: u64) -> Experiment {
    let cfg = ExperimentConfig { bucket_capacity: b, n_keys: n, seed, ..ExperimentConfig::default() };
    run_experiment(&cfg).expect("experiment runs")
}

#[test]
fn criterion_1_overflow_split() {
    let start = Instant::now();
    let o = overflow_split().unwrap();
    let elapsed = start.elapsed();
    let pass = o.split.to_string() == "acn" && (o.lower, o.upper) == (3, 2) && elapsed < Duration::from_secs(1);
    report(
        1,
        pass,
        format!("split={} sizes={}/{} (want acn 3/2) time={elapsed:?} (limit 1s)", o.split, o.lower, o.upper),
    );
    assert!(pass);
}

#[test]
fn criterion_2_script() {
    let start = Instant::now();
    let (exp, rep) = script_run().unwrap();
    let elapsed = start.elapsed();
    let servers = exp.sim.servers().len();
    let pass = servers == SCRIPT_SERVERS && rep.is_ok() && elapsed < Duration::from_secs(1);
    report(
        2,
        pass,
        format!(
            "servers={servers} (want {SCRIPT_SERVERS}) verification={} time={elapsed:?} (limit 1s)",
            if rep.is_ok() { "ok" } else { "failed" }
        ),
    );
    assert!(pass, "{rep}");
}

#[test]
fn criterion_3_load_factor() {
    const LOW: f64 = 0.60;
    const HIGH: f64 = 0.95;
    const MEAN_SPREAD: f64 = 0.10;
    let start = Instant::now();
    let mut means = Vec::new();
    let mut window_ok = true;
    let mut parts = Vec::new();
    for b in [50, 100, 500, 1000] {
        let exp = experiment(b, 200_000, 1);
        let w = exp.summary.post_warmup.clone().expect("samples after warmup");
        window_ok &= w.min >= LOW && w.max <= HIGH;
        means.push(w.mean);
        parts.push(format!("b={b}:min={:.3},mean={:.3},max={:.3}", w.min, w.mean, w.max));
    }
    let elapsed = start.elapsed();
    let spread = means.iter().copied().fold(f64::MIN, f64::max) - means.iter().copied().fold(f64::MAX, f64::min);
    let pass = window_ok && spread < MEAN_SPREAD && elapsed < Duration::from_secs(120);
    report(
        3,
        pass,
        format!(
            "{} window[{LOW},{HIGH}]={} mean_spread={spread:.3} (limit {MEAN_SPREAD}) time={elapsed:?} (limit 120s)",
            parts.join(" "),
            if window_ok { "ok" } else { "violated" }
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_linear_splits() {
    const N: usize = 50_000;
    let start = Instant::now();
    let half = experiment(50, N, 1).summary.splits;
    let full = experiment(50, 2 * N, 1).summary.splits;
    let elapsed = start.elapsed();
    let ratio = full as f64 / half as f64;
    let pass = (ratio - 2.0).abs() <= 0.2 && elapsed < Duration::from_secs(60);
    report(
        4,
        pass,
        format!("splits({N})={half} splits({})={full} ratio={ratio:.3} (want 2.0+-0.2) time={elapsed:?} (limit 60s)", 2 * N),
    );
    assert!(pass);
}

#[test]
fn criterion_5_flat_cost() {
    let start = Instant::now();
    let s = experiment(100, 200_000, 1).summary;
    let elapsed = start.elapsed();
    let limit = 1.10 * s.msgs_per_op_second_decile;
    let pass = s.msgs_per_op_last_decile <= limit && elapsed < Duration::from_secs(120);
    report(
        5,
        pass,
        format!(
            "msgs/op second_decile={:.4} last_decile={:.4} (limit {limit:.4}) time={elapsed:?} (limit 120s)",
            s.msgs_per_op_second_decile, s.msgs_per_op_last_decile
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_protocol_properties() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut runs = 0;
    for (seed, b, wire) in [(1, 4, true), (2, 4, false), (3, 10, true), (4, 10, false), (5, 50, false), (6, 2, true)] {
        let cfg = ExperimentConfig {
            bucket_capacity: b,
            n_keys: 5_000,
            seed,
            check_invariants: true,
            wire_roundtrip: wire,
            ..ExperimentConfig::default()
        };
        // Any invariant breach during the run surfaces as an error here.
        let mut exp = match run_experiment(&cfg) {
            Ok(e) => e,
            Err(e) => {
                failures.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        runs += 1;
        let rep = verify_against_oracle(&exp.sim, &exp.oracle, seed);
        if !rep.is_ok() {
            failures.push(format!("seed {seed}:\n{rep}"));
        }
        let keys: Vec<Key> = exp.oracle.keys().iter().step_by(50).cloned().collect();
        let splits = exp.sim.stats().splits;
        for (i, k) in keys.iter().enumerate() {
            let c = ClientId((i % cfg.clients) as u32);
            exp.sim.execute(c, ClientOp::Search(k.clone())).unwrap();
            let again = exp.sim.execute(c, ClientOp::Search(k.clone())).unwrap();
            if again.hops != 0 || again.iam_received || again.status != ReplyStatus::Ok {
                failures.push(format!("seed {seed}: repeated search of {k} took {} hops", again.hops));
            }
        }
        assert_eq!(exp.sim.stats().splits, splits);
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(120);
    report(6, pass, format!("runs={runs} violations={} time={elapsed:?} (limit 120s)", failures.len()));
    assert!(pass, "{}", failures.join("\n"));
}

#[test]
fn criterion_7_determinism() {
    let start = Instant::now();
    let cfg = ExperimentConfig { n_keys: 30_000, seed: 77, ..ExperimentConfig::default() };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        write_outputs(&run_experiment(&cfg).unwrap(), d.path()).unwrap();
    }
    let files = ["stats.csv", "ops.csv", "state.csv", "buckets.txt", "oracle.txt", "summary.txt"];
    let differing: Vec<&str> = files
        .into_iter()
        .filter(|f| {
            let a = std::fs::read(dirs[0].path().join(f)).unwrap();
            let b = std::fs::read(dirs[1].path().join(f)).unwrap();
            a != b
        })
        .collect();
    let elapsed = start.elapsed();
    let pass = differing.is_empty() && elapsed < Duration::from_secs(60);
    report(7, pass, format!("files_compared={} differing={differing:?} time={elapsed:?} (limit 60s)", files.len()));
    assert!(pass);
}

/// Follows local tries from `from` until a server owning `k` is reached.
fn route_through_servers(sim: &Simulation, from: ServerId, k: &Key) -> Option<ServerId> {
    let servers = sim.servers();
    let mut at = from;
    for _ in 0..=servers.len() {
        let s = &servers[at.0 as usize];
        if s.interval.contains(k) {
            return Some(at);
        }
        at = s.trie.search(k).ok()?.target;
    }
    None
}

#[test]
fn criterion_8_small_space_routing() {
    const SEQUENCES: usize = 1000;
    let start = Instant::now();
    let space = KeySpace::new(b'a', b'e', 3);
    let all = space.enumerate();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures: Vec<String> = Vec::new();
    let mut checked_states = 0u64;
    for n in 0..SEQUENCES {
        let b = 1 + n % 3;
        let len = rng.gen_range(1..=8);
        let seq: Vec<Key> = (0..len).map(|_| all.choose(&mut rng).unwrap().clone()).collect();
        let mut cfg = SimConfig::new(b, 2, n as u64);
        cfg.interleaving = Interleaving::Sequential;
        cfg.check_invariants = true;
        cfg.max_key_len = 3;
        let mut sim = Simulation::new(cfg);
        let mut thwn = ThwnFile::new(b);
        let mut fail = |why: String| failures.push(format!("sequence {n} (b={b}, {seq:?}): {why}"));
        for (i, k) in seq.iter().enumerate() {
            let r = sim.execute(ClientId((i % 2) as u32), ClientOp::Insert(k.clone())).unwrap();
            let fresh = thwn.insert(k.clone()).unwrap();
            if (r.status == ReplyStatus::Ok) != fresh {
                fail(format!("insert {k}: {} vs single-node {fresh}", r.status));
            }
            checked_states += 1;
            let servers = sim.servers();
            if servers.len() != thwn.buckets().len() {
                fail(format!("{} servers vs {} buckets", servers.len(), thwn.buckets().len()));
                break;
            }
            for (s, bucket) in servers.iter().zip(thwn.buckets()) {
                if s.bucket.keys() != bucket {
                    fail(format!("server {} contents differ", s.id));
                }
            }
            for k in &all {
                let owners: Vec<ServerId> = servers.iter().filter(|s| s.interval.contains(k)).map(|s| s.id).collect();
                let [owner] = owners[..] else {
                    fail(format!("{k} owned by {owners:?}"));
                    continue;
                };
                let single = thwn.bucket_of(k).unwrap();
                if single != owner {
                    fail(format!("{k}: interval owner {owner}, single-node bucket {single}"));
                }
                for s in servers {
                    if route_through_servers(&sim, s.id, k) != Some(owner) {
                        fail(format!("{k}: routing from server {} misses {owner}", s.id));
                    }
                }
                for c in sim.clients() {
                    let t = c.image().search(k).unwrap().target;
                    if route_through_servers(&sim, t, k) != Some(owner) {
                        fail(format!("{k}: client {} image misroutes", c.id));
                    }
                }
            }
        }
        let probe = sim.add_client();
        for k in &all {
            let r = sim.execute(probe, ClientOp::Search(k.clone())).unwrap();
            let want = if thwn.contains(k).unwrap() { ReplyStatus::Ok } else { ReplyStatus::NotFound };
            if r.status != want {
                failures.push(format!("sequence {n}: search {k} gave {} want {want}", r.status));
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(120);
    report(
        8,
        pass,
        format!(
            "sequences={SEQUENCES} states={checked_states} mismatches={} time={elapsed:?} (limit 120s)",
            failures.len()
        ),
    );
    assert!(pass, "{}", failures.iter().take(10).cloned().collect::<Vec<_>>().join("\n"));
}
