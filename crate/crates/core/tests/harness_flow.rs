mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use afl_sim::agents::StrategyKind;
use afl_sim::harness::cli::{self, EXIT_CONFIG, EXIT_OK, EXIT_USAGE};
use afl_sim::harness::{compute_metrics, export, load, run_experiment, ExperimentConfig};
use afl_sim::harness::log::read_metrics;
use afl_sim::reputation::{update_reputation, ReputationRecord};
use afl_sim::Money;
use common::{small_market, ALL_KINDS};

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> std::path::PathBuf {
    let path = dir.join("market.conf");
    std::fs::write(&path, cfg.render()).unwrap();
    path
}

fn run_cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = cli::run(std::iter::once("afl-sim").chain(args.iter().copied()), &mut out);
    (code, String::from_utf8(out).unwrap())
}

#[test]
fn missing_config_exits_two_and_names_path() {
    let out = Command::new(env!("CARGO_BIN_EXE_afl-sim"))
        .args(["simulate", "--config", "/nonexistent/nowhere.conf"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/nowhere.conf"));
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    std::fs::write(&path, "market.sessions = many\n").unwrap();
    let (code, _) = run_cli(&["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
    std::fs::write(&path, "no.such.key = 1\n").unwrap();
    let (code, _) = run_cli(&["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(run_cli(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(run_cli(&["simulate"]).0, EXIT_USAGE);
    assert_eq!(run_cli(&["compare", "--config", "x.conf", "--seeds", "a,b"]).0, EXIT_USAGE);
    assert_eq!(run_cli(&["--help"]).0, EXIT_OK);
}

#[test]
fn compare_writes_one_row_per_seed_and_mu() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_market(&ALL_KINDS, 3);
    cfg.episodes = 1;
    let config = write_config(dir.path(), &cfg);
    let out = dir.path().join("cmp");
    let (code, table) = run_cli(&[
        "compare",
        "--config",
        config.to_str().unwrap(),
        "--seeds",
        "4,5,6",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let rows = read_metrics(&out.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 3 * cfg.mus.len());
    let seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    assert!(seeds.iter().take(cfg.mus.len()).all(|&s| s == 4));
    assert!(seeds.iter().skip(2 * cfg.mus.len()).all(|&s| s == 6));
    assert_eq!(table.lines().count(), 1 + rows.len());
}

#[test]
fn train_resumes_and_eval_reproduces_trained_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_market(&[StrategyKind::Const, StrategyKind::MultiBos, StrategyKind::FlatDqn], 8);
    let config = write_config(dir.path(), &cfg);
    let out = dir.path().join("train");
    let args = ["train", "--config", config.to_str().unwrap(), "--episodes", "2", "--out", out.to_str().unwrap()];
    assert_eq!(run_cli(&args).0, EXIT_OK);
    assert_eq!(std::fs::read_to_string(out.join("checkpoints/episodes.txt")).unwrap().trim(), "2");
    assert!(out.join("checkpoints/mu_1/inter.ckpt").exists());
    assert!(out.join("checkpoints/mu_1/intra.ckpt").exists());
    assert!(out.join("checkpoints/mu_2/intra.ckpt").exists());

    assert_eq!(run_cli(&args).0, EXIT_OK);
    assert_eq!(std::fs::read_to_string(out.join("checkpoints/episodes.txt")).unwrap().trim(), "4");
    let curve = std::fs::read_to_string(out.join("training.csv")).unwrap();
    let episodes: Vec<&str> = curve.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(curve.lines().filter(|l| l.starts_with("episode")).count(), 1);
    assert_eq!(episodes.len(), 4 * cfg.mus.len());
    assert_eq!(episodes.last(), Some(&"3"));

    // Eval from the saved checkpoints matches the eval written by train.
    let eval = dir.path().join("eval");
    let (code, _) = run_cli(&[
        "eval",
        "--config",
        config.to_str().unwrap(),
        "--checkpoint",
        out.to_str().unwrap(),
        "--out",
        eval.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    for file in ["auctions.csv", "metrics.csv"] {
        assert_eq!(
            std::fs::read(eval.join(file)).unwrap(),
            std::fs::read(out.join("eval").join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn logs_obey_budget_and_reputation_bookkeeping() {
    for seed in [11, 12] {
        let cfg = small_market(&ALL_KINDS, seed);
        let (log, metrics) = run_experiment(&cfg).unwrap();
        assert_eq!(log.auctions.len(), cfg.sessions * cfg.session_len);
        assert_eq!(log.sessions.len(), cfg.sessions * cfg.mus.len());

        // Spend never exceeds allocation, allocations never exceed what is left.
        let mut left: BTreeMap<usize, Money> = log.roster.iter().map(|r| (r.mu_id, r.budget)).collect();
        for s in &log.sessions {
            assert!(s.spend <= s.allocated_budget, "{s:?}");
            assert!(s.allocated_budget <= left[&s.mu_id], "{s:?}");
            let l = left.get_mut(&s.mu_id).unwrap();
            *l = l.saturating_sub(s.spend);
        }

        // Prices respect the reserve and never exceed the winning bid.
        for a in &log.auctions {
            if let (Some(w), Some(p)) = (a.winner, a.price) {
                let bid = a.bids.iter().find(|b| b.mu_id == w).unwrap().price;
                assert!(p >= a.reserve && p <= bid, "{a:?}");
            } else {
                assert!(a.failed);
            }
        }

        // Replaying contribution signs reproduces every reputation snapshot.
        let mut records = vec![ReputationRecord::default(); log.owners.len()];
        for (s, snapshot) in log.reputations.iter().enumerate() {
            for c in log.contributions.iter().filter(|c| c.session == s) {
                records[c.do_id] = update_reputation(records[c.do_id], c.phi);
            }
            assert_eq!(&records, snapshot, "session {s}");
        }

        // Utility is the sum of reputations at auction time over wins.
        for m in &metrics {
            let (utility, data) = log
                .auctions
                .iter()
                .filter(|a| a.winner == Some(m.mu_id))
                .fold((0.0, 0), |(u, d), a| {
                    (u + log.reputation_at_auction(a.session, a.do_id), d + log.owners[a.do_id].num_samples)
                });
            assert!((m.utility - utility).abs() < 1e-9);
            assert_eq!(m.num_data, data);
        }
    }
}

#[test]
fn export_round_trips_and_jsonl_counts_events() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_market(&ALL_KINDS, 21);
    let (log, metrics) = run_experiment(&cfg).unwrap();
    export(&log, &metrics, dir.path()).unwrap();

    let events = std::fs::read_to_string(dir.path().join("events.jsonl")).unwrap();
    assert_eq!(events.lines().count(), log.auctions.len() + log.sessions.len());
    let auctions = events.lines().filter(|l| l.contains("\"type\":\"auction\"")).count();
    assert_eq!(auctions, log.auctions.len());

    let back = load(dir.path()).unwrap();
    assert_eq!(back, log);
    assert_eq!(compute_metrics(&back), metrics);
    assert_eq!(read_metrics(&dir.path().join("metrics.csv")).unwrap(), metrics);

    let header = std::fs::read_to_string(dir.path().join("sessions.csv")).unwrap();
    assert!(header.starts_with("session,mu_id,allocated_budget,spend,wins,inter_reward,accuracy\n"));
}
