use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pom_core::crypto::{Digest, KeyPair};
use pom_core::ledger::{decode_chain, encode_chain};
use tempfile::TempDir;

fn pom(args: &[&str], paths: &[&Path]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pom"));
    cmd.args(args);
    cmd.args(paths);
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn key(&self, label: &str) -> PathBuf {
        let p = self.path(&format!("{label}.key"));
        assert_eq!(code(&pom(&["keygen", "--label", label, "--out"], &[&p])), 0);
        p
    }

    fn init(&self, flags: &[&str]) -> PathBuf {
        let p = self.path("chain.pom");
        let mut args = vec!["init"];
        args.extend_from_slice(flags);
        args.push("--out");
        assert_eq!(code(&pom(&args, &[&p])), 0);
        p
    }

    fn mine(&self, chain: &Path, key: &Path) -> Output {
        pom(&["mine"], &[chain, Path::new("--key"), key])
    }
}

#[test]
fn empty_chain_extends_quickly_at_d4() {
    let ws = Workspace::new();
    let chain = ws.init(&["--bits", "16", "--difficulty", "4"]);
    let out = ws.mine(&chain, &ws.key("alice"));
    assert_eq!(code(&out), 0);
    let attempts: u64 = stdout(&out).split_whitespace().last().unwrap().parse().unwrap();
    assert!(attempts < 100, "{attempts}");
    assert_eq!(code(&pom(&["validate"], &[&chain])), 0);
}

#[test]
fn broken_hash_link_names_index_and_rule() {
    let ws = Workspace::new();
    let chain = ws.init(&["--period", "2", "--difficulty", "2,2"]);
    let key = ws.key("alice");
    for _ in 0..3 {
        assert_eq!(code(&ws.mine(&chain, &key)), 0);
    }
    let mut c = decode_chain(&fs::read_to_string(&chain).unwrap()).unwrap();
    c.blocks[2].prev_hash = Digest::of(b"elsewhere");
    fs::write(&chain, encode_chain(&c)).unwrap();
    let out = pom(&["validate"], &[&chain]);
    assert_eq!(code(&out), 1);
    let report = stdout(&out);
    assert!(report.contains('2') && report.contains("hash-link"), "{report}");
}

#[test]
fn malformed_files_exit_with_two() {
    let ws = Workspace::new();
    let bad = ws.path("bad.pom");
    fs::write(&bad, "not a chain\n").unwrap();
    assert_eq!(code(&pom(&["validate"], &[&bad])), 2);
    assert_eq!(code(&pom(&["validate"], &[&ws.path("missing.pom")])), 2);
    assert_eq!(code(&pom(&["inspect"], &[&bad])), 2);
}

#[test]
fn zero_stake_miner_cannot_mine() {
    let ws = Workspace::new();
    let chain = ws.init(&["--period", "2", "--alpha", "1", "--difficulty", "2,2"]);
    let alice = ws.key("alice");
    for _ in 0..2 {
        assert_eq!(code(&ws.mine(&chain, &alice)), 0);
    }
    let out = ws.mine(&chain, &ws.key("bob"));
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("target is zero"));
}

#[test]
fn overdraft_transaction_is_refused() {
    let ws = Workspace::new();
    let chain = ws.init(&["--difficulty", "1"]);
    let alice = ws.key("alice");
    let bob = KeyPair::from_seed_label("bob").account().to_string();
    let me = KeyPair::from_seed_label("alice").account().to_string();
    assert_eq!(code(&ws.mine(&chain, &alice)), 0);
    let txs = ws.path("txs");
    let spend = |amount: i64, out: &Path| {
        pom(
            &[
                "sign-tx",
                "--entry",
                &format!("{me}=-{amount}"),
                "--entry",
                &format!("{bob}={amount}"),
                "--key",
            ],
            &[&alice, Path::new("--out"), out],
        )
    };
    assert_eq!(code(&spend(5, &txs)), 0);
    let out = pom(
        &["mine"],
        &[&chain, Path::new("--key"), &alice, Path::new("--txs"), &txs],
    );
    assert_eq!(code(&out), 1);

    assert_eq!(code(&spend(1, &txs)), 0);
    let out = pom(
        &["mine"],
        &[&chain, Path::new("--key"), &alice, Path::new("--txs"), &txs],
    );
    assert_eq!(code(&out), 0);
    assert_eq!(code(&pom(&["validate"], &[&chain])), 0);
    let shown = stdout(&pom(&["inspect"], &[&chain]));
    assert!(shown.contains(&format!("balance {bob} 1")), "{shown}");
    assert!(shown.contains(&format!("balance {me} 1")), "{shown}");
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&pom(&["experiment", "lemma9"], &[])), 2);
    assert_eq!(
        code(&pom(&["init", "--difficulty", "1", "--retarget-interval", "5"], &[])),
        2
    );
    assert_eq!(code(&pom(&["init", "--profile", "production", "--bits", "16"], &[])), 2);
    assert_eq!(code(&pom(&["init", "--alpha", "3/2"], &[])), 2);
    assert_eq!(code(&pom(&["frobnicate"], &[])), 2);
    assert_eq!(code(&pom(&["simulate"], &[])), 2);
}

#[test]
fn majority_grid_reports_no_violations() {
    let out = pom(&["experiment", "lemma3-grid"], &[]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("violations: 0"));
}

#[test]
fn simulate_writes_block_csv() {
    let ws = Workspace::new();
    let scenario = ws.path("s.toml");
    fs::write(
        &scenario,
        r#"seed = 42
mode = "pom"
period = 5
alpha = "1/2"
difficulty = ["10", "10", "10", "10"]

[horizon]
blocks = 15

[[miners]]
name = "alice"
power = 1.0

[[miners]]
name = "bob"
power = 2.0

[[history]]
alice = 2
carol = 3
"#,
    )
    .unwrap();
    let csv = ws.path("blocks.csv");
    let out = pom(&["simulate", "--scenario"], &[&scenario, Path::new("--out"), &csv]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("height,fork,time,miner,window,difficulty,stake\n"));
    assert_eq!(text.lines().count(), 16);
    let again = pom(&["simulate", "--scenario"], &[&scenario]);
    assert_eq!(stdout(&again), text);
    let reseeded = pom(&["simulate", "--seed", "1", "--scenario"], &[&scenario]);
    assert_ne!(stdout(&reseeded), text);
}
