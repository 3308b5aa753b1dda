use std::path::Path;
use std::process::{Command, Output};

use leo_consensus_cli::config::ScenarioConfig;
use leo_consensus_cli::{default_consensus_config, run_scenario, ScenarioKind};

const BIN: &str = env!("CARGO_BIN_EXE_leo-consensus");

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
        .display()
        .to_string()
}

fn cli(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

#[test]
fn happy_path_commits_one_block_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&[
        "consensus",
        "--config",
        &scenario("binary_happy.toml"),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for file in [
        "summary.json",
        "ledger.txt",
        "bytes.csv",
        "periods.csv",
        "instances.csv",
    ] {
        assert!(dir.path().join(file).exists(), "{file} missing");
    }
    let ledger = std::fs::read_to_string(dir.path().join("ledger.txt")).unwrap();
    assert!(ledger.starts_with("ledger,v1,"));
    assert_eq!(
        ledger.lines().filter(|l| l.starts_with("block,")).count(),
        1
    );
}

#[test]
fn bad_proposer_is_convicted_and_the_period_still_commits() {
    let cfg = ScenarioConfig::load(Path::new(&scenario("approx_bad_proposer.toml"))).unwrap();
    let res = run_scenario(&cfg, ScenarioKind::Consensus).unwrap();
    assert!(res.error.is_none(), "{:?}", res.error);
    let verdicts = res.artifacts.get("verdicts.csv").unwrap();
    assert_eq!(verdicts.lines().next(), Some("period,proposer,kind"));
    assert!(
        verdicts.lines().any(|l| l == "3,4,rejected-proposal"),
        "{verdicts}"
    );
    let ledger = res.artifacts.get("ledger.txt").unwrap();
    assert_eq!(
        ledger.lines().filter(|l| l.starts_with("block,")).count(),
        4
    );
    assert!(
        ledger.lines().any(|l| l.starts_with("block,3,1,")),
        "{ledger}"
    );
}

#[test]
fn audit_accepts_clean_export_and_rejects_tampered_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let run = cli(&[
        "consensus",
        "--config",
        &scenario("approx_bad_proposer.toml"),
        "--out-dir",
        d,
    ]);
    assert_eq!(run.status.code(), Some(0));
    let path = dir.path().join("ledger.txt");
    let clean = cli(&[
        "ledger-audit",
        "--ledger",
        path.to_str().unwrap(),
        "--query",
        "2:1:1:1",
    ]);
    assert_eq!(
        clean.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&clean.stderr)
    );

    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let last = lines[3].pop().unwrap();
    lines[3].push(if last == '0' { '1' } else { '0' });
    let tampered = dir.path().join("tampered.txt");
    std::fs::write(&tampered, lines.join("\n") + "\n").unwrap();
    let bad = cli(&["ledger-audit", "--ledger", tampered.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("block 3"));
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "seed = 1\n[network]\nn = 4\nquorum = 3\n").unwrap();
    let out = cli(&["consensus", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("quorum"));

    let missing = cli(&[
        "consensus",
        "--config",
        dir.path().join("absent.toml").to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn runs_are_reproducible_and_seed_sensitive() {
    let mut cfg = default_consensus_config();
    let a = run_scenario(&cfg, ScenarioKind::Consensus)
        .unwrap()
        .artifacts;
    let b = run_scenario(&cfg, ScenarioKind::Consensus)
        .unwrap()
        .artifacts;
    assert_eq!(a, b);
    cfg.seed += 1;
    let c = run_scenario(&cfg, ScenarioKind::Consensus)
        .unwrap()
        .artifacts;
    assert_ne!(a.get("ledger.txt"), c.get("ledger.txt"));
}

#[test]
fn geometry_subcommands_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = cli(&[
        "detection",
        "--density",
        "30",
        "--density",
        "90",
        "--trials",
        "500",
        "--out-dir",
        d,
    ]);
    assert_eq!(out.status.code(), Some(0));
    let table = std::fs::read_to_string(dir.path().join("detection.csv")).unwrap();
    assert_eq!(
        table.lines().next(),
        Some("sensor_density,empirical_rate,theory_rate")
    );
    assert_eq!(table.lines().count(), 3);

    let out = cli(&[
        "constellation",
        "--density",
        "5",
        "--density",
        "10",
        "--out-dir",
        d,
    ]);
    assert_eq!(out.status.code(), Some(0));
    let table = std::fs::read_to_string(dir.path().join("constellation.csv")).unwrap();
    assert_eq!(
        table.lines().next(),
        Some("density_per_million_km2,incident_count,incident_count_split")
    );
    assert_eq!(table.lines().count(), 3);
}
