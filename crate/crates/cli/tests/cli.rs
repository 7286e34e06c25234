use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_ipsw-sim");

/// Small populations keep each run to a fraction of a second.
const SMALL: &str = r#"
replications = 3
master_seed = 77

[[population]]
name = "trial"
n_simulated = 400

[[population]]
name = "registry"
n_simulated = 1500

[[population]]
name = "pcornet_disease"
n_simulated = 1500

[[population]]
name = "pcornet_overall"
n_simulated = 1500

[[population]]
name = "us_census"
n_simulated = 1500
"#;

fn ipsw(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("IPSW_SIM_WORKERS")
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

fn digests(dir: &Path) -> Vec<(String, String)> {
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| {
            (
                f["name"].as_str().unwrap().to_string(),
                f["sha256"].as_str().unwrap().to_string(),
            )
        })
        .collect()
}

#[test]
fn run_writes_every_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("out");
    let o = ipsw(&["run", "-c", &cfg, "--out", out.to_str().unwrap(), "--diagnostics", "-q"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "summary_table.csv",
        "bias_draws.csv",
        "balance_table.csv",
        "love_plot_data.csv",
        "population_table.csv",
        "skip_log.csv",
        "diagnostics.csv",
        "summary_tables.txt",
        "resolved_config.toml",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let summary = fs::read_to_string(out.join("summary_table.csv")).unwrap();
    assert!(summary.starts_with("scenario,"));
    // SATE plus seven pairings for each of four scenarios
    assert_eq!(summary.lines().count(), 1 + 4 * 8);
    let skips = fs::read_to_string(out.join("skip_log.csv")).unwrap();
    assert!(skips.contains("dem_clin,us_census"));
}

#[test]
fn digests_do_not_depend_on_workers_or_repetition() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let mut all = Vec::new();
    for (i, workers) in ["1", "1", "3"].iter().enumerate() {
        let out = tmp.path().join(format!("out{i}"));
        let o = ipsw(&[
            "run",
            "-c",
            &cfg,
            "-o",
            out.to_str().unwrap(),
            "--workers",
            workers,
            "-q",
            "--sweep",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        all.push(digests(&out));
    }
    assert_eq!(all[0], all[1]);
    assert_eq!(all[0], all[2]);
}

#[test]
fn seed_changes_the_draws() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(ipsw(&["run", "-c", &cfg, "-o", a.to_str().unwrap(), "-q"])
        .status
        .success());
    assert!(
        ipsw(&["run", "-c", &cfg, "-o", b.to_str().unwrap(), "-q", "--seed", "78"])
            .status
            .success()
    );
    assert_ne!(
        fs::read(a.join("bias_draws.csv")).unwrap(),
        fs::read(b.join("bias_draws.csv")).unwrap()
    );
    // balance tables come from parameters alone
    assert_eq!(
        fs::read(a.join("balance_table.csv")).unwrap(),
        fs::read(b.join("balance_table.csv")).unwrap()
    );
}

#[test]
fn scenario_filter_limits_the_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("out");
    let o = ipsw(&[
        "run",
        "-c",
        &cfg,
        "-o",
        out.to_str().unwrap(),
        "-q",
        "--scenario",
        "one_modifier",
    ]);
    assert!(o.status.success());
    let summary = fs::read_to_string(out.join("summary_table.csv")).unwrap();
    assert!(summary.lines().skip(1).all(|l| l.starts_with("one_modifier,")));
}

#[test]
fn invalid_input_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = ipsw(&["run", "--reps", "0", "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("replications"));
    assert!(!out.exists());

    let o = ipsw(&["run", "--scale", "-1", "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = ipsw(&["run", "--scenario", "nope", "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "replications = 2\nunknown_key = 1\n").unwrap();
    let o = ipsw(&["resolve-config", "-c", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_with_code_four() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let o = ipsw(&["balance", "-c", &cfg, "-o", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn resolved_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let first = ipsw(&["resolve-config", "-c", &cfg, "--scale", "1.5", "--scale", "3"]);
    assert!(first.status.success());
    let resolved = tmp.path().join("resolved.toml");
    fs::write(&resolved, &first.stdout).unwrap();
    let second = ipsw(&["resolve-config", "-c", resolved.to_str().unwrap()]);
    assert!(second.status.success());
    assert_eq!(first.stdout, second.stdout);
    let text = String::from_utf8(first.stdout).unwrap();
    assert!(text.contains("master_seed = 77"));
}

#[test]
fn balance_command_writes_only_balance_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = ipsw(&["balance", "-o", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(out.join("balance_table.csv").is_file());
    assert!(out.join("population_table.csv").is_file());
    assert!(!out.join("summary_table.csv").exists());
    let table = fs::read_to_string(out.join("balance_table.csv")).unwrap();
    assert!(table
        .lines()
        .any(|l| l.starts_with("aggregate,all_modifiers,dem_clin,")));
}
