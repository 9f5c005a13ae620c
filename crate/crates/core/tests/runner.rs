use std::fs;
use std::path::Path;
use std::process::Command;

use promptsel::runner::{run_experiment, ExperimentConfig};
use promptsel::Error;

fn config(out: &Path, horizon: usize, trials: usize, policies: &str) -> ExperimentConfig {
    let text = format!(
        r#"
horizon = {horizon}
trials = {trials}
base_seed = 3
output_dir = "{}"

[environment]
type = "synthetic"
mode = "category_expert"
dim = 5
arms = ["a", "b", "c"]
seed = 2

[[environment.categories]]
name = "x"
means = [0.8, 0.4, 0.1]

[[environment.categories]]
name = "y"
means = [0.3, 0.7, 0.2]

{policies}
"#,
        out.display()
    );
    ExperimentConfig::from_toml_str(&text).unwrap()
}

const MIXED: &str = r#"
[[policies]]
label = "pak"
kind = "pak_ucb"
kernel = { kind = "poly3", gamma = 5.0 }

[[policies]]
label = "rff"
kind = "rff_ucb"
kernel = { kind = "rbf", sigma = 5.0 }
rff_features = 64

[[policies]]
label = "rand"
kind = "random"
"#;

fn arms_by_policy(csv: &str) -> Vec<(String, usize, usize, usize)> {
    csv.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[0].to_string(),
                f[1].parse().unwrap(),
                f[2].parse().unwrap(),
                f[4].parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn cold_start_plays_every_arm_once_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 3, 1, MIXED);
    run_experiment(&cfg).unwrap();
    let csv = fs::read_to_string(dir.path().join("records.csv")).unwrap();
    for label in ["pak", "rff"] {
        let arms: Vec<usize> = arms_by_policy(&csv)
            .into_iter()
            .filter(|r| r.0 == label)
            .map(|r| r.3)
            .collect();
        assert_eq!(arms, [0, 1, 2], "{label}");
    }
}

#[test]
fn identical_configs_write_identical_records() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&config(a.path(), 40, 2, MIXED)).unwrap();
    run_experiment(&config(b.path(), 40, 2, MIXED)).unwrap();
    let ra = fs::read(a.path().join("records.csv")).unwrap();
    let rb = fs::read(b.path().join("records.csv")).unwrap();
    assert_eq!(ra, rb);
    let header = String::from_utf8(ra).unwrap();
    assert!(header.starts_with(
        "policy,trial,t,prompt_id,arm,score,oracle_best_mean,chosen_mean,best_arm,category\n"
    ));
    for name in ["aggregates.json", "manifest.json"] {
        let text = fs::read_to_string(a.path().join(name)).unwrap();
        serde_json::from_str::<serde_json::Value>(&text).unwrap();
    }
}

#[test]
fn policy_results_do_not_depend_on_list_order() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let entries: Vec<&str> = MIXED.split("\n\n").map(str::trim).collect();
    let reversed: String = entries.iter().rev().map(|e| format!("{e}\n\n")).collect();
    run_experiment(&config(a.path(), 30, 2, MIXED)).unwrap();
    run_experiment(&config(b.path(), 30, 2, &reversed)).unwrap();
    let mut ra = arms_by_policy(&fs::read_to_string(a.path().join("records.csv")).unwrap());
    let mut rb = arms_by_policy(&fs::read_to_string(b.path().join("records.csv")).unwrap());
    ra.sort();
    rb.sort();
    assert_eq!(ra, rb);
}

#[test]
fn prompt_streams_are_shared_across_policies() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&config(dir.path(), 25, 2, MIXED)).unwrap();
    let csv = fs::read_to_string(dir.path().join("records.csv")).unwrap();
    let prompts = |label: &str| -> Vec<String> {
        csv.lines()
            .skip(1)
            .filter(|l| l.starts_with(&format!("{label},")))
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                format!("{}:{}", f[1], f[8])
            })
            .collect()
    };
    assert_eq!(prompts("pak"), prompts("rand"));
}

#[test]
fn failing_policy_aborts_only_itself() {
    let dir = tempfile::tempdir().unwrap();
    let policies =
        format!("{MIXED}\n[[policies]]\nlabel = \"broken\"\nkind = \"pak_ucb\"\nalpha = -1.0\n");
    let report = run_experiment(&config(dir.path(), 10, 1, &policies)).unwrap();
    assert!(report.policy("broken").unwrap().result.is_err());
    for label in ["pak", "rff", "rand"] {
        assert!(report.policy(label).unwrap().result.is_ok());
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    let text = manifest.to_string();
    assert!(text.contains("broken") && text.contains("error"));
}

#[test]
fn regret_matches_records() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&config(dir.path(), 50, 3, MIXED)).unwrap();
    let run = report.policy("rand").unwrap().result.as_ref().unwrap();
    let mut total = 0.0;
    for r in &run.records {
        total += r.oracle_best_mean.unwrap() - r.chosen_mean.unwrap();
    }
    let per_trial = run.aggregate.regret.as_ref().unwrap().last_mean().unwrap();
    assert!((total / 3.0 - per_trial).abs() < 1e-9);
    assert_eq!(run.aggregate.horizon, 50);
    assert_eq!(report.reference_means.len(), 3);
}

#[test]
fn unknown_keys_and_duplicate_labels_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let typo = MIXED.replace("rff_features = 64", "rff_featurs = 64");
    let text = format!("horizon = 5\n[environment]\ntype = \"synthetic\"\nmode = \"category_expert\"\ndim = 2\narms = [\"a\"]\n[[environment.categories]]\nname = \"x\"\nmeans = [0.1]\n{typo}");
    assert!(ExperimentConfig::from_toml_str(&text).is_err());
    let dup = format!("{MIXED}\n[[policies]]\nlabel = \"pak\"\nkind = \"random\"\n");
    let cfg = config(dir.path(), 5, 1, &dup);
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
}

#[test]
fn parse_errors_report_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "horizon = 10\ntrials = 2\nbase_seed = \"seven\"\n").unwrap();
    match ExperimentConfig::load(&path) {
        Err(Error::Parse { path: p, line, .. }) => {
            assert_eq!(p, path);
            assert_eq!(line, 3);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn replay_paths_resolve_against_the_config_directory() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("log.jsonl"),
        concat!(
            r#"{"arm_names": ["a", "b"], "d": 2, "k": 1}"#,
            "\n",
            r#"{"prompt_id": "p1", "embedding": [1.0, 0.0], "scores": {"a": [0.2], "b": [0.6]}}"#,
            "\n",
            r#"{"prompt_id": "p2", "embedding": [0.0, 1.0], "scores": {"a": [0.7], "b": [0.1]}}"#,
            "\n"
        ),
    )
    .unwrap();
    let path = dir.path().join("exp.toml");
    fs::write(
        &path,
        "horizon = 20\ntrials = 2\noutput_dir = \"out\"\n[environment]\ntype = \"replay\"\npath = \"log.jsonl\"\n[[policies]]\nlabel = \"pak\"\nkind = \"pak_ucb\"\n",
    )
    .unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    let report = run_experiment(&cfg).unwrap();
    assert!(report.policy("pak").unwrap().result.is_ok());
    assert!(dir.path().join("out/records.csv").exists());
    assert!((report.reference_means[0] - 0.45).abs() < 1e-12);
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_promptsel"))
}

#[test]
fn cli_budget_prints_json() {
    let out = bin()
        .args([
            "budget",
            "--epsilon",
            "0.1",
            "--delta-rff",
            "0.5",
            "--n",
            "100",
            "--alpha",
            "1",
            "--delta",
            "0.05",
            "--dim",
            "4",
            "--sigma",
            "1",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.is_object());
}

#[test]
fn cli_validate_flags_bad_logs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    fs::write(
        &path,
        concat!(
            r#"{"arm_names": ["a", "b"], "d": 2, "k": 1}"#,
            "\n",
            r#"{"prompt_id": "p1", "embedding": [1.0, 0.0], "scores": {"a": [0.2]}}"#,
            "\n"
        ),
    )
    .unwrap();
    let out = bin()
        .args(["validate", "--replay"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"line\": 2"));
}

#[test]
fn cli_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/flipped.toml");
    let out = bin()
        .args(["run", "--config"])
        .arg(&root)
        .args(["--trials", "1", "--horizon", "20", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("manifest.json").exists());
}
