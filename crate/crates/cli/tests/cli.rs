use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use crowdlabel::config::dataset_to_jsonl;
use crowdlabel::export::parse_export;
use crowdlabel::persist::SnapshotStore;
use crowdlabel::scenario::Scenario;
use crowdlabel::Money;

fn crowdlabel(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdlabel"))
        .arg("--data-dir")
        .arg(data)
        .args(args)
        .env_remove("CROWDLABEL_DATA_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, annotator: &str) -> std::path::PathBuf {
    let sc = Scenario { samples: 80, ..Scenario::default() };
    fs::write(dir.join("data.jsonl"), dataset_to_jsonl(&sc.dataset().unwrap()).unwrap()).unwrap();
    let path = dir.join("task.toml");
    let config = format!(
        r#"task_id = "cli"
class_names = ["class_0", "class_1", "class_2"]
budget = "20.00"
dataset = "data.jsonl"

{annotator}
"#
    );
    fs::write(&path, config).unwrap();
    path
}

const SIMULATED: &str = r#"[[annotators]]
id = "sim-a"
kind = "simulated"
accuracy = 0.85
seed = 1
pricing = { kind = "per_sample", rate = "0.0005" }

[[annotators]]
id = "sim-b"
kind = "simulated"
accuracy = 0.95
seed = 2
pricing = { kind = "per_sample", rate = "0.001" }
"#;

#[test]
fn simulate_prints_monotone_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = crowdlabel(dir.path(), &["simulate", "default"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    for col in ["Round", "Annotator", "Acc. %", "#Unc.", "Cost $"] {
        assert!(header.contains(col), "{header}");
    }
    let unconverged: Vec<usize> = text
        .lines()
        .skip(1)
        .take_while(|l| !l.starts_with("total"))
        .map(|l| l.split_whitespace().nth(3).unwrap().parse().unwrap())
        .collect();
    assert!(unconverged.len() >= 2);
    assert!(unconverged.windows(2).all(|w| w[1] <= w[0]), "{unconverged:?}");
    assert!(text.contains("terminated after round"));
    let again = crowdlabel(dir.path(), &["simulate"]);
    assert_eq!(stdout(&again), text);
}

#[test]
fn missing_config_fails_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = crowdlabel(dir.path(), &["run", "--config", missing.to_str().unwrap(), "--rounds", "1"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope.toml"), "{err}");
    assert!(err.contains("Usage"), "{err}");
    let out = crowdlabel(dir.path(), &["init", missing.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(!dir.path().join("crowdlabel-data").exists());
    let out = crowdlabel(dir.path(), &["run"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn init_run_status_export() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let config = write_config(dir.path(), SIMULATED);
    let out = crowdlabel(&data, &["init", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!crowdlabel(&data, &["init", config.to_str().unwrap()]).status.success());

    let out = crowdlabel(&data, &["run", "--rounds", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = crowdlabel(&data, &["status", "--json"]);
    assert!(out.status.success());
    let status: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let state = SnapshotStore::for_task(&data, "cli").unwrap().load_latest().unwrap();
    assert_eq!(status["round"], 3);
    assert_eq!(state.round, 3);
    let remaining: Money = status["remaining"].as_str().unwrap().parse().unwrap();
    let spent: Money = state.ledger.entries.iter().map(|e| e.amount).sum();
    assert_eq!(remaining, Money::from_cents(2_000) - spent);

    let text = stdout(&crowdlabel(&data, &["status"]));
    assert!(text.contains("round: 3 of 20"), "{text}");
    assert!(text.contains(&format!("remaining: {remaining}")), "{text}");

    let export = dir.path().join("out.jsonl");
    assert!(crowdlabel(&data, &["export", "-o", export.to_str().unwrap()]).status.success());
    let records = parse_export(&fs::read_to_string(&export).unwrap()).unwrap();
    assert_eq!(records.len(), 80);
    let again = stdout(&crowdlabel(&data, &["export"]));
    assert_eq!(again, fs::read_to_string(&export).unwrap());

    let out = crowdlabel(&data, &["run", "--to-termination"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("terminated after round"));
    let out = crowdlabel(&data, &["human", "verify", "--count", "4", "-o", dir.path().join("v.csv").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let flagged = parse_export(&stdout(&crowdlabel(&data, &["export"]))).unwrap().iter().filter(|r| r.human_verification_flag).count();
    assert_eq!(flagged, 4);
}

#[test]
fn human_batch_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let human = r#"[[annotators]]
id = "crowd"
kind = "human"
dispatch = { mode = "offline" }
pricing = { kind = "per_sample", rate = "0.015" }
"#;
    let config = write_config(dir.path(), human);
    assert!(crowdlabel(&data, &["init", config.to_str().unwrap()]).status.success());
    let out = crowdlabel(&data, &["run", "--rounds", "1"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("waiting on human batch"), "{}", stdout(&out));

    let file = dir.path().join("batch.csv");
    assert!(crowdlabel(&data, &["human", "export-batch", "-o", file.to_str().unwrap()]).status.success());
    let state = SnapshotStore::for_task(&data, "cli").unwrap().load_latest().unwrap();
    let content = fs::read_to_string(&file).unwrap();
    let filled: String = content
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i < 2 {
                format!("{l}\n")
            } else {
                let id = l.split(',').next().unwrap();
                let truth = state.samples.iter().find(|s| s.id.as_str() == id).unwrap().truth.unwrap();
                format!("{l}class_{truth}\n")
            }
        })
        .collect();
    fs::write(&file, filled).unwrap();
    let out = crowdlabel(&data, &["human", "import-batch", file.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let status: serde_json::Value = serde_json::from_slice(&crowdlabel(&data, &["status", "--json"]).stdout).unwrap();
    assert_eq!(status["round"], 1);
    assert_eq!(status["pending_batch"], serde_json::Value::Null);
    assert_eq!(status["spent"], "0.06");
    assert!(!crowdlabel(&data, &["human", "import-batch", file.to_str().unwrap()]).status.success());
}
