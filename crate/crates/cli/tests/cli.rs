use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn anonbench(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anonbench"))
        .args(args)
        .current_dir(cwd)
        .env_remove("ANONBENCH_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).to_string()
}

fn gait_dataset(dir: &Path) -> String {
    let o = anonbench(
        &["generate", "--modality", "gait", "--identities", "5", "--sequences", "4", "--seed", "42", "--out", "gait"],
        dir,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    "gait".into()
}

const H4: &str = r#"{
  "dataset": "gait",
  "seed": 7,
  "h4": {
    "anonymizers": [{"kind": "keep", "region": "legs"}, {"kind": "noise", "scale": 100}],
    "recognizers": [{"features": "flatten", "classifier": {"kind": "svm"}}],
    "protocols": [{"kind": "parrot"}],
    "selections": ["random"],
    "n_identities": [5, 3],
    "repeats": 3
  }
}"#;

#[test]
fn generate_writes_manifest_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    gait_dataset(dir.path());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("gait/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["modality"], "gait");
    assert_eq!(manifest["identities"].as_array().unwrap().len(), 5);
    assert!(dir.path().join("gait/id004/seq03.csv").is_file());
}

#[test]
fn default_output_root_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_anonbench"))
        .args(["generate", "--modality", "face", "--identities", "2", "--images", "8", "--seed", "1"])
        .current_dir(dir.path())
        .env("ANONBENCH_OUT", dir.path().join("root"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("root/datasets/face-2x8-seed1/manifest.json").is_file());
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = anonbench(&["evaluate", "--config", "missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.json"));
    assert!(stderr(&o).contains("\"grid\""), "schema help expected");
}

#[test]
fn bad_arguments_exit_one_and_help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(anonbench(&["generate", "--modality", "voice"], dir.path()).status.code(), Some(1));
    assert_eq!(anonbench(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(anonbench(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(
        anonbench(&["generate", "--modality", "gait", "--identities", "1", "--sequences", "4"], dir.path())
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn sweep_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    gait_dataset(dir.path());
    fs::write(dir.path().join("h4.json"), H4).unwrap();
    for out in ["a", "b"] {
        let o = anonbench(&["sweep", "--config", "h4.json", "--out", out], dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let a = fs::read(dir.path().join("a/h4/results.csv")).unwrap();
    let b = fs::read(dir.path().join("b/h4/results.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 3);
    assert!(text.lines().skip(1).all(|l| l.contains(",5,") || l.contains(",3,")));

    let snapshot: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/h4/config.resolved.json")).unwrap()).unwrap();
    assert_eq!(snapshot["seed"], 7);
    assert_eq!(snapshot["grid"]["train_fraction"], 0.75);
    assert_eq!(snapshot["grid"]["protocols"][0]["pretrain_on_anonymized"], true);
    assert!(dir.path().join("a/anon").is_dir());

    let o = anonbench(&["sweep", "--config", "h4.json", "--out", "c", "--seed", "8"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(
        fs::read(dir.path().join("c/h4/results.csv")).unwrap(),
        fs::read(dir.path().join("a/h4/results.csv")).unwrap()
    );
}

#[test]
fn report_writes_figure_tables() {
    let dir = tempfile::tempdir().unwrap();
    gait_dataset(dir.path());
    fs::write(dir.path().join("h4.json"), H4).unwrap();
    assert_eq!(anonbench(&["sweep", "--config", "h4.json", "--out", "run"], dir.path()).status.code(), Some(0));
    let o = anonbench(&["report", "--results", "run", "--out", "tables"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = fs::read_to_string(dir.path().join("tables/h4_accuracy_vs_n.csv")).unwrap();
    assert!(table.starts_with("experiment,anonymizer,recognizer"));
    assert_eq!(table.lines().count(), 1 + 4);
    assert_eq!(anonbench(&["report", "--results", "nowhere"], dir.path()).status.code(), Some(1));
}

#[test]
fn partial_grid_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = anonbench(
        &["generate", "--modality", "face", "--identities", "3", "--images", "8", "--seed", "2", "--out", "faces"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let cfg = r#"{
      "dataset": "faces",
      "grid": {
        "anonymizers": [{"kind": "eye_mask"}, {"kind": "k_same_pixel"}],
        "recognizers": [{"features": "pca", "classifier": {"kind": "knn"}}],
        "protocols": [{"kind": "parrot"}]
      }
    }"#;
    fs::write(dir.path().join("run.json"), cfg).unwrap();
    let o = anonbench(&["evaluate", "--config", "run.json", "--out", "res", "--jobs", "2"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let errors = fs::read_to_string(dir.path().join("res/errors.csv")).unwrap();
    assert_eq!(errors.lines().count(), 2);
    assert!(errors.contains("k_same_pixel"));
    let results = fs::read_to_string(dir.path().join("res/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 2);
}

#[test]
fn anonymize_and_select() {
    let dir = tempfile::tempdir().unwrap();
    gait_dataset(dir.path());
    let o = anonbench(
        &["anonymize", "--dataset", "gait", "--anonymizer", r#"{"kind":"keep","region":"head"}"#, "--out", "anon"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("anon/id000/seq00.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().split(',').skip(15).all(|v| v.parse::<f64>().unwrap() == 0.0));

    let o = anonbench(
        &["select", "--dataset", "gait", "--strategy", "random", "--n", "3", "--seed", "4", "--out", "sel.json"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ids: Vec<String> = serde_json::from_str(&fs::read_to_string(dir.path().join("sel.json")).unwrap()).unwrap();
    assert_eq!(ids.len(), 3);

    let o = anonbench(
        &[
            "select",
            "--dataset",
            "gait",
            "--strategy",
            "distinctive",
            "--n",
            "2",
            "--anonymizer",
            r#"{"kind":"motion_extraction"}"#,
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ids: Vec<String> = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(ids.len(), 2);

    let o = anonbench(&["select", "--dataset", "gait", "--strategy", "center", "--n", "9"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = anonbench(&["anonymize", "--dataset", "gait", "--anonymizer", r#"{"kind":"blur"}"#], dir.path());
    assert_eq!(o.status.code(), Some(1));
}
