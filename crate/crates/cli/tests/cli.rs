use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "scene": {"n_persons": 2, "n_frames": 20},
  "training": {"dataset": {"sequences": 4, "frames": 20}, "train": {"epochs": 1}, "holdout_sequences": 1},
  "bench": {"frames": 2, "persons": [1, 2]},
  "net": {"batches": [1]}
}"#;

fn mocap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mocap")).args(args).current_dir(dir).output().expect("binary runs")
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("config.json"), config).unwrap();
    dir
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = setup(r#"{"scene": {"n_persons": 2, "bogus": 1}}"#);
    let o = mocap(dir.path(), &["simulate", "--config", "config.json"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn invalid_config_value_exits_2() {
    let dir = setup(r#"{"scene": {"n_persons": 0}}"#);
    assert_eq!(code(&mocap(dir.path(), &["simulate", "--config", "config.json"])), 2);
    let dir = setup("{}");
    assert_eq!(code(&mocap(dir.path(), &["net-report", "--threads", "0"])), 2);
}

#[test]
fn missing_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mocap(dir.path(), &["simulate", "--config", "nope.json"])), 2);
}

#[test]
fn exploding_learning_rate_exits_3() {
    let dir = setup(r#"{"training": {"dataset": {"sequences": 4, "frames": 20}, "train": {"epochs": 3, "learning_rate": 1e30}, "holdout_sequences": 1}}"#);
    let o = mocap(dir.path(), &["train-decoder", "--config", "config.json", "--out", "out"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn prediction_for_unknown_subject_exits_4() {
    let dir = setup(SMALL);
    let args = ["--config", "config.json", "--out", "out", "--seed", "2"];
    for sub in ["train-decoder", "run"] {
        let o = mocap(dir.path(), &[&[sub][..], &args[..]].concat());
        assert!(o.status.success(), "{sub}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(code(&mocap(dir.path(), &[&["eval"][..], &args[..]].concat())), 0);

    // drop subject 1 from the ground truth
    let path = dir.path().join("out/ground_truth.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    v["truth"].as_array_mut().unwrap().retain(|t| t["person"] != 1);
    std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    let o = mocap(dir.path(), &[&["eval"][..], &args[..]].concat());
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn run_without_decoder_fails() {
    let dir = setup(SMALL);
    let o = mocap(dir.path(), &["run", "--config", "config.json", "--out", "out"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn outputs_carry_schema_versions() {
    let dir = setup(SMALL);
    let args = ["--config", "config.json", "--out", "out", "--deterministic"];
    for sub in ["train-decoder", "run", "eval", "bench", "net-report"] {
        let o = mocap(dir.path(), &[&[sub][..], &args[..]].concat());
        assert!(o.status.success(), "{sub}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let out = dir.path().join("out");
    for json in ["poses.json", "joint_angles.json", "metrics.json", "bench.json", "net_report.json", "training_summary.json"] {
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join(json)).unwrap()).unwrap();
        assert_eq!(v["schema_version"], 1, "{json}");
    }
    for csv in ["joint_angles.csv", "metrics.csv", "bench.csv", "loss_curve.csv"] {
        let text = std::fs::read_to_string(out.join(csv)).unwrap();
        assert!(text.starts_with("# schema_version=1\n"), "{csv}");
    }
    let events = std::fs::read_to_string(out.join("track_events.jsonl")).unwrap();
    assert!(events.lines().next().unwrap().contains("\"schema_version\":1"));
    assert!(!out.join("timings.csv").exists(), "timings are withheld under --deterministic");
    let bench: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("bench.json")).unwrap()).unwrap();
    assert!(bench["rows"][0]["ms_per_frame"].is_null());
}

#[test]
fn seed_flag_changes_the_scene() {
    let dir = setup(SMALL);
    let scene = |seed: &str| {
        let o = mocap(dir.path(), &["simulate", "--config", "config.json", "--out", seed, "--seed", seed]);
        assert!(o.status.success());
        std::fs::read(dir.path().join(seed).join("scene.jsonl")).unwrap()
    };
    assert_ne!(scene("1"), scene("2"));
}
