use std::path::Path;
use std::process::{Command, Output};

fn sustain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sustain")).args(args).output().expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    let config = serde_json::json!({
        "split": 600,
        "models": {
            "linear_ar": { "model_tag": "linear_ar", "lag_window": 6 },
            "lstm": { "model_tag": "lstm", "lag_window": 6, "hidden_size": 3, "epochs": 5, "learning_rate": 0.2 }
        },
        "retrain_period": 300
    });
    std::fs::write(&path, config.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_stream_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let out = sustain(&["gen-stream", "--seed", "7", "--len", "1500", "--drift", "1000:40:1", "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("timestamp,pm25,pm10,temperature,humidity"));
    assert_eq!(text.lines().count(), 1501);

    let run_dir = dir.path().join("run");
    let config = small_config(dir.path());
    let out = sustain(&[
        "run", "--config", &config, "--approach", "A4", "--data", csv.to_str().unwrap(), "--seed", "3", "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("A4"));
    for f in ["report.json", "comparison.csv", "events.log", "metrics.log"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    assert!(run_dir.join("models").is_dir());
}

#[test]
fn run_all_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out_dir = dir.path().join("all");
    let out = sustain(&["run", "--config", &config, "--approach", "all", "--seed", "5", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 7);

    let reports: Vec<String> =
        ["A1", "A6"].iter().map(|a| out_dir.join(a).join("report.json").to_str().unwrap().to_string()).collect();
    let cmp_dir = dir.path().join("cmp");
    let out = sustain(&["compare", "--out", cmp_dir.to_str().unwrap(), &reports[0], &reports[1]]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(cmp_dir.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("approach,r2,log10_avg_energy_10s,total_energy_uj,switches,retrains"));

    // A report over another stream is refused.
    let other = dir.path().join("other");
    let out = sustain(&["run", "--config", &config, "--approach", "A1", "--seed", "6", "--out", other.to_str().unwrap()]);
    assert!(out.status.success());
    let out = sustain(&[
        "compare", "--out", cmp_dir.to_str().unwrap(), &reports[0], other.join("report.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("x");
    let x = out_dir.to_str().unwrap();

    assert_eq!(sustain(&["run", "--approach", "A9", "--out", x]).status.code(), Some(1));
    assert_eq!(sustain(&["run", "--out", x]).status.code(), Some(1));
    assert_eq!(sustain(&["frobnicate"]).status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"split": 10}"#).unwrap();
    assert_eq!(sustain(&["run", "--config", bad.to_str().unwrap(), "--approach", "A1", "--out", x]).status.code(), Some(1));
    std::fs::write(&bad, "{ not json").unwrap();
    let out = sustain(&["run", "--config", bad.to_str().unwrap(), "--approach", "A1", "--out", x]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));

    let missing = dir.path().join("missing.csv");
    let out = sustain(&["run", "--approach", "A1", "--data", missing.to_str().unwrap(), "--out", x]);
    assert_eq!(out.status.code(), Some(2));

    let sock = dir.path().join("none.sock");
    assert_eq!(sustain(&["control", "--socket", sock.to_str().unwrap(), "get-status"]).status.code(), Some(2));
    assert_eq!(sustain(&["control", "--socket", sock.to_str().unwrap(), "explode"]).status.code(), Some(1));
    assert_eq!(sustain(&["gen-stream", "--seed", "1", "--len", "5", "--drift", "oops", "--out", x]).status.code(), Some(1));
    assert_eq!(sustain(&["--help"]).status.code(), Some(0));
}
