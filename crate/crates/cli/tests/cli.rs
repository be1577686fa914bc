use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fedomg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedomg"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn small_rect4(dir: &Path, extra_experiment: &str) -> PathBuf {
    let text = format!(
        r#"{{
  "dataset": {{"kind": "rect4", "points_per_domain": 60, "seed": 4, "held_out": 1}},
  "experiment": {{
    "rounds": 8, "local_lr": 0.05, "batch_size": 16, "seed": 2,
    "model": {{"kind": "linear_binary", "input_dim": 2, "num_classes": 2}}{extra_experiment}
  }},
  "output": {{"path": "runs/small.csv"}}
}}"#
    );
    let path = dir.join("small.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn run_writes_the_configured_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_rect4(dir.path(), "");
    let out = fedomg(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("runs/small.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("round,source_acc,target_acc,gen_gap"));
    assert_eq!(lines.count(), 8);
}

#[test]
fn shipped_rect4_config_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo_config("rect4_fedomg.json");
    let out = fedomg(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(dir.path().join("out/rect4_fedomg.csv").exists());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let tmp = tempfile::tempdir().unwrap();
        let out = fedomg(
            &["gen-data", "--config", path.to_str().unwrap(), "--out", "data.csv"],
            tmp.path(),
        );
        // idx configs point at files that are not shipped; anything but a
        // config error is acceptable
        assert_ne!(out.status.code(), Some(2), "{}: {}", path.display(), stderr(&out));
        seen += 1;
    }
    assert!(seen >= 3);
}

#[test]
fn negative_kappa_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_rect4(dir.path(), r#", "aggregation": {"kappa": -1}"#);
    let out = fedomg(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("kappa"), "{}", stderr(&out));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn unknown_keys_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_rect4(dir.path(), r#", "aggregation": {"kapa": 0.5}"#);
    let out = fedomg(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("kapa"), "{}", stderr(&out));
}

#[test]
fn missing_config_and_bad_arguments_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedomg(&["run", "--config", "nope.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = fedomg(&["run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = fedomg(&["sweep", "--config", "x.json", "--param", "radius", "--values", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_files_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo_config("mnist_fedomg.json");
    let out = fedomg(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn oracle_check_passes_on_the_default_suite() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedomg(&["oracle-check", "--instances", "200", "--seed", "7"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout);
    let gap: f64 = text
        .split_whitespace()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| panic!("no gap in {text:?}"));
    assert!(gap <= 1e-3);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_rect4(dir.path(), r#", "aggregation": {"kappa": 0.7}"#);
    let csv = dir.path().join("runs/small.csv");
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let out = fedomg(&["run", "--config", cfg.to_str().unwrap()], dir.path());
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        outputs.push(std::fs::read(&csv).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn sweep_writes_one_file_per_value_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_rect4(dir.path(), "");
    let out = fedomg(
        &["sweep", "--config", cfg.to_str().unwrap(), "--param", "kappa", "--values", "0,0.5,1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for v in ["0", "0.5", "1"] {
        assert!(dir.path().join(format!("runs/small_kappa_{v}.csv")).exists());
    }
    let summary = std::fs::read_to_string(dir.path().join("runs/small_kappa_summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("param,value,output,"));
    assert!(lines[2].starts_with("kappa,0.5,"));

    // sweep output for kappa = 0.5 matches a plain run at the default kappa
    let plain = fedomg(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(plain.status.code(), Some(0));
    assert_eq!(
        std::fs::read(dir.path().join("runs/small.csv")).unwrap(),
        std::fs::read(dir.path().join("runs/small_kappa_0.5.csv")).unwrap()
    );
}

#[test]
fn sweep_rejects_invalid_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_rect4(dir.path(), "");
    let out = fedomg(
        &["sweep", "--config", cfg.to_str().unwrap(), "--param", "kappa", "--values", "0.5,-2"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("kappa"));
    let out = fedomg(
        &["sweep", "--config", cfg.to_str().unwrap(), "--param", "epochs", "--values", "two"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_data_writes_labelled_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_rect4(dir.path(), "");
    let out = fedomg(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", "d.csv"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "group,split,x0,x1,label");
    assert_eq!(lines.len(), 1 + 4 * 60);
}
