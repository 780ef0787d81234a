use std::path::Path;
use std::process::{Command, Output};

fn ttpinn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttpinn")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = r#"{
    "name": "tiny",
    "model": {"kind": "tt", "width": 16, "hidden_layers": 2, "factors": [4, 4], "ranks": 2},
    "training": {"iterations": 6, "residual_points": 24},
    "evaluation": {"resolution": 9, "report_interval": 3, "log_wall_time": false}
}"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn train_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let out = dir.path().join("run");
    let o = ttpinn(&["train", "--config", &config, "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics.csv", "pred.csv", "truth.csv", "abserr.csv", "pred.pgm", "truth.pgm", "abserr.pgm", "normalization.txt", "model.ckpt"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "iteration,lr,loss_r,mse,rel_l2,seconds");
    let iterations: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(iterations, ["0", "3", "6"]);
    let truth = std::fs::read_to_string(out.join("truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 9);
    assert!(truth.lines().all(|l| l.split(',').count() == 9));
}

#[test]
fn same_seed_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let read = |name: &str| {
        let out = dir.path().join(name);
        let o = ttpinn(&["train", "--config", &config, "--seed", "5", "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        std::fs::read(out.join("metrics.csv")).unwrap()
    };
    assert_eq!(read("a"), read("b"));
}

#[test]
fn iterations_and_resolution_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let out = dir.path().join("run");
    let o = ttpinn(&["train", "--config", &config, "--iterations", "2", "--resolution", "5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().last().unwrap().split(',').next(), Some("2"));
    assert_eq!(std::fs::read_to_string(out.join("pred.csv")).unwrap().lines().count(), 5);
}

#[test]
fn export_fields_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let run = dir.path().join("run");
    assert!(ttpinn(&["train", "--config", &config, "--out", run.to_str().unwrap()]).status.success());
    let ckpt = run.join("model.ckpt");
    let out = dir.path().join("fields");
    let o = ttpinn(&["export-fields", "--checkpoint", ckpt.to_str().unwrap(), "--resolution", "7", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(out.join("abserr.csv")).unwrap().lines().count(), 7);
    let pgm = std::fs::read(out.join("pred.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n7 7\n255\n"));
}

#[test]
fn sweep_writes_table_in_config_order() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, kind: &str| {
        let model = if kind == "tt" {
            r#"{"kind": "tt", "width": 16, "hidden_layers": 1, "factors": [4, 4], "ranks": 2}"#
        } else {
            r#"{"width": 8, "hidden_layers": 1}"#
        };
        format!(
            r#"{{"name": "{name}", "model": {model}, "training": {{"iterations": 2, "residual_points": 16}}, "evaluation": {{"resolution": 5}}}}"#
        )
    };
    let sweep = format!(r#"{{"runs": [{}, {}]}}"#, run("z-tt", "tt"), run("a-dense", "dense"));
    let config = write_config(dir.path(), &sweep);
    let out = dir.path().join("sweep");
    let o = ttpinn(&["sweep", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("table.csv")).unwrap();
    let names: Vec<&str> = table.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["name", "z-tt", "a-dense"]);
    assert_eq!(stdout(&o), table);
}

#[test]
fn check_passes_and_fails_on_corrupted_core() {
    let dir = tempfile::tempdir().unwrap();
    let fast = r#"{"matvec_cases": 20, "residual_points": 200}"#;
    let o = ttpinn(&["check", "--config", &write_config(dir.path(), fast)]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("1600"));

    let broken = r#"{"matvec_cases": 20, "residual_points": 200, "corrupt_core": true}"#;
    let o = ttpinn(&["check", "--config", &write_config(dir.path(), broken)]);
    assert!(!o.status.success());
    let report = stdout(&o);
    assert!(report.lines().any(|l| l.starts_with("FAIL tt-matvec") && l.contains("core 1")), "{report}");
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert!(!ttpinn(&["train", "--config", missing.to_str().unwrap()]).status.success());
    let bad = write_config(dir.path(), r#"{"model": {"kind": "tt"}}"#);
    let o = ttpinn(&["train", "--config", &bad, "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    assert!(!ttpinn(&["export-fields", "--checkpoint", garbage.to_str().unwrap()]).status.success());
    assert!(!ttpinn(&["sweep"]).status.success());
}
