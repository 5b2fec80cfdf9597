use std::path::Path;
use std::process::{Command, Output};

fn merr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_merr"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MERR_OUTPUT_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

const CLASSICAL: &str = r#"
output_dir = "run"
[data]
demo = "demo1"
n = 20
seed = 3
[model]
builtin = "demo1"
[embedding]
variant = "classical"
[likelihood]
kind = "classical"
sigma = 0.1
[mcmc]
steps = 2000
seed = 1
[predict]
grid = 11
"#;

#[test]
fn generate_writes_requested_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = merr(&["generate", "--demo", "demo3-cubic", "--n", "15", "--seed", "4", "-o", "d.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert_eq!(text.lines().count(), 16);
}

#[test]
fn calibrate_then_predict_from_chain() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), CLASSICAL).unwrap();
    let out = merr(&["calibrate", "run.toml"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    for f in ["data.csv", "chain.csv", "predictions.csv", "data_predictions.csv", "summary.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }

    let out = merr(&["predict", "run.toml", "--chain", "run/chain.csv", "-o", "again.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let a = std::fs::read_to_string(run.join("predictions.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("again.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn output_dir_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), CLASSICAL).unwrap();
    let out = merr(&["calibrate", "run.toml", "--output-dir", "elsewhere", "--steps", "500"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("elsewhere/summary.json").exists());
    assert!(!dir.path().join("run").exists());
}

#[test]
fn bad_config_fails_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let broken = CLASSICAL.replace("sigma = 0.1", "sigma = -1.0");
    std::fs::write(dir.path().join("run.toml"), broken).unwrap();
    let out = merr(&["calibrate", "run.toml"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sigma"), "{err}");
}

#[test]
fn surrogate_from_sampled_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = merr(
        &[
            "surrogate", "--sample-model", "demo3-quadratic", "--training", "t.csv", "--order", "2",
            "--range", "-2,2", "--range", "-2,2", "--range", "-2,2", "--runs", "40", "-o", "s.json",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("t.csv").exists());
    assert!(dir.path().join("s.json").exists());
}
