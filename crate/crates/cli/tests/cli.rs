use std::fs;
use std::path::Path;
use std::process::Command;

const TINY: &str = r#"
experiment = "pca"
estimator = ["power", "subs_med", "res_pow_meth"]
attack = ["ones", "orthogonal"]
name = "tiny"
n = 30
r = 3
q = 90
L = 3
L_byz = 1
T_pow = 8
runs = 4
seed = 11
"#;

fn byzfed(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_byzfed"))
        .args(args)
        .env("BYZFED_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn run_into(dir: &Path, config: &Path) -> Vec<u8> {
    let out = byzfed(&[
        "run",
        config.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    fs::read(dir.join("tiny.csv")).unwrap()
}

#[test]
fn run_is_byte_reproducible_and_report_matches() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let a = run_into(&tmp.path().join("a"), &config);
    let b = run_into(&tmp.path().join("b"), &config);
    assert_eq!(a, b);
    let text = String::from_utf8(a.clone()).unwrap();
    assert_eq!(text.lines().count(), 1 + 1 + 2 * 2);

    let json = tmp.path().join("a").join("tiny.json");
    let out = byzfed(&["report", json.to_str().unwrap(), "--format", "csv"]);
    assert!(out.status.success());
    assert_eq!(out.stdout, a);
}

#[test]
fn invalid_config_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.toml");
    fs::write(&config, TINY.replace("runs = 4", "runs = 0")).unwrap();
    let out = byzfed(&[
        "run",
        config.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("runs"));

    fs::write(&config, TINY.replace("L_byz = 1", "L_byz = 2")).unwrap();
    assert!(!byzfed(&["run", config.to_str().unwrap()]).status.success());
}

#[test]
fn unknown_suite_exits_nonzero() {
    let out = byzfed(&["suite", "exp7", "--runs", "1"]);
    assert!(!out.status.success());
}
