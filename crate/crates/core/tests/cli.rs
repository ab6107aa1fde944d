use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_monoflow");

fn monoflow(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const FLOW: &str = r#"
seed = 11
[problem]
name = "bilinear_saddle"
d = 2
[method]
mode = "flow"
theta = 0.5
p = 2
horizon = 1.0
step = 0.01
"#;

#[test]
fn sigma_at_one_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.toml",
        r#"
[problem]
name = "bilinear_saddle"
d = 2
[method]
mode = "hpe_exact"
sigma = 1.0
theta = 0.1
p = 1
max_iters = 10
"#,
    );
    let out = monoflow(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma"));
}

#[test]
fn empty_tensor_window_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "window.toml",
        r#"
[problem]
name = "bilinear_saddle"
d = 2
[method]
mode = "tensor"
sigma_hat = 0.3
sigma_l = 0.5
sigma_u = 0.6
lipschitz = 1.0
p = 2
max_iters = 10
"#,
    );
    let out = monoflow(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("window"));
}

#[test]
fn zero_horizon_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "flow.toml", &FLOW.replace("horizon = 1.0", "horizon = 0.0"));
    let out = monoflow(&["run", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines.len(), 2, "header plus the initial state");
    assert!(lines[0].starts_with("t,"));
}

#[test]
fn same_seed_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "flow.toml", FLOW);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = monoflow(&["run", "--config", &cfg, "--seed", "5", "--out", path.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read(a.with_extension("json")).unwrap(), std::fs::read(b.with_extension("json")).unwrap());
}

#[test]
fn rates_reports_both_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "rates.toml",
        r#"
seed = 2
[problem]
name = "bilinear_saddle"
d = 2
[method]
mode = "hpe_exact"
theta = 0.1
p = 1
max_iters = 5000
"#,
    );
    let out = monoflow(&["rates", "--config", &cfg]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert_eq!(text.matches("[PASS]").count(), 2, "{text}");
}

#[test]
fn rates_rejects_unbounded_problems() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sm.toml",
        r#"
[problem]
name = "strongly_monotone_affine"
d = 2
mu = 1.0
[method]
mode = "hpe_exact"
theta = 0.5
p = 1
max_iters = 50
"#,
    );
    assert_eq!(monoflow(&["rates", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn check_suite_passes() {
    let out = monoflow(&["check", "--suite", "feedback"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.contains("all invariants passed"));
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let out = monoflow(&["check", "--suite", "nonsense"]);
    assert!(!out.status.success());
}
