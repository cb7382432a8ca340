use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ginger(args: &[&str], env: Option<(&str, &Path)>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ginger"));
    cmd.args(args).env_remove("GINGER_OUT");
    if let Some((k, v)) = env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const ABORTING: &str = r#"
steps = 20
timing = false
output_dir = "unused"
[task]
n = 16
dim = 2
classes = 2
blob_spread = 1e300
[[optimizer]]
kind = "momentum"
learning_rate = 1.0
"#;

const TINY: &str = r#"
steps = 5
seeds = [1, 2]
[task]
n = 16
dim = 2
classes = 2
[[optimizer]]
kind = "ginger"
learning_rate = 0.1
gamma = 0.5
tau = 2
"#;

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(ginger(&[], None).status.code(), Some(1));
    assert_eq!(ginger(&["frobnicate"], None).status.code(), Some(1));
    assert_eq!(ginger(&["bench", "--dims", "1.5"], None).status.code(), Some(1));
    assert_eq!(ginger(&["--help"], None).status.code(), Some(0));
    assert_eq!(ginger(&["run", "/no/such/config.toml"], None).status.code(), Some(1));
}

#[test]
fn verify_filter_runs_matching_checks() {
    let o = ginger(&["verify", "--filter", "gradient_check"], None);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1);
    assert!(out.starts_with("PASS [ 8] gradient_check"));
    assert_eq!(ginger(&["verify", "--filter", "nothing_matches"], None).status.code(), Some(1));
}

#[test]
fn numerical_abort_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("abort.toml");
    fs::write(&cfg, ABORTING).unwrap();
    let out = dir.path().join("out");
    let o = ginger(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(3));
    let last = fs::read_to_string(out.join("momentum-seed0.jsonl")).unwrap();
    assert!(last.lines().last().unwrap().contains("\"abort\""));
}

#[test]
fn output_directory_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let cfg = cfg.to_str().unwrap();

    let env_dir = dir.path().join("from-env");
    assert!(ginger(&["run", cfg], Some(("GINGER_OUT", &env_dir))).status.success());
    assert!(env_dir.join("ginger-seed1.jsonl").exists());
    assert!(env_dir.join("summary.csv").exists());

    let flag_dir = dir.path().join("from-flag");
    let o = ginger(
        &["run", cfg, "--out", flag_dir.to_str().unwrap(), "--seed", "7"],
        Some(("GINGER_OUT", &env_dir)),
    );
    assert!(o.status.success());
    assert!(flag_dir.join("ginger-seed7.jsonl").exists());
    assert!(!flag_dir.join("ginger-seed1.jsonl").exists());
}

#[test]
fn bench_writes_table_and_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = ginger(
        &["bench", "--dims", "50,1e2", "--tau", "4", "--reps", "2", "--out", dir.path().to_str().unwrap()],
        None,
    );
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 3);
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert!(csv.starts_with("dim,tau,reps,median_ns,ratio,flops_per_step"));
    assert_eq!(csv.lines().count(), 3);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("bench.json")).unwrap()).unwrap();
    assert_eq!(json[1]["dim"], 100);
    assert!(json[1]["ratio"].as_f64().unwrap() > 0.0);
}
