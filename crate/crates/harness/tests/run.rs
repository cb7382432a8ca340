use std::fs;
use std::path::Path;

use ginger_harness::config::ExperimentConfig;
use ginger_harness::metrics::read_records;
use ginger_harness::run::{run_experiment, SUMMARY_FILE};
use ginger_harness::HarnessError;
use serde_json::Value;

fn config(text: &str, dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml_str(text).unwrap();
    cfg.output_dir = dir.to_path_buf();
    cfg.validate().unwrap();
    cfg
}

const SMALL: &str = r#"
    steps = 40
    batch_size = 16
    log_every = 3
    seeds = [0, 1]
    timing = false
    [task]
    n = 64
    dim = 4
    classes = 3
    model = { kind = "mlp", hidden = 6 }
    [[optimizer]]
    kind = "ginger"
    learning_rate = 0.05
    gamma = 0.1
    tau = 3
    [[optimizer]]
    kind = "qng"
    learning_rate = 0.05
    tau = 2
    [[optimizer]]
    kind = "adam"
    learning_rate = [0.01, 0.02]
"#;

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&config(SMALL, a.path()), 1).unwrap();
    run_experiment(&config(SMALL, b.path()), 3).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.len(), 4 * 2 + 1);
    assert_eq!(fa, fb);
}

#[test]
fn zero_steps_give_empty_metrics_and_null_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&SMALL.replace("steps = 40", "steps = 0"), dir.path());
    let report = run_experiment(&cfg, 1).unwrap();
    assert_eq!(report.rows.len(), 8);
    for row in &report.rows {
        assert_eq!(row.records, 0);
        assert_eq!(row.min_loss, None);
        assert!(fs::read(dir.path().join(format!("{}.jsonl", row.run))).unwrap().is_empty());
    }
    let mut csv = csv::Reader::from_path(dir.path().join(SUMMARY_FILE)).unwrap();
    let header = csv.headers().unwrap().clone();
    let at = header.iter().position(|h| h == "min_loss").unwrap();
    for rec in csv.records() {
        assert_eq!(&rec.unwrap()[at], "");
    }
}

fn field(rec: &csv::StringRecord, header: &csv::StringRecord, name: &str) -> Option<f64> {
    let i = header.iter().position(|h| h == name).unwrap();
    let s = &rec[i];
    (!s.is_empty()).then(|| s.parse().unwrap())
}

#[test]
fn summary_is_derived_from_metrics_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&SMALL.replace("timing = false", "timing = true"), dir.path());
    run_experiment(&cfg, 2).unwrap();

    let mut csv = csv::Reader::from_path(dir.path().join(SUMMARY_FILE)).unwrap();
    let header = csv.headers().unwrap().clone();
    let mut seen = 0;
    for rec in csv.records() {
        let rec = rec.unwrap();
        let run = &rec[0];
        let text = fs::read_to_string(dir.path().join(format!("{run}.jsonl"))).unwrap();
        let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        // steps 0, 3, ..., 39 are logged
        assert_eq!(lines.len(), 14);
        assert_eq!(lines.last().unwrap()["step"], 39);

        let min = lines.iter().filter_map(|v| v["train_loss"].as_f64()).fold(f64::INFINITY, f64::min);
        let last_grad = lines.last().unwrap()["grad_norm"].as_f64();
        let times: Vec<f64> = lines.iter().filter_map(|v| v["step_time_ns"].as_f64()).collect();
        let mean = times.iter().sum::<f64>() / times.len() as f64;

        assert_eq!(field(&rec, &header, "min_loss"), Some(min));
        assert_eq!(field(&rec, &header, "final_grad_norm"), last_grad);
        let got = field(&rec, &header, "mean_step_time_ns").unwrap();
        assert!((got - mean).abs() <= 1e-9 * mean);
        assert_eq!(field(&rec, &header, "records"), Some(lines.len() as f64));
        assert_eq!(read_records(&dir.path().join(format!("{run}.jsonl"))).unwrap().len(), lines.len());
        seen += 1;
    }
    assert_eq!(seen, 8);
}

#[test]
fn non_finite_loss_aborts_with_a_diagnostic_record() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
        steps = 50
        seed = 4
        timing = false
        [task]
        n = 32
        dim = 3
        classes = 2
        blob_spread = 1e300
        [[optimizer]]
        kind = "momentum"
        learning_rate = 1.0
    "#;
    let err = run_experiment(&config(text, dir.path()), 1).unwrap_err();
    assert!(matches!(err, HarnessError::NumericalAbort { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);

    let records = read_records(&dir.path().join("momentum-seed4.jsonl")).unwrap();
    let last = records.last().unwrap();
    assert!(last.abort.as_deref().unwrap().contains("non-finite"));
    assert!(records[..records.len() - 1].iter().all(|r| r.abort.is_none()));
    let summary = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
    assert!(summary.contains("abort: non-finite"));
}

/// About two thousand parameters. Learning rates come from the grid
/// {1, 5} x 10^{-1..-4} (and damping from {0.01, 0.1, 1} for Ginger),
/// chosen by worst-case minimum loss on data seeds 100..=109; both use
/// first-moment coefficient 0.9.
const COMPARISON: &str = r#"
    steps = 3000
    batch_size = 64
    log_every = 50
    seeds = [0, 1, 2, 3, 4]
    timing = false
    [task]
    n = 1024
    dim = 32
    classes = 8
    blob_spread = 4.0
    model = { kind = "mlp", hidden = 48 }
    [[optimizer]]
    kind = "ginger"
    learning_rate = 0.05
    gamma = 0.01
    alpha = 0.99
    tau = 8
    [[optimizer]]
    kind = "momentum"
    learning_rate = 0.5
"#;

#[test]
fn ginger_reaches_lower_loss_than_momentum_on_most_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(COMPARISON, dir.path());
    assert!((1900..2100).contains(&cfg.num_params().unwrap()));
    let report = run_experiment(&cfg, 2).unwrap();
    let loss = |name: &str| report.rows.iter().find(|r| r.run == name).unwrap().min_loss.unwrap();
    let wins = (0..5)
        .filter(|s| loss(&format!("ginger-seed{s}")) <= loss(&format!("momentum-seed{s}")))
        .count();
    assert!(wins >= 4, "ginger lower on {wins}/5 seeds");
}
