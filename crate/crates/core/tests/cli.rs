use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--data", "synthetic", "--synth-n", "300", "--lookback", "16", "--horizon", "4", "--hidden", "8", "--steps", "4",
    "--batch-size", "16", "--lr", "1e-3",
];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xlstmtime")).args(args).output().unwrap()
}

fn run_in(dir: &Path, cmd: &str, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec![cmd, "--out", out];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    run(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn train_small(dir: &Path) {
    let o = run_in(dir, "train", &["--epochs", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn write_series(path: &Path, rows: usize) {
    let mut text = String::from("date,a,b\n");
    for t in 0..rows {
        let x = t as f64;
        text += &format!("d{t},{},{}\n", (x * 0.3).sin() + 0.01 * x, (x * 0.2).cos());
    }
    fs::write(path, text).unwrap();
}

#[test]
fn training_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train_small(a.path());
    train_small(b.path());
    for file in ["model.ckpt", "report.json"] {
        let x = fs::read(a.path().join(file)).unwrap();
        let y = fs::read(b.path().join(file)).unwrap();
        assert!(x == y, "{file} differs between identical runs");
    }
    assert!(a.path().join("timing.json").exists());
}

#[test]
fn missing_dataset_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--data", "/no/such/file.csv", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("/no/such/file.csv"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(run(&["train", "--no-such-flag", "1"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--lookback", "many"]).status.code(), Some(2));
}

#[test]
fn evaluate_writes_one_row_per_prediction() {
    let dir = tempfile::tempdir().unwrap();
    train_small(dir.path());
    let o = run_in(dir.path(), "evaluate", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("metrics.json")).unwrap()).unwrap();
    let windows = metrics["windows"].as_u64().unwrap() as usize;
    for key in ["mse", "mae", "naive_mse", "naive_mae"] {
        assert!(metrics[key].as_f64().unwrap().is_finite(), "{key}");
    }
    let rows = fs::read_to_string(dir.path().join("predictions.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, windows * 4 * 2);
}

#[test]
fn evaluate_rejects_a_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    train_small(dir.path());
    let args: Vec<&str> = SMALL.iter().map(|a| if *a == "16" { "20" } else { a }).collect();
    let mut full = vec!["evaluate", "--out", dir.path().to_str().unwrap()];
    full.extend(args);
    let o = run(&full);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("16x2") && stderr(&o).contains("20x2"), "{}", stderr(&o));
}

#[test]
fn forecast_needs_a_full_lookback() {
    let dir = tempfile::tempdir().unwrap();
    train_small(dir.path());
    let input = dir.path().join("recent.csv");

    write_series(&input, 16);
    let o = run_in(dir.path(), "forecast", &["--input", input.to_str().unwrap(), "--date-column", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = fs::read_to_string(dir.path().join("forecast.csv")).unwrap();
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines[0], "step,a,b");
    assert_eq!(lines.len(), 1 + 4);
    run_in(dir.path(), "forecast", &["--input", input.to_str().unwrap(), "--date-column", "0"]);
    assert_eq!(fs::read_to_string(dir.path().join("forecast.csv")).unwrap(), first);

    write_series(&input, 15);
    let o = run_in(dir.path(), "forecast", &["--input", input.to_str().unwrap(), "--date-column", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("L=16"), "{}", stderr(&o));
}

#[test]
fn gradcheck_lists_every_block_and_catches_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["gradcheck", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("gradcheck.json")).unwrap()).unwrap();
    let names: Vec<&str> = report["blocks"].as_array().unwrap().iter().map(|b| b["name"].as_str().unwrap()).collect();
    let mut unique = names.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), names.len());
    for block in ["output.weight", "output.bias", "input.weight"] {
        assert!(names.contains(&block), "{block} missing from {names:?}");
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(names.iter().all(|n| stdout.contains(n)));

    assert_eq!(run(&["gradcheck", "--out", out, "--corrupt-gradient"]).status.code(), Some(1));
    assert_eq!(run(&["gradcheck", "--out", out, "--backend", "mlstm"]).status.code(), Some(0));
}

#[test]
fn decompose_splits_input_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("series.csv");
    write_series(&input, 40);
    let o = run_in(dir.path(), "decompose", &["--input", input.to_str().unwrap(), "--date-column", "0", "--kernel-window", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let read = |name: &str| -> Vec<Vec<f64>> {
        fs::read_to_string(dir.path().join(name))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect()
    };
    let (trend, seasonal) = (read("trend.csv"), read("seasonal.csv"));
    assert_eq!(trend.len(), 40);
    for t in 0..40 {
        let x = t as f64;
        let orig = [(x * 0.3).sin() + 0.01 * x, (x * 0.2).cos()];
        for c in 0..2 {
            assert!((trend[t][c] + seasonal[t][c] - orig[c]).abs() < 1e-12);
        }
    }

    fs::write(&input, "v\n".to_string() + &"4.25\n".repeat(30)).unwrap();
    let o = run_in(dir.path(), "decompose", &["--input", input.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(read("seasonal.csv").iter().flatten().all(|s| *s == 0.0));

    let o = run_in(dir.path(), "decompose", &["--input", input.to_str().unwrap(), "--kernel-window", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("odd"));
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.conf");
    fs::write(&file, "# small run\nepochs = 3\nhidden = 6\n").unwrap();
    let o = run_in(dir.path(), "train", &["--config", file.to_str().unwrap(), "--epochs", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved = fs::read_to_string(dir.path().join("config.resolved")).unwrap();
    assert!(resolved.lines().any(|l| l == "epochs = 1"));
    assert!(resolved.lines().any(|l| l == "hidden = 8"), "SMALL sets hidden on the command line");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["epochs"].as_array().unwrap().len(), 1);
}
