use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[benchmark]
regions = 2
drives_per_region = 1

[benchmark.scenario.network]
extent = 300.0

[benchmark.scenario.drive]
duration = 40.0

[model]
blocks = 1
hidden = 8

[train]
iterations = 3
batch_size = 2
window = 4

[evaluation]
seeds = [0]
"#;

fn roadkf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roadkf")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = roadkf(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A labelled two-region benchmark in `dir`.
fn benchmark(dir: &Path, seed: &str) -> (PathBuf, PathBuf) {
    let config = dir.join("small.toml");
    fs::write(&config, SMALL).unwrap();
    let data = dir.join("data");
    for cmd in ["gen-network", "gen-drives", "label-oracle"] {
        ok(&[cmd, "--data", s(&data), "--config", s(&config), "--seed", seed]);
    }
    (config, data)
}

#[test]
fn generation_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (_, da) = benchmark(a.path(), "5");
    let (_, db) = benchmark(b.path(), "5");
    for f in ["network.txt", "drive_00.txt", "labels_00.txt"] {
        for r in ["region0", "region1"] {
            let x = fs::read(da.join(r).join(f)).unwrap();
            assert_eq!(x, fs::read(db.join(r).join(f)).unwrap(), "{r}/{f}");
        }
    }
    let c = tempfile::tempdir().unwrap();
    let (_, dc) = benchmark(c.path(), "6");
    assert_ne!(
        fs::read(da.join("region0/drive_00.txt")).unwrap(),
        fs::read(dc.join("region0/drive_00.txt")).unwrap()
    );
}

#[test]
fn evaluate_writes_one_row_per_method_and_fold() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = benchmark(dir.path(), "1");
    let csv = dir.path().join("results.csv");
    let svg = dir.path().join("cdf.svg");
    ok(&[
        "evaluate", "--data", s(&data), "--config", s(&config),
        "--methods", "LS,KF,KF+Viterbi,Oracle,TGNN",
        "--out", s(&csv), "--plot", s(&svg),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("method,fold,seed,he50_m,he95_m,epochs,drives"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 5 * 2);
    for m in ["LS", "KF", "KF+Viterbi", "KF+Oracle", "KF+TGNN"] {
        let folds: Vec<&str> = rows.iter().filter(|r| r[0] == m).map(|r| r[1]).collect();
        assert_eq!(folds, ["0", "1"], "{m}");
    }
    for r in &rows {
        let he95: f64 = r[4].parse().unwrap();
        assert!(he95.is_finite() && he95 >= 0.0);
        assert_eq!(r[2].is_empty(), r[0] != "KF+TGNN");
    }
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn training_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = benchmark(dir.path(), "2");
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    for out in [&a, &b] {
        ok(&["train", "--data", s(&data), "--config", s(&config), "--holdout", "0", "--seed", "3", "--out", s(out)]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let results = dir.path().join("res");
    let table = ok(&[
        "run", "--data", s(&data), "--config", s(&config), "--region", "0",
        "--method", "TGNN", "--checkpoint", s(&a), "--out", s(&results),
    ]);
    assert!(table.starts_with("method,region,he50_m,he95_m,epochs\nKF+TGNN,0,"), "{table}");
    let files: Vec<PathBuf> = fs::read_dir(&results).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.len(), 1);
    let svg = dir.path().join("run.svg");
    ok(&["plot", "--results", s(&files[0]), "--out", s(&svg)]);
    assert!(fs::read_to_string(&svg).unwrap().contains("TGNN"));
}

#[test]
fn grid_search_reports_best_combination() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = benchmark(dir.path(), "4");
    let out = ok(&["grid-search", "--data", s(&data), "--config", s(&config), "--method", "KF+Instant", "--holdout", "1"]);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "KF+Instant");
    assert_eq!(row[1], "242");
    let tuned = format!("{},{}", row[2], row[3]);
    let run = ok(&["run", "--data", s(&data), "--config", s(&config), "--region", "0", "--method", "KF+Instant", "--sigma", &tuned]);
    let he95: f64 = run.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
    let best: f64 = row[4].parse().unwrap();
    assert!((he95 - best).abs() < 1e-5, "{he95} vs {best}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = roadkf(&["gen-network", "--data", "x", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn runtime_errors_exit_one_with_a_single_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = roadkf(&["label-oracle", "--data", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: ") && err.trim_end().lines().count() == 1, "{err}");

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nlearning_rate = 1\n").unwrap();
    let out = roadkf(&["gen-network", "--data", s(dir.path()), "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("g.toml");
    fs::write(&config, "[gradcheck]\ninstances = 2\n").unwrap();
    let out = ok(&["gradcheck", "--config", s(&config)]);
    assert!(out.lines().nth(1).unwrap().ends_with(",true"), "{out}");
}
