use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mtlbench::data::{load_csv, Schema};
use mtlbench::experiments::ExperimentReport;

const SMALL: &str = "\
[data.synthetic]
counts = [300, 90, 90]

[train]
max_epochs = 3
seeds = [1, 2]
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mtlbench"));
    c.env_remove("MTLBENCH_OUT");
    c
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("small.toml");
    std::fs::write(&config, SMALL).unwrap();
    let out = dir.join("out");
    bin()
        .args([
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .args(args)
        .output()
        .unwrap()
}

fn only_run_dir(dir: &Path) -> PathBuf {
    let runs: Vec<PathBuf> = std::fs::read_dir(dir.join("out"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(runs.len(), 1);
    runs[0].clone()
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect()
}

#[test]
fn usage_errors_exit_with_1() {
    let out = bin().args(["compare", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nlearning_rate = -1.0\n").unwrap();
    let out = bin()
        .args(["--config", bad.to_str().unwrap(), "compare"])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    std::fs::write(&bad, "[train]\nno_such_key = 3\n").unwrap();
    let out = bin()
        .args(["--config", bad.to_str().unwrap(), "compare"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_with_0() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("sweep"));
}

#[test]
fn runtime_failures_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("missing.toml");
    std::fs::write(&config, "[data]\ncsv = \"/definitely/not/here.csv\"\n").unwrap();
    let out = bin()
        .args([
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
            "compare",
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn compare_writes_consistent_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["--seeds", "42", "--max-epochs", "2", "compare"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = only_run_dir(dir.path());
    assert!(run
        .file_name()
        .unwrap()
        .to_str()
        .unwrap()
        .starts_with("compare-"));
    assert!(run.join("run.toml").exists());

    let text = std::fs::read_to_string(run.join("report.json")).unwrap();
    let report = ExperimentReport::from_json(&text).unwrap();
    assert_eq!(report.config.train.seeds, vec![42]);
    assert_eq!(report.config.train.max_epochs, 2);
    assert_eq!(
        ExperimentReport::from_json(&report.to_json().unwrap()).unwrap(),
        report
    );

    let metrics = rows(&run.join("metrics.csv"));
    assert_eq!(metrics.len(), report.aggregates.len());
    for (row, a) in metrics.iter().zip(&report.aggregates) {
        assert_eq!(&row[0], a.task);
        assert_eq!(row[3].parse::<f64>().unwrap(), a.mean);
    }
    for model in ["independent", "standard_mtl", "structured_mtl"] {
        assert!(report.aggregates.iter().any(|a| a.model == model));
    }

    // every confusion row accounts for each test sample of its run once
    for row in rows(&run.join("plots/confusion.csv")) {
        let total: usize = (3..7).map(|i| row[i].parse::<usize>().unwrap()).sum();
        let dump = report
            .predictions
            .iter()
            .find(|p| p.model == row[0] && p.seed.to_string() == row[1] && p.task == row[2])
            .unwrap();
        assert_eq!(total, dump.targets.len());
    }
    assert!(run.join("plots/training_curves.csv").exists());
    assert!(run.join("plots/residuals.csv").exists());
}

#[test]
fn json_only_format_skips_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "--seeds",
            "1",
            "--max-epochs",
            "1",
            "--format",
            "json",
            "compare",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = only_run_dir(dir.path());
    assert!(run.join("report.json").exists());
    assert!(!run.join("metrics.csv").exists());
}

#[test]
fn sweep_counts_give_one_point_each() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["sweep", "--counts", "50,100,200"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = only_run_dir(dir.path());
    let curve = rows(&run.join("plots/sweep_curve.csv"));
    let counts: Vec<&str> = curve.iter().map(|r| r.get(0).unwrap()).collect();
    assert_eq!(counts, ["50", "100", "200"]);
    let sweep = rows(&run.join("sweep.csv"));
    assert!(sweep.iter().all(|r| &r[3] == "hardness"));
    assert_eq!(sweep.iter().filter(|r| &r[4] == "r2").count(), 3);
}

#[test]
fn sweep_rejects_out_of_range_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["sweep", "--counts", "50,100000"]);
    assert_eq!(
        out.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn conflict_matrix_has_unit_diagonal() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["conflict"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = only_run_dir(dir.path());
    let matrix = rows(&run.join("plots/cosine_matrix.csv"));
    assert_eq!(matrix.len(), 3);
    for (i, row) in matrix.iter().enumerate() {
        assert_eq!(row[i + 1].parse::<f64>().unwrap(), 1.0);
        for v in row.iter().skip(1) {
            let c: f64 = v.parse().unwrap();
            assert!((-1.0..=1.0).contains(&c));
        }
    }
}

#[test]
fn transfer_writes_both_arms() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "transfer",
            "--source",
            "resistivity",
            "--target",
            "hardness",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = only_run_dir(dir.path());
    let bars = rows(&run.join("plots/transfer_bars.csv"));
    let arms: std::collections::BTreeSet<String> = bars.iter().map(|r| r[0].to_string()).collect();
    assert_eq!(arms.len(), 2);
}

#[test]
fn synth_round_trips_through_the_loader() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synthetic.csv");
    let config = dir.path().join("small.toml");
    std::fs::write(&config, SMALL).unwrap();
    let out = bin()
        .args([
            "--config",
            config.to_str().unwrap(),
            "synth",
            path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let names: Vec<String> = ["resistivity", "hardness", "amorphous"]
        .map(String::from)
        .to_vec();
    let kinds = [
        mtlbench::data::TaskKind::Regression,
        mtlbench::data::TaskKind::Regression,
        mtlbench::data::TaskKind::Classification,
    ];
    let data = load_csv(&path, &Schema::generic(21, &names, &kinds)).unwrap();
    assert_eq!(data.label_counts(), vec![300, 90, 90]);
}
