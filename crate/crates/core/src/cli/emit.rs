use std::fs::File;
use std::path::{Path, PathBuf};

use super::config::ReportFormat;
use crate::data::TaskKind;
use crate::error::{Error, Result};
use crate::experiments::ExperimentReport;
use crate::metrics::THRESHOLD;

fn writer(dir: &Path, name: &str, written: &mut Vec<PathBuf>) -> Result<csv::Writer<File>> {
    let path = dir.join(name);
    let w = csv::Writer::from_path(&path)
        .map_err(|e| Error::from(e).context(format!("creating {}", path.display())))?;
    written.push(path);
    Ok(w)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Writes the report as JSON and/or one CSV per table. Returns the paths
/// written. Floats use Rust's shortest round-trip formatting, which is
/// locale-independent.
pub fn emit_report(
    report: &ExperimentReport,
    formats: &[ReportFormat],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::from(e).context(format!("creating {}", dir.display())))?;
    let mut written = Vec::new();
    if formats.contains(&ReportFormat::Json) {
        let path = dir.join("report.json");
        std::fs::write(&path, report.to_json()?)?;
        written.push(path);
    }
    if !formats.contains(&ReportFormat::Csv) {
        return Ok(written);
    }
    let mut w = writer(dir, "metrics.csv", &mut written)?;
    w.write_record(["task", "model", "metric", "mean", "std", "n_seeds"])?;
    for a in &report.aggregates {
        w.write_record([
            &a.task,
            &a.model,
            &a.metric,
            &a.mean.to_string(),
            &a.std.to_string(),
            &a.n_seeds.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = writer(dir, "records.csv", &mut written)?;
    w.write_record(["task", "model", "seed", "metric", "value"])?;
    for r in &report.records {
        w.write_record([
            &r.task,
            &r.model,
            &r.seed.to_string(),
            &r.metric,
            &r.value.to_string(),
        ])?;
    }
    w.flush()?;

    if !report.t_tests.is_empty() {
        let mut w = writer(dir, "ttests.csv", &mut written)?;
        w.write_record([
            "task",
            "metric",
            "model_a",
            "model_b",
            "mean_a",
            "mean_b",
            "t",
            "df",
            "p",
            "significant",
        ])?;
        for t in &report.t_tests {
            w.write_record([
                &t.task,
                &t.metric,
                &t.model_a,
                &t.model_b,
                &t.mean_a.to_string(),
                &t.mean_b.to_string(),
                &opt(t.result.t_statistic),
                &t.result.degrees_of_freedom.to_string(),
                &t.result.p_value.to_string(),
                &t.result.significant.to_string(),
            ])?;
        }
        w.flush()?;
    }
    if !report.relations.is_empty() {
        let mut w = writer(dir, "relations.csv", &mut written)?;
        w.write_record(["target", "source", "mean", "std", "n_seeds"])?;
        for r in &report.relations {
            w.write_record([
                &r.target,
                &r.source,
                &r.mean.to_string(),
                &r.std.to_string(),
                &r.n_seeds.to_string(),
            ])?;
        }
        w.flush()?;
    }
    if !report.sweep.is_empty() {
        let mut w = writer(dir, "sweep.csv", &mut written)?;
        w.write_record([
            "majority_count",
            "minority_count",
            "ratio",
            "task",
            "metric",
            "mean",
            "std",
            "n_seeds",
        ])?;
        for p in &report.sweep {
            for a in &p.metrics {
                w.write_record([
                    &p.majority_count.to_string(),
                    &p.minority_count.to_string(),
                    &p.ratio.to_string(),
                    &p.minority_task,
                    &a.metric,
                    &a.mean.to_string(),
                    &a.std.to_string(),
                    &a.n_seeds.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }
    if !report.conflict.is_empty() {
        let mut w = writer(dir, "cosines.csv", &mut written)?;
        w.write_record(["task_a", "task_b", "mean", "std", "steps", "n_seeds"])?;
        for c in &report.conflict {
            w.write_record([
                &c.task_a,
                &c.task_b,
                &opt(c.mean),
                &opt(c.std),
                &c.steps.to_string(),
                &c.n_seeds.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(written)
}

/// Confusion counts at the decision threshold: `(tp, fp, fn, tn)`.
pub fn confusion_counts(targets: &[f64], probabilities: &[f64]) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (&y, &p) in targets.iter().zip(probabilities) {
        match (p >= THRESHOLD, y == 1.0) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            (false, false) => c.3 += 1,
        }
    }
    c
}

/// Per-figure CSV data for external plotting. Studies absent from the
/// report are skipped with a notice.
pub fn emit_plot_data(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let dir = dir.join("plots");
    std::fs::create_dir_all(&dir)?;
    let mut written = Vec::new();

    if report.histories.is_empty() {
        log::info!("no training histories; skipping training curves");
    } else {
        let mut w = writer(&dir, "training_curves.csv", &mut written)?;
        w.write_record(["model", "seed", "task", "epoch", "split", "loss"])?;
        for h in &report.histories {
            let task = h.task.clone().unwrap_or_default();
            for e in &h.history.epochs {
                for (split, loss) in [("train", e.train_loss), ("val", e.val_loss)] {
                    w.write_record([
                        &h.model,
                        &h.seed.to_string(),
                        &task,
                        &e.epoch.to_string(),
                        split,
                        &loss.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
    }

    let regression: Vec<_> = report
        .predictions
        .iter()
        .filter(|p| p.kind == TaskKind::Regression)
        .collect();
    if regression.is_empty() {
        log::info!("no regression predictions; skipping error distributions");
    } else {
        let mut w = writer(&dir, "residuals.csv", &mut written)?;
        w.write_record(["model", "seed", "task", "target", "prediction", "residual"])?;
        for p in regression {
            for (y, yhat) in p.targets.iter().zip(&p.predictions) {
                w.write_record([
                    &p.model,
                    &p.seed.to_string(),
                    &p.task,
                    &y.to_string(),
                    &yhat.to_string(),
                    &(yhat - y).to_string(),
                ])?;
            }
        }
        w.flush()?;
    }

    let classification: Vec<_> = report
        .predictions
        .iter()
        .filter(|p| p.kind == TaskKind::Classification)
        .collect();
    if classification.is_empty() {
        log::info!("no classification predictions; skipping confusion counts");
    } else {
        let mut w = writer(&dir, "confusion.csv", &mut written)?;
        w.write_record(["model", "seed", "task", "tp", "fp", "fn", "tn"])?;
        for p in classification {
            let (tp, fp, fn_, tn) = confusion_counts(&p.targets, &p.predictions);
            w.write_record([
                &p.model,
                &p.seed.to_string(),
                &p.task,
                &tp.to_string(),
                &fp.to_string(),
                &fn_.to_string(),
                &tn.to_string(),
            ])?;
        }
        w.flush()?;
    }

    if report.sweep.is_empty() {
        log::info!("no sweep study; skipping the sweep curve");
    } else {
        let mut w = writer(&dir, "sweep_curve.csv", &mut written)?;
        w.write_record(["majority_count", "ratio", "r2_mean", "r2_std"])?;
        for p in &report.sweep {
            let (m, s) = p
                .metric("r2")
                .map_or((None, None), |a| (Some(a.mean), Some(a.std)));
            w.write_record([
                &p.majority_count.to_string(),
                &p.ratio.to_string(),
                &opt(m),
                &opt(s),
            ])?;
        }
        w.flush()?;
    }

    if report.conflict.is_empty() {
        log::info!("no conflict study; skipping the cosine matrix");
    } else {
        let names: Vec<String> = report
            .conflict_steps
            .first()
            .map(|r| r.task_names.clone())
            .unwrap_or_default();
        let mut w = writer(&dir, "cosine_matrix.csv", &mut written)?;
        let mut header = vec!["task".to_string()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for a in &names {
            let mut row = vec![a.clone()];
            for b in &names {
                let stat = report
                    .conflict
                    .iter()
                    .find(|c| &c.task_a == a && &c.task_b == b);
                row.push(opt(stat.and_then(|c| c.mean)));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
    }

    if report.experiment != "transfer" {
        log::info!("no transfer study; skipping transfer bars");
    } else {
        let mut w = writer(&dir, "transfer_bars.csv", &mut written)?;
        w.write_record(["arm", "task", "metric", "mean", "std", "n_seeds"])?;
        for a in &report.aggregates {
            w.write_record([
                &a.model,
                &a.task,
                &a.metric,
                &a.mean.to_string(),
                &a.std.to_string(),
                &a.n_seeds.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(written)
}
