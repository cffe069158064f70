use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, TaskKind};
use crate::error::{Error, Result};

/// Feature columns of the alloy union dataset: 15 atomic fractions followed
/// by 6 physical descriptors.
pub const ALLOY_FEATURES: [&str; 21] = [
    "Al", "Ti", "Cr", "Fe", "Co", "Ni", "Cu", "Zr", "Mo", "W", "Mn", "Si", "Mg", "Re", "Ta",
    "r_avg", "delta", "dH_mix", "EN_avg", "dEN", "N",
];

pub const ALLOY_TARGETS: [(&str, TaskKind); 3] = [
    ("resistivity", TaskKind::Regression),
    ("hardness", TaskKind::Regression),
    ("amorphous", TaskKind::Classification),
];

/// Column layout of a union-dataset CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<String>,
    pub targets: Vec<(String, TaskKind)>,
    /// The first this-many feature columns must be non-negative.
    pub nonnegative_features: usize,
}

impl Schema {
    pub fn alloy() -> Self {
        Self {
            features: ALLOY_FEATURES.iter().map(|s| s.to_string()).collect(),
            targets: ALLOY_TARGETS
                .iter()
                .map(|(n, k)| (n.to_string(), *k))
                .collect(),
            nonnegative_features: 15,
        }
    }

    /// Features named `x0, x1, …` and the given targets, no sign constraints.
    pub fn generic(feature_dim: usize, task_names: &[String], task_kinds: &[TaskKind]) -> Self {
        Self {
            features: (0..feature_dim).map(|i| format!("x{i}")).collect(),
            targets: task_names
                .iter()
                .cloned()
                .zip(task_kinds.iter().copied())
                .collect(),
            nonnegative_features: 0,
        }
    }
}

/// Reads a union dataset. Empty target cells are missing labels.
///
/// Fails closed: if any row is malformed, no rows are returned and the
/// error lists every offending row (1-based, header excluded).
pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();

    let target_kinds: HashMap<&str, TaskKind> = schema
        .targets
        .iter()
        .map(|(n, k)| (n.as_str(), *k))
        .collect();
    let mut feature_pos = vec![None; schema.features.len()];
    let mut targets_present: Vec<(usize, String, TaskKind)> = Vec::new();
    for (col, name) in header.iter().enumerate() {
        if let Some(f) = schema.features.iter().position(|n| n == name) {
            if feature_pos[f].replace(col).is_some() {
                return Err(Error::Schema(format!("duplicate column '{name}'")));
            }
        } else if let Some(kind) = target_kinds.get(name.as_str()) {
            if targets_present.iter().any(|(_, n, _)| n == name) {
                return Err(Error::Schema(format!("duplicate column '{name}'")));
            }
            targets_present.push((col, name.clone(), *kind));
        } else {
            return Err(Error::Schema(format!("unknown column '{name}'")));
        }
    }
    if let Some(missing) = feature_pos.iter().position(Option::is_none) {
        return Err(Error::Schema(format!(
            "missing feature column '{}'",
            schema.features[missing]
        )));
    }
    if targets_present.is_empty() {
        return Err(Error::Schema("no target columns".into()));
    }
    // keep schema order for tasks
    targets_present.sort_by_key(|(_, name, _)| {
        schema
            .targets
            .iter()
            .position(|(n, _)| n == name)
            .unwrap_or(usize::MAX)
    });
    let feature_pos: Vec<usize> = feature_pos.into_iter().map(Option::unwrap).collect();

    let mut samples = Vec::new();
    let mut bad: Vec<(usize, String)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                bad.push((row, e.to_string()));
                continue;
            }
        };
        match parse_row(
            &record,
            header.len(),
            &feature_pos,
            &targets_present,
            schema,
        ) {
            Ok(sample) => samples.push(sample),
            Err(why) => bad.push((row, why)),
        }
    }
    if !bad.is_empty() {
        return Err(Error::MalformedRows {
            path: path.to_path_buf(),
            rows: bad,
        });
    }
    Dataset::new(
        samples,
        targets_present.iter().map(|(_, n, _)| n.clone()).collect(),
        targets_present.iter().map(|(_, _, k)| *k).collect(),
    )
}

fn parse_row(
    record: &csv::StringRecord,
    width: usize,
    feature_pos: &[usize],
    targets: &[(usize, String, TaskKind)],
    schema: &Schema,
) -> std::result::Result<Sample, String> {
    if record.len() != width {
        return Err(format!("expected {width} fields, found {}", record.len()));
    }
    let mut features = Vec::with_capacity(feature_pos.len());
    for (f, &col) in feature_pos.iter().enumerate() {
        let cell = &record[col];
        let v: f64 = cell
            .parse()
            .map_err(|_| format!("feature '{}' is not a number: '{cell}'", schema.features[f]))?;
        if !v.is_finite() {
            return Err(format!("feature '{}' is not finite", schema.features[f]));
        }
        if f < schema.nonnegative_features && v < 0.0 {
            return Err(format!("feature '{}' is negative", schema.features[f]));
        }
        features.push(v);
    }
    let mut values = Vec::with_capacity(targets.len());
    for (col, name, kind) in targets {
        let cell = &record[*col];
        if cell.is_empty() {
            values.push(None);
            continue;
        }
        let v: f64 = cell
            .parse()
            .map_err(|_| format!("target '{name}' is not a number: '{cell}'"))?;
        if !v.is_finite() {
            return Err(format!("target '{name}' is not finite"));
        }
        if *kind == TaskKind::Classification && v != 0.0 && v != 1.0 {
            return Err(format!("label '{name}' must be 0 or 1, found {v}"));
        }
        values.push(Some(v));
    }
    if values.iter().all(Option::is_none) {
        return Err("no target present".into());
    }
    Ok(Sample {
        features,
        targets: values,
    })
}

/// Writes `dataset` with the schema's feature names and the dataset's tasks.
pub fn write_csv(dataset: &Dataset, schema: &Schema, path: &Path) -> Result<()> {
    if schema.features.len() != dataset.feature_dim() {
        return Err(Error::Dimension {
            context: "csv feature columns",
            expected: dataset.feature_dim(),
            found: schema.features.len(),
        });
    }
    let mut writer = csv::Writer::from_path(path)?;
    let header: Vec<&str> = schema
        .features
        .iter()
        .map(String::as_str)
        .chain(dataset.task_names.iter().map(String::as_str))
        .collect();
    writer.write_record(&header)?;
    for s in &dataset.samples {
        let row: Vec<String> = s
            .features
            .iter()
            .map(|v| v.to_string())
            .chain(
                s.targets
                    .iter()
                    .map(|t| t.map(|v| v.to_string()).unwrap_or_default()),
            )
            .collect();
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}
