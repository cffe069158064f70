use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_csv, Dataset, Schema, SplitRatios, SyntheticSpec};
use crate::error::{Error, Result};
use crate::experiments::{DataSource, ExperimentConfig};
use crate::models::{ModelConfig, ModelKind};
use crate::parallel::Execution;
use crate::training::TrainConfig;

/// Where the samples come from: exactly one of `csv` and `synthetic`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub csv: Option<PathBuf>,
    /// Column layout of `csv`; the alloy schema when absent.
    pub schema: Option<Schema>,
    pub synthetic: Option<SyntheticSpec>,
}

/// Study-specific settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub split: SplitRatios,
    pub split_seed: u64,
    pub execution: Execution,
    /// Sweep: the task whose training samples are downsampled.
    pub majority: Option<String>,
    /// Sweep: the task whose metrics are tracked.
    pub minority: Option<String>,
    pub counts: Vec<usize>,
    /// Sweep and conflict: the multi-task model kind.
    pub model_kind: ModelKind,
    pub conflict_stride: usize,
    /// Transfer: pre-training task.
    pub source: Option<String>,
    /// Transfer: target task.
    pub target: Option<String>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let base = ExperimentConfig::default();
        Self {
            split: base.split,
            split_seed: base.split_seed,
            execution: base.execution,
            majority: None,
            minority: None,
            counts: Vec::new(),
            model_kind: ModelKind::StandardMtl,
            conflict_stride: base.conflict_stride,
            source: None,
            target: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Falls back to `MTLBENCH_OUT`, then `mtlbench-out`.
    pub dir: Option<PathBuf>,
    pub formats: Vec<ReportFormat>,
    /// Also write per-figure plot data.
    pub plot_data: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            formats: vec![ReportFormat::Json, ReportFormat::Csv],
            plot_data: true,
        }
    }
}

/// A complete run description, read from TOML.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub experiment: StudyConfig,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
        Self::from_toml(&text).map_err(|e| e.context(format!("parsing {}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model.clone(),
            train: self.train.clone(),
            split: self.experiment.split,
            split_seed: self.experiment.split_seed,
            conflict_stride: self.experiment.conflict_stride,
            execution: self.experiment.execution,
        }
    }

    /// The configured data source; the default synthetic recipe when none
    /// is given.
    pub fn source(&self) -> Result<DataSource> {
        match (&self.data.csv, &self.data.synthetic) {
            (Some(_), Some(_)) => Err(Error::Config(
                "data: give either csv or synthetic, not both".into(),
            )),
            (Some(path), None) => Ok(DataSource::Csv { path: path.clone() }),
            (None, Some(spec)) => Ok(DataSource::Synthetic(spec.clone())),
            (None, None) => Ok(DataSource::Synthetic(SyntheticSpec::default())),
        }
    }

    pub fn load_dataset(&self) -> Result<(DataSource, Dataset)> {
        let source = self.source()?;
        let dataset = match &source {
            DataSource::Csv { path } => {
                let schema = self.data.schema.clone().unwrap_or_else(Schema::alloy);
                load_csv(path, &schema)?
            }
            DataSource::Synthetic(spec) => generate_synthetic(spec)?,
        };
        Ok((source, dataset))
    }

    pub fn validate(&self) -> Result<()> {
        self.source()?;
        self.experiment_config().validate()?;
        if let Some(spec) = &self.data.synthetic {
            spec.validate()?;
        }
        Ok(())
    }
}
