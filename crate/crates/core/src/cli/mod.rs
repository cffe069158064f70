//! The `mtlbench` command line: one subcommand per study, each reading a
//! TOML run config plus flag overrides.

pub mod config;
pub mod emit;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

pub use config::{DataConfig, OutputConfig, ReportFormat, RunConfig, StudyConfig};
pub use emit::{confusion_counts, emit_plot_data, emit_report};

use crate::data::{write_csv, Dataset, Schema, TaskKind};
use crate::error::{Error, Result};
use crate::experiments::{
    run_comparison, run_gradient_conflict, run_imbalance_sweep, run_main_comparison,
    run_transfer_utility, DataSource, ExperimentReport,
};
use crate::models::{gradcheck_all, ModelKind};
use crate::parallel::Execution;

/// Relative-error bound a `gradcheck` run must stay under.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "mtlbench",
    version,
    about = "Multi-task learning benchmark for tabular property prediction"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run config; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base output directory (overrides the config and MTLBENCH_OUT).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated training seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Epoch budget per training run.
    #[arg(long, global = true)]
    pub max_epochs: Option<usize>,
    /// Report formats to write.
    #[arg(long, global = true, value_delimiter = ',', value_parser = parse_format)]
    pub format: Option<Vec<ReportFormat>>,
    /// Run seeds one after another instead of on the thread pool.
    #[arg(long, global = true)]
    pub sequential: bool,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

fn parse_format(s: &str) -> std::result::Result<ReportFormat, String> {
    match s {
        "json" => Ok(ReportFormat::Json),
        "csv" => Ok(ReportFormat::Csv),
        other => Err(format!("unknown format {other:?} (expected json or csv)")),
    }
}

fn parse_kind(s: &str) -> std::result::Result<ModelKind, String> {
    ModelKind::ALL
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| {
            format!("unknown model {s:?} (expected independent, standard_mtl or structured_mtl)")
        })
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Independent vs shared vs structured multi-task models.
    Compare,
    /// Minority-task metrics while the majority task's training set grows.
    Sweep {
        /// Comma-separated majority training counts.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
        /// Task whose training samples are downsampled.
        #[arg(long)]
        majority: Option<String>,
        /// Task whose metrics are tracked.
        #[arg(long)]
        minority: Option<String>,
        /// standard_mtl or structured_mtl.
        #[arg(long, value_parser = parse_kind)]
        model: Option<ModelKind>,
    },
    /// Pairwise cosines between per-task backbone gradients.
    Conflict {
        /// standard_mtl or structured_mtl.
        #[arg(long, value_parser = parse_kind)]
        model: Option<ModelKind>,
    },
    /// Pre-train on one task, then fit another with the backbone frozen.
    Transfer {
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        target: Option<String>,
    },
    /// Train the structured model and report its learned relation weights.
    Relations,
    /// Finite-difference check of every model kind's gradients.
    Gradcheck {
        /// Batch rows.
        #[arg(long, default_value_t = 4)]
        rows: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write the configured synthetic dataset to a CSV file.
    Synth {
        /// Destination file.
        path: PathBuf,
    },
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code: 0 success, 1 usage or config error,
/// 2 runtime failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config(_) | Error::Usage(_) | Error::Argument(_) | Error::Toml(_) => 1,
        _ => 2,
    }
}

/// The run config after applying flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let g = &cli.global;
    let mut c = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seeds) = &g.seeds {
        c.train.seeds = seeds.clone();
    }
    if let Some(n) = g.max_epochs {
        c.train.max_epochs = n;
    }
    if let Some(f) = &g.format {
        c.output.formats = f.clone();
    }
    if let Some(out) = &g.out {
        c.output.dir = Some(out.clone());
    }
    if g.sequential {
        c.experiment.execution = Execution::Sequential;
    }
    match &cli.command {
        Command::Sweep {
            counts,
            majority,
            minority,
            model,
        } => {
            if let Some(v) = counts {
                c.experiment.counts = v.clone();
            }
            if majority.is_some() {
                c.experiment.majority = majority.clone();
            }
            if minority.is_some() {
                c.experiment.minority = minority.clone();
            }
            if let Some(m) = model {
                c.experiment.model_kind = *m;
            }
        }
        Command::Conflict { model: Some(m) } => c.experiment.model_kind = *m,
        Command::Transfer { source, target } => {
            if source.is_some() {
                c.experiment.source = source.clone();
            }
            if target.is_some() {
                c.experiment.target = target.clone();
            }
        }
        _ => {}
    }
    c.validate()?;
    Ok(c)
}

/// Base output directory: config (or `--out`), then `MTLBENCH_OUT`, then
/// `mtlbench-out`.
pub fn output_base(config: &RunConfig) -> PathBuf {
    config
        .output
        .dir
        .clone()
        .or_else(|| std::env::var_os("MTLBENCH_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("mtlbench-out"))
}

/// Creates a fresh `<experiment>-<unix seconds>` directory under `base`,
/// suffixing `-2`, `-3`, ... on collision. Existing runs are never touched.
pub fn create_run_dir(base: &Path, experiment: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(base)
        .map_err(|e| Error::from(e).context(format!("creating {}", base.display())))?;
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let stem = format!("{experiment}-{stamp}");
    for attempt in 1.. {
        let name = if attempt == 1 {
            stem.clone()
        } else {
            format!("{stem}-{attempt}")
        };
        let dir = base.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::from(e).context(format!("creating {}", dir.display()))),
        }
    }
    unreachable!()
}

fn task_by_name(
    dataset: &Dataset,
    name: &Option<String>,
    fallback: usize,
    role: &str,
) -> Result<usize> {
    match name {
        Some(n) => dataset
            .task_index(n)
            .map_err(|e| e.context(format!("{role} task"))),
        None => Ok(fallback),
    }
}

fn most_labeled(dataset: &Dataset) -> usize {
    let counts = dataset.label_counts();
    (0..counts.len())
        .max_by_key(|&t| (counts[t], std::cmp::Reverse(t)))
        .unwrap_or(0)
}

/// The regression task with the fewest labels, other than `not`.
fn least_labeled_regression(dataset: &Dataset, not: usize) -> Option<usize> {
    let counts = dataset.label_counts();
    (0..counts.len())
        .filter(|&t| t != not && dataset.task_kinds[t] == TaskKind::Regression)
        .min_by_key(|&t| (counts[t], t))
}

/// Runs the study selected by `cli` and returns its report (no files
/// written).
pub fn run_study(cli: &Cli, config: &RunConfig) -> Result<(DataSource, ExperimentReport)> {
    let (source, dataset) = config.load_dataset()?;
    let exp = config.experiment_config();
    let study = &config.experiment;
    let mut report = match &cli.command {
        Command::Compare => run_main_comparison(&dataset, &exp)?,
        Command::Relations => {
            let mut r = run_comparison(&dataset, &exp, &[ModelKind::StructuredMtl])?;
            r.experiment = "relations".into();
            r
        }
        Command::Sweep { .. } => {
            if study.counts.is_empty() {
                return Err(Error::Usage(
                    "sweep needs majority counts (--counts or experiment.counts)".into(),
                ));
            }
            let majority = task_by_name(
                &dataset,
                &study.majority,
                most_labeled(&dataset),
                "majority",
            )?;
            let minority = match &study.minority {
                Some(_) => task_by_name(&dataset, &study.minority, 0, "minority")?,
                None => least_labeled_regression(&dataset, majority).ok_or_else(|| {
                    Error::Usage("no regression task to track; pass --minority".into())
                })?,
            };
            run_imbalance_sweep(
                &dataset,
                majority,
                minority,
                &study.counts,
                study.model_kind,
                &exp,
            )?
        }
        Command::Conflict { .. } => run_gradient_conflict(&dataset, study.model_kind, &exp)?,
        Command::Transfer { .. } => {
            let source_task =
                task_by_name(&dataset, &study.source, most_labeled(&dataset), "source")?;
            let fallback = least_labeled_regression(&dataset, source_task)
                .unwrap_or(usize::from(source_task == 0));
            let target_task = task_by_name(&dataset, &study.target, fallback, "target")?;
            run_transfer_utility(&dataset, source_task, target_task, &exp)?
        }
        Command::Gradcheck { .. } | Command::Synth { .. } => {
            return Err(Error::Usage("not a study subcommand".into()));
        }
    };
    report.source = Some(source.clone());
    Ok((source, report))
}

fn task_kinds_of(config: &RunConfig) -> Result<Vec<TaskKind>> {
    Ok(match config.source()? {
        DataSource::Synthetic(spec) => spec.task_kinds,
        DataSource::Csv { .. } => config
            .data
            .schema
            .clone()
            .unwrap_or_else(Schema::alloy)
            .targets
            .into_iter()
            .map(|(_, k)| k)
            .collect(),
    })
}

fn dispatch(cli: &Cli) -> Result<()> {
    let config = resolve_config(cli)?;
    match &cli.command {
        Command::Gradcheck { rows, seed } => {
            if *rows < 2 {
                return Err(Error::Usage("gradcheck needs at least 2 rows".into()));
            }
            let kinds = task_kinds_of(&config)?;
            let start = std::time::Instant::now();
            let results = gradcheck_all(&config.model, &kinds, *rows, *seed)?;
            let mut worst: f64 = 0.0;
            for (kind, g) in &results {
                println!(
                    "{:<15} max relative error {:.3e} over {} parameters",
                    kind.name(),
                    g.max_relative_error,
                    g.checked
                );
                worst = worst.max(g.max_relative_error);
            }
            let pass = worst < GRADCHECK_TOLERANCE;
            println!(
                "gradcheck {} (max {worst:.3e}, tolerance {GRADCHECK_TOLERANCE:e}, {:.1}s)",
                if pass { "PASS" } else { "FAIL" },
                start.elapsed().as_secs_f64()
            );
            if pass {
                Ok(())
            } else {
                Err(Error::CheckFailed(format!(
                    "gradient max relative error {worst:e} >= {GRADCHECK_TOLERANCE:e}"
                )))
            }
        }
        Command::Synth { path } => {
            let spec = match config.source()? {
                DataSource::Synthetic(spec) => spec,
                DataSource::Csv { .. } => {
                    return Err(Error::Usage(
                        "synth needs a synthetic data source, not csv".into(),
                    ));
                }
            };
            let dataset = crate::data::generate_synthetic(&spec)?;
            let schema = Schema::generic(spec.feature_dim, &spec.task_names, &spec.task_kinds);
            write_csv(&dataset, &schema, path)?;
            println!("wrote {} samples to {}", dataset.len(), path.display());
            Ok(())
        }
        _ => {
            let (_, report) = run_study(cli, &config)?;
            let dir = create_run_dir(&output_base(&config), &report.experiment)?;
            std::fs::write(dir.join("run.toml"), config.to_toml()?)?;
            let mut written = emit_report(&report, &config.output.formats, &dir)?;
            if config.output.plot_data {
                written.extend(emit_plot_data(&report, &dir)?);
            }
            for a in &report.aggregates {
                println!(
                    "{:<14} {:<22} {:<8} {:>10.4} ± {:.4} (n={})",
                    a.task, a.model, a.metric, a.mean, a.std, a.n_seeds
                );
            }
            log::info!("{} files written", written.len());
            println!("{}", dir.display());
            Ok(())
        }
    }
}
