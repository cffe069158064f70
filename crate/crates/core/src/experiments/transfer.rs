use super::report::{PredictionDump, RunHistory};
use super::{paired_tests, records_for, ExperimentConfig, ExperimentReport};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::parallel::try_fan_out;
use crate::training::pretrain_and_transfer;

pub const TRANSFER_ARM: &str = "transfer";
pub const SCRATCH_ARM: &str = "scratch";

/// Pre-train-and-transfer from `source` to `target` with every seed, with a
/// paired t-test between the two arms on each target metric.
pub fn run_transfer_utility(
    dataset: &Dataset,
    source: usize,
    target: usize,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let tasks = dataset.task_count();
    if source >= tasks || target >= tasks || source == target {
        return Err(Error::Argument(format!(
            "transfer needs two distinct tasks among {tasks}, got {source} and {target}"
        )));
    }
    let data = config.prepare(dataset)?;
    let outcomes = try_fan_out(&config.train.seeds, config.execution, |&seed| {
        pretrain_and_transfer(&data, source, target, &config.model, &config.train, seed)
            .map_err(|e| e.context(format!("transfer run with seed {seed}")))
    })?;
    let mut report = ExperimentReport::new("transfer", config, dataset);
    for (&seed, o) in config.train.seeds.iter().zip(outcomes) {
        for (arm, eval) in [(TRANSFER_ARM, &o.transfer), (SCRATCH_ARM, &o.scratch)] {
            report.records.extend(records_for(arm, seed, eval));
            report
                .predictions
                .push(PredictionDump::new(arm, seed, eval));
        }
        let source_name = &dataset.task_names[source];
        let target_name = &dataset.task_names[target];
        for (model, task, history) in [
            ("pretrain", source_name, o.source_history),
            (TRANSFER_ARM, target_name, o.transfer_history),
            (SCRATCH_ARM, target_name, o.scratch_history),
        ] {
            report.histories.push(RunHistory {
                model: model.to_string(),
                seed,
                task: Some(task.clone()),
                history,
            });
        }
    }
    report.t_tests = paired_tests(&report.records, TRANSFER_ARM, &[SCRATCH_ARM])?;
    Ok(report.finish())
}
