use serde::{Deserialize, Serialize};

use super::{evaluate, init_rng, train, TaskEvaluation, TrainConfig, TrainHistory};
use crate::data::Prepared;
use crate::error::{Error, Result};
use crate::models::{ModelConfig, SharedMtlModel};

/// Both arms of the pre-train-and-transfer study for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferOutcome {
    pub transfer_model: SharedMtlModel,
    pub scratch_model: SharedMtlModel,
    pub source_history: TrainHistory,
    pub transfer_history: TrainHistory,
    pub scratch_history: TrainHistory,
    /// Target-task test results.
    pub transfer: TaskEvaluation,
    pub scratch: TaskEvaluation,
}

/// Arm A trains a backbone and source head on source-labeled samples, then
/// freezes the backbone and fits a fresh target head. Arm B trains backbone
/// and target head from scratch on target-labeled samples. The fresh head in
/// arm A starts from the same weights as arm B's head.
pub fn pretrain_and_transfer(
    data: &Prepared,
    source: usize,
    target: usize,
    model_config: &ModelConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<TransferOutcome> {
    let tasks = data.train.task_count();
    if source >= tasks || target >= tasks || source == target {
        return Err(Error::Argument(format!(
            "transfer needs two distinct tasks among {tasks}, got source {source} and target {target}"
        )));
    }
    let src = data.single_task(source);
    let tgt = data.single_task(target);
    let dim = data.train.feature_dim();

    let source_model = SharedMtlModel::new(
        dim,
        &src.train.task_kinds,
        model_config,
        &mut init_rng(seed),
    );
    let (source_model, source_history) = train(source_model, &src.train, &src.val, config, seed)
        .map_err(|e| e.context("pre-training on the source task"))?;

    let fresh = SharedMtlModel::new(
        dim,
        &tgt.train.task_kinds,
        model_config,
        &mut init_rng(seed ^ 0x7a26_5f3e),
    );
    let transfer_model = SharedMtlModel {
        backbone: source_model.backbone,
        freeze_backbone: true,
        ..fresh.clone()
    };
    let (mut transfer_model, transfer_history) =
        train(transfer_model, &tgt.train, &tgt.val, config, seed)
            .map_err(|e| e.context("training the transfer head"))?;
    let (mut scratch_model, scratch_history) = train(fresh, &tgt.train, &tgt.val, config, seed)
        .map_err(|e| e.context("training from scratch"))?;

    let transfer = evaluate(&mut transfer_model, &tgt.test, &tgt.scaler)?;
    let scratch = evaluate(&mut scratch_model, &tgt.test, &tgt.scaler)?;
    let (Some(transfer), Some(scratch)) = (transfer.into_iter().next(), scratch.into_iter().next())
    else {
        return Err(Error::Argument(format!(
            "target task '{}' has no test labels",
            data.train.task_names[target]
        )));
    };
    Ok(TransferOutcome {
        transfer_model,
        scratch_model,
        source_history,
        transfer_history,
        scratch_history,
        transfer,
        scratch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SplitRatios, SyntheticSpec, TaskKind};

    #[test]
    fn frozen_backbone_is_untouched_by_head_training() {
        let ds = generate_synthetic(&SyntheticSpec {
            counts: vec![200, 60],
            task_names: vec!["a".into(), "b".into()],
            task_kinds: vec![TaskKind::Regression; 2],
            relatedness: 1.0,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let data = Prepared::new(&ds, SplitRatios::default(), 3).unwrap();
        let mc = ModelConfig {
            hidden: vec![16, 16],
            head_hidden: 8,
            ..ModelConfig::default()
        };
        let tc = TrainConfig {
            max_epochs: 3,
            ..TrainConfig::default()
        };
        let out = pretrain_and_transfer(&data, 0, 1, &mc, &tc, 5).unwrap();

        // Retrain the source arm to recover the pre-training backbone.
        let src = data.single_task(0);
        let m = SharedMtlModel::new(
            data.train.feature_dim(),
            &src.train.task_kinds,
            &mc,
            &mut init_rng(5),
        );
        let (pre, _) = train(m, &src.train, &src.val, &tc, 5).unwrap();
        assert_eq!(out.transfer_model.backbone, pre.backbone);
        assert!(out.transfer_model.freeze_backbone);
        assert_ne!(out.scratch_model.backbone, pre.backbone);
        assert_eq!(out.transfer.targets, out.scratch.targets);
        assert!(pretrain_and_transfer(&data, 1, 1, &mc, &tc, 5).is_err());
    }
}
