use super::report::{PredictionDump, RelationRecord, RelationStat, RunHistory};
use super::{paired_tests, records_for, ExperimentConfig, ExperimentReport};
use crate::data::{Dataset, Prepared};
use crate::error::{Error, Result};
use crate::metrics::{mean, sample_std, MetricRecord};
use crate::models::{
    IndependentModel, ModelKind, Network, SharedMtlModel, StructuredMtlModel, TaskRelationGraph,
};
use crate::parallel::try_fan_out;
use crate::training::{evaluate, init_rng, train, TaskEvaluation, TrainHistory};
use crate::{derive_seed, rng_for, training};

/// Everything one (model kind, seed) run contributes to a report.
#[derive(Debug, Default)]
pub(crate) struct RunOutput {
    pub records: Vec<MetricRecord>,
    pub histories: Vec<RunHistory>,
    pub predictions: Vec<PredictionDump>,
    pub relation: Option<(u64, TaskRelationGraph)>,
}

impl RunOutput {
    fn push(
        &mut self,
        model: &str,
        seed: u64,
        task: Option<&str>,
        history: TrainHistory,
        evals: &[TaskEvaluation],
    ) {
        for e in evals {
            self.records.extend(records_for(model, seed, e));
            self.predictions.push(PredictionDump::new(model, seed, e));
        }
        self.histories.push(RunHistory {
            model: model.to_string(),
            seed,
            task: task.map(str::to_string),
            history,
        });
    }
}

fn fit<M: Network>(
    model: M,
    data: &Prepared,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(M, TrainHistory, Vec<TaskEvaluation>)> {
    let (mut model, history) = train(model, &data.train, &data.val, &config.train, seed)?;
    let evals = evaluate(&mut model, &data.test, &data.scaler)?;
    Ok((model, history, evals))
}

/// Trains one model kind with one seed and evaluates it on the test split.
/// Independent models are trained per task on that task's labeled samples.
pub(crate) fn run_one(
    kind: ModelKind,
    data: &Prepared,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<RunOutput> {
    let dim = data.train.feature_dim();
    let kinds = &data.train.task_kinds;
    let name = kind.name();
    let mut out = RunOutput::default();
    match kind {
        ModelKind::Independent => {
            for t in 0..data.train.task_count() {
                let single = data.single_task(t);
                let mut rng = rng_for(derive_seed(seed, t as u64), training::INIT_STREAM);
                let model = IndependentModel::new(dim, kinds[t], &config.model, &mut rng);
                let (_, history, evals) = fit(model, &single, config, seed)?;
                out.push(name, seed, Some(&data.train.task_names[t]), history, &evals);
            }
        }
        ModelKind::StandardMtl => {
            let model = SharedMtlModel::new(dim, kinds, &config.model, &mut init_rng(seed));
            let (_, history, evals) = fit(model, data, config, seed)?;
            out.push(name, seed, None, history, &evals);
        }
        ModelKind::StructuredMtl => {
            let model = StructuredMtlModel::new(dim, kinds, &config.model, &mut init_rng(seed))?;
            let (model, history, evals) = fit(model, data, config, seed)?;
            out.push(name, seed, None, history, &evals);
            out.relation = Some((
                seed,
                model.compute_task_relation_matrix(&data.train.task_names)?,
            ));
        }
    }
    Ok(out)
}

/// All model kinds × all seeds, evaluated per task on its labeled test
/// samples, with paired t-tests of the structured model against the other
/// two kinds and the learned relations of the structured runs.
pub fn run_main_comparison(
    dataset: &Dataset,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    run_comparison(dataset, config, &ModelKind::ALL)
}

/// [`run_main_comparison`] restricted to `kinds`.
pub fn run_comparison(
    dataset: &Dataset,
    config: &ExperimentConfig,
    kinds: &[ModelKind],
) -> Result<ExperimentReport> {
    if dataset.task_count() < 2 {
        return Err(Error::Argument(
            "the comparison needs a dataset with at least 2 tasks".into(),
        ));
    }
    let data = config.prepare(dataset)?;
    let jobs: Vec<(ModelKind, u64)> = kinds
        .iter()
        .flat_map(|&k| config.train.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let outputs = try_fan_out(&jobs, config.execution, |&(kind, seed)| {
        run_one(kind, &data, config, seed)
            .map_err(|e| e.context(format!("{kind} run with seed {seed}")))
    })?;
    let mut report = ExperimentReport::new("compare", config, dataset);
    let mut graphs = Vec::new();
    for o in outputs {
        report.records.extend(o.records);
        report.histories.extend(o.histories);
        report.predictions.extend(o.predictions);
        graphs.extend(o.relation);
    }
    let structured = ModelKind::StructuredMtl.name();
    if kinds.contains(&ModelKind::StructuredMtl) {
        let others: Vec<&str> = kinds
            .iter()
            .filter(|&&k| k != ModelKind::StructuredMtl)
            .map(|k| k.name())
            .collect();
        report.t_tests = paired_tests(&report.records, structured, &others)?;
    }
    if !graphs.is_empty() {
        let (records, stats) = extract_task_relations(&graphs);
        report.relation_records = records;
        report.relations = stats;
    }
    Ok(report.finish())
}

/// Per-seed relation entries and their mean ± std per ordered pair.
pub fn extract_task_relations(
    graphs: &[(u64, TaskRelationGraph)],
) -> (Vec<RelationRecord>, Vec<RelationStat>) {
    if graphs.len() == 1 {
        log::warn!("relations from a single seed; reporting std 0");
    }
    let mut records = Vec::new();
    for (seed, g) in graphs {
        let n = g.task_names.len();
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                records.push(RelationRecord {
                    seed: *seed,
                    target: g.task_names[i].clone(),
                    source: g.task_names[j].clone(),
                    weight: g.get(i, j),
                });
            }
        }
    }
    let mut stats: Vec<RelationStat> = Vec::new();
    for r in &records {
        if stats
            .iter()
            .any(|s| s.target == r.target && s.source == r.source)
        {
            continue;
        }
        let values: Vec<f64> = records
            .iter()
            .filter(|q| q.target == r.target && q.source == r.source)
            .map(|q| q.weight)
            .collect();
        stats.push(RelationStat {
            target: r.target.clone(),
            source: r.source.clone(),
            mean: mean(&values),
            std: sample_std(&values),
            n_seeds: values.len(),
        });
    }
    (records, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Matrix;

    #[test]
    fn relation_aggregation() {
        let g = |w: f64| TaskRelationGraph {
            task_names: vec!["a".into(), "b".into()],
            weights: Matrix::from_rows(&[vec![0.9, w], vec![0.2, 0.9]]).unwrap(),
        };
        let (records, stats) = extract_task_relations(&[(1, g(0.1)), (2, g(0.3))]);
        assert_eq!(records.len(), 4);
        assert_eq!(stats.len(), 2);
        assert_eq!(
            (stats[0].target.as_str(), stats[0].source.as_str()),
            ("a", "b")
        );
        assert!((stats[0].mean - 0.2).abs() < 1e-15);
        assert_eq!(stats[1].std, 0.0);
        let (_, single) = extract_task_relations(&[(1, g(0.1))]);
        assert_eq!(single[0].std, 0.0);
    }
}
