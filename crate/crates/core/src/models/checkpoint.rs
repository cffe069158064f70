use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{IndependentModel, ModelKind, Network, SharedMtlModel, StructuredMtlModel};
use crate::data::TaskKind;
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Parameterized};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnyModel {
    Independent(IndependentModel),
    StandardMtl(SharedMtlModel),
    StructuredMtl(StructuredMtlModel),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Independent(_) => ModelKind::Independent,
            AnyModel::StandardMtl(_) => ModelKind::StandardMtl,
            AnyModel::StructuredMtl(_) => ModelKind::StructuredMtl,
        }
    }

    fn task_kinds(&self) -> Vec<TaskKind> {
        match self {
            AnyModel::Independent(m) => m.task_kinds().to_vec(),
            AnyModel::StandardMtl(m) => m.task_kinds().to_vec(),
            AnyModel::StructuredMtl(m) => m.task_kinds().to_vec(),
        }
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        let params: Vec<&Matrix> = match self {
            AnyModel::Independent(m) => m.params(),
            AnyModel::StandardMtl(m) => m.params(),
            AnyModel::StructuredMtl(m) => m.params(),
        };
        params.iter().map(|p| (p.rows(), p.cols())).collect()
    }

    pub fn describe(&self) -> ArchitectureDescriptor {
        let shapes = self.shapes();
        ArchitectureDescriptor {
            kind: self.kind(),
            task_kinds: self.task_kinds(),
            parameter_count: shapes.iter().map(|(r, c)| r * c).sum(),
            parameter_shapes: shapes,
        }
    }
}

/// Enough structure to reject a checkpoint whose payload does not match
/// the architecture it claims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    pub kind: ModelKind,
    pub task_kinds: Vec<TaskKind>,
    pub parameter_count: usize,
    pub parameter_shapes: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: ArchitectureDescriptor,
    pub model: AnyModel,
}

/// Writes a JSON checkpoint. Floats round-trip exactly.
pub fn save_checkpoint(model: &AnyModel, path: &Path) -> Result<()> {
    let checkpoint = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        architecture: model.describe(),
        model: model.clone(),
    };
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(file, &checkpoint)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<AnyModel> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let checkpoint: Checkpoint = serde_json::from_reader(file)?;
    if checkpoint.format_version != CHECKPOINT_VERSION {
        return Err(Error::Schema(format!(
            "checkpoint format version {} is not supported (expected {})",
            checkpoint.format_version, CHECKPOINT_VERSION
        )));
    }
    if checkpoint.model.describe() != checkpoint.architecture {
        return Err(Error::Schema(
            "checkpoint parameters do not match its architecture descriptor".into(),
        ));
    }
    Ok(checkpoint.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelConfig;
    use crate::numeric::Mode;
    use crate::rng_for;

    #[test]
    fn round_trip_is_bit_identical() {
        let kinds = [
            TaskKind::Regression,
            TaskKind::Regression,
            TaskKind::Classification,
        ];
        let mut model =
            StructuredMtlModel::new(21, &kinds, &ModelConfig::default(), &mut rng_for(8, 0))
                .unwrap();
        let x = Matrix::from_vec(
            3,
            21,
            (0..63).map(|i| (i as f64).sqrt() / 3.0 - 1.0).collect(),
        )
        .unwrap();
        // Make running statistics non-trivial before saving.
        model.forward(&x, Mode::Train, &mut rng_for(1, 1)).unwrap();
        let (before, _) = model.forward(&x, Mode::Eval, &mut rng_for(0, 0)).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&AnyModel::StructuredMtl(model.clone()), &path).unwrap();
        let AnyModel::StructuredMtl(mut loaded) = load_checkpoint(&path).unwrap() else {
            panic!("wrong kind");
        };
        assert_eq!(loaded, model);
        let (after, _) = loaded.forward(&x, Mode::Eval, &mut rng_for(0, 0)).unwrap();
        assert_eq!(before.as_slice(), after.as_slice());
    }

    #[test]
    fn rejects_other_versions_and_mismatched_descriptors() {
        let model = AnyModel::Independent(IndependentModel::new(
            4,
            TaskKind::Regression,
            &ModelConfig::default(),
            &mut rng_for(1, 0),
        ));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");

        let mut cp = Checkpoint {
            format_version: 99,
            architecture: model.describe(),
            model: model.clone(),
        };
        std::fs::write(&path, serde_json::to_string(&cp).unwrap()).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Schema(_))));

        cp.format_version = CHECKPOINT_VERSION;
        cp.architecture.parameter_count += 1;
        std::fs::write(&path, serde_json::to_string(&cp).unwrap()).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Schema(_))));
    }
}
