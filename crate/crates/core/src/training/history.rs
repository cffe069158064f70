use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub learning_rate: f64,
    /// Unweighted masked validation loss per task; `None` without labels.
    pub task_val_loss: Vec<Option<f64>>,
    /// R² for regression tasks, AUC for classification tasks; `None` when
    /// undefined on the validation split.
    pub task_val_metric: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub task_names: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub early_stopped: bool,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn best_val_loss(&self) -> f64 {
        self.epochs[self.best_epoch - 1].val_loss
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }

    pub fn learning_rates(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.learning_rate).collect()
    }

    /// One row per epoch; undefined values are left empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "epoch".to_string(),
            "train_loss".into(),
            "val_loss".into(),
            "learning_rate".into(),
        ];
        for name in &self.task_names {
            header.push(format!("val_loss_{name}"));
            header.push(format!("val_metric_{name}"));
        }
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        for e in &self.epochs {
            let mut row = vec![
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_loss.to_string(),
                e.learning_rate.to_string(),
            ];
            for (l, m) in e.task_val_loss.iter().zip(&e.task_val_metric) {
                row.push(opt(*l));
                row.push(opt(*m));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let h = TrainHistory {
            task_names: vec!["a".into(), "b".into()],
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.25,
                learning_rate: 1e-3,
                task_val_loss: vec![Some(0.1), None],
                task_val_metric: vec![Some(0.9), None],
            }],
            stopped_epoch: 1,
            best_epoch: 1,
            early_stopped: false,
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,train_loss,val_loss,learning_rate,val_loss_a,val_metric_a,val_loss_b,val_metric_b\n\
             1,0.5,0.25,0.001,0.1,0.9,,\n"
        );
        assert_eq!(h.best_val_loss(), 0.25);
    }
}
