use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    /// Absolute improvement a validation loss must make to count.
    pub threshold: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 10,
            min_lr: 1e-6,
            threshold: 1e-4,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Config(format!(
                "scheduler factor must lie in (0, 1), got {}",
                self.factor
            )));
        }
        if self.patience == 0 || !(self.min_lr > 0.0) || !(self.threshold >= 0.0) {
            return Err(Error::Config(
                "scheduler patience and min_lr must be positive, threshold non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Reduce-on-plateau learning-rate schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub config: SchedulerConfig,
    pub learning_rate: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(learning_rate: f64, config: SchedulerConfig) -> Self {
        Self {
            config,
            learning_rate,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Records one epoch's validation loss and returns the learning rate for
    /// the next epoch.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best - self.config.threshold {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.config.patience {
                self.learning_rate =
                    (self.learning_rate * self.config.factor).max(self.config.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.learning_rate
    }
}

/// Functional form of [`PlateauScheduler::step`].
pub fn reduce_lr_on_plateau(state: &mut PlateauScheduler, val_loss: f64) -> f64 {
    state.step(val_loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Early-stopping bookkeeping with a snapshot of the best model.
#[derive(Debug, Clone)]
pub struct EarlyStopState<M> {
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub patience: usize,
    pub best_parameters: Option<M>,
}

impl<M: Clone> EarlyStopState<M> {
    pub fn new(patience: usize) -> Self {
        Self {
            best_val_loss: f64::INFINITY,
            best_epoch: 0,
            epochs_since_improvement: 0,
            patience,
            best_parameters: None,
        }
    }

    /// Records `val_loss` for `epoch` (1-based); snapshots `model` on strict
    /// improvement.
    pub fn check(&mut self, epoch: usize, val_loss: f64, model: &M) -> StopDecision {
        if val_loss < self.best_val_loss {
            self.best_val_loss = val_loss;
            self.best_epoch = epoch;
            self.epochs_since_improvement = 0;
            self.best_parameters = Some(model.clone());
        } else {
            self.epochs_since_improvement += 1;
        }
        if self.epochs_since_improvement >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

/// Functional form of [`EarlyStopState::check`].
pub fn early_stop_check<M: Clone>(
    state: &mut EarlyStopState<M>,
    epoch: usize,
    val_loss: f64,
    model: &M,
) -> StopDecision {
    state.check(epoch, val_loss, model)
}
