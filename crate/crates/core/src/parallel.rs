//! Fan-out over independent runs (seeds, model kinds, sweep points).
//!
//! Every run owns its model and random streams, so results do not depend
//! on scheduling; they are always returned in input order.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    /// Rayon worker pool; same as `Sequential` without the `parallel` feature.
    #[default]
    Parallel,
}

impl Execution {
    /// Whether runs will actually execute concurrently in this build.
    pub fn is_concurrent(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Applies `f` to every item and collects results in input order.
pub fn fan_out<T, R, F>(items: &[T], execution: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if execution == Execution::Parallel {
        use rayon::prelude::*;
        return items.par_iter().map(&f).collect();
    }
    let _ = execution;
    items.iter().map(f).collect()
}

/// [`fan_out`] for fallible work; the first error in input order wins.
pub fn try_fan_out<T, R, E, F>(items: &[T], execution: Execution, f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    fan_out(items, execution, f).into_iter().collect()
}
