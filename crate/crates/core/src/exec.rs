//! Data-parallel execution over independent work items.
//!
//! Per-clip forward/backward passes, evaluation sweeps and ablation runs are
//! independent, so they are expressed as ordered maps. With the `parallel`
//! feature the maps run on the rayon pool; without it (or with
//! [`Exec::Sequential`]) they run in a plain loop. Results are always returned
//! in input order, and every reduction over them happens sequentially in that
//! order, so both modes produce bitwise-identical numbers.

/// Execution strategy for ordered maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Runs on the rayon pool; identical to `Sequential` when the crate is
    /// built without the `parallel` feature.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    /// Like [`Exec::map`] but short-circuits on the first error (by position).
    pub fn try_map<T, R, E, F>(self, items: &[T], f: F) -> Result<Vec<R>, E>
    where
        T: Sync,
        R: Send,
        E: Send,
        F: Fn(&T) -> Result<R, E> + Sync + Send,
    {
        self.map(items, f).into_iter().collect()
    }
}
