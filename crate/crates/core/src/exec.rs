//! Batch execution over independent items (questions, searches).
//!
//! With the `parallel` feature (on by default) work runs on a rayon pool;
//! without it, or with [`ExecPolicy::Sequential`], items run in order on the
//! calling thread. Results always come back in input order, so output is
//! identical either way.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExecPolicy {
    #[default]
    Sequential,
    /// `threads == 0` uses rayon's default pool size.
    Parallel { threads: usize },
}

impl ExecPolicy {
    /// `jobs <= 1` is sequential.
    pub fn from_jobs(jobs: usize) -> Self {
        if jobs <= 1 {
            Self::Sequential
        } else {
            Self::Parallel { threads: jobs }
        }
    }

    /// Whether work will actually run on more than one thread.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && matches!(self, Self::Parallel { .. })
    }
}

/// Applies `f` to every item and returns the results in input order.
pub fn map_ordered<T, R, F>(items: &[T], policy: ExecPolicy, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    match policy {
        ExecPolicy::Sequential => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
        ExecPolicy::Parallel { threads } => parallel_map(items, threads, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    let run = || items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    if threads == 0 {
        return run();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(run),
        Err(e) => {
            log::warn!("could not build a {threads}-thread pool ({e}); using the global pool");
            run()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, R, F>(items: &[T], _threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}
