//! Trial-level execution: rayon data-parallel by default, with a sequential
//! fallback when the `parallel` feature is disabled (or requested at runtime).
//!
//! Results are collected in job-index order, so the reduction is a
//! deterministic function of the inputs regardless of worker count.

use serde::{Deserialize, Serialize};

/// How to run a batch of independent jobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parallelism {
    /// Run jobs one after another on the calling thread.
    Sequential,
    /// Run jobs on a rayon pool. `workers = None` uses the default pool size.
    /// Without the `parallel` feature this falls back to sequential execution.
    Parallel { workers: Option<usize> },
}

impl Default for Parallelism {
    fn default() -> Self {
        Parallelism::Parallel { workers: None }
    }
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn run_indexed<T, F>(n: usize, parallelism: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match parallelism {
        Parallelism::Sequential => (0..n).map(f).collect(),
        Parallelism::Parallel { workers } => run_parallel(n, workers, f),
    }
}

#[cfg(feature = "parallel")]
fn run_parallel<T, F>(n: usize, workers: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    match workers {
        None => (0..n).into_par_iter().map(f).collect(),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .expect("failed to build rayon pool");
            pool.install(|| (0..n).into_par_iter().map(f).collect())
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn run_parallel<T, F>(n: usize, _workers: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
