//! Data-parallel helpers with a sequential fallback.
//!
//! Every hot loop in the crate (generator assembly, residual fields, Monte
//! Carlo paths, sampling certificates) goes through [`map_range`] so that the
//! same call site runs on rayon when the `parallel` feature is enabled and
//! [`Execution::Parallel`] is requested, and as a plain iterator otherwise.
//! Results are always collected in index order, so output never depends on
//! the thread count.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when work will actually be spread over the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

pub fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if exec.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = exec;
    (0..n).map(f).collect()
}

pub fn try_map_range<T, E, F>(exec: Execution, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if exec.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Runs `op` with a dedicated pool of `threads` workers. Without the
/// `parallel` feature the closure simply runs on the caller's thread.
pub fn with_threads<R: Send>(threads: usize, op: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if threads > 0 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                return pool.install(op);
            }
        }
    }
    let _ = threads;
    op()
}

/// Pairwise (cascade) summation. The split points depend only on the slice
/// length, so the result is reproducible regardless of how the terms were
/// produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
