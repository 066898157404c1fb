//! Worker pool handed down from the caller.
//!
//! Results are always collected in index order, so the worker count never
//! changes what a computation returns.

use rayon::prelude::*;

use crate::error::{Error, Result};

pub struct WorkerPool {
    pool: rayon::ThreadPool,
    workers: usize,
}

impl WorkerPool {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::InvalidArgument("worker count must be >= 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
        Ok(Self { pool, workers })
    }

    /// Single worker; convenient for tests and sequential callers.
    pub fn sequential() -> Self {
        Self::new(1).expect("one worker")
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Evaluates `f(0..n)` on the pool and returns the results in index order.
    pub fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        if self.workers == 1 {
            return (0..n).map(f).collect();
        }
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

impl std::fmt::Debug for WorkerPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerPool")
            .field("workers", &self.workers)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_independent_of_workers() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = WorkerPool::new(1).unwrap().map_indexed(1000, f);
        let b = WorkerPool::new(4).unwrap().map_indexed(1000, f);
        assert_eq!(a, b);
        assert!(WorkerPool::new(0).is_err());
    }
}
