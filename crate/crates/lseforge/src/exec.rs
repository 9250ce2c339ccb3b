//! Thread-pool executor for the fused kernels.

use lseforge_core::Executor;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::error::{Error, Result};

/// Environment variable capping the number of kernel workers.
pub const THREADS_ENV: &str = "LSEFORGE_THREADS";

/// Worker count from `LSEFORGE_THREADS`, or the machine's parallelism when unset.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got {s:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub struct PoolExecutor {
    pool: ThreadPool,
}

impl PoolExecutor {
    pub fn new(threads: usize) -> Result<Self> {
        let pool = ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
        Ok(Self { pool })
    }

    pub fn from_env() -> Result<Self> {
        Self::new(threads_from_env()?)
    }

    /// Runs `f` inside the pool, so nested parallel iterators use its workers.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

impl Executor for PoolExecutor {
    fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    fn map<T, F>(&self, n_tasks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n_tasks).into_par_iter().map(f).collect())
    }
}
