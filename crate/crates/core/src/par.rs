// SPDX-License-Identifier: Apache-2.0

//! Order-preserving data-parallel map, sequential without the `parallel`
//! feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
use crate::error::GbcError;
use crate::error::Result;

/// Maps `f` over `items`, keeping input order. Runs on the current rayon pool
/// when the `parallel` feature is on.
pub fn ordered_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// A fixed-size worker pool. With one job, [`Executor::map`] iterates on the
/// calling thread and [`Executor::install`] runs on a single worker, so nested
/// [`ordered_map`] calls are sequential too.
pub struct Executor {
    jobs: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("jobs", &self.jobs).finish()
    }
}

impl Executor {
    /// `jobs == 0` picks the number of available cores.
    pub fn new(jobs: usize) -> Result<Self> {
        let jobs = if jobs == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            jobs
        };
        #[cfg(feature = "parallel")]
        {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .thread_name(|i| format!("gbc-worker-{i}"))
                .build()
                .map_err(|e| GbcError::ConfigMismatch(format!("thread pool: {e}")))?;
            Ok(Executor { jobs, pool: Some(pool) })
        }
        #[cfg(not(feature = "parallel"))]
        {
            if jobs == 1 {
                return Ok(Self::sequential());
            }
            log::warn!("built without the parallel feature; ignoring jobs={jobs}");
            Ok(Self::sequential())
        }
    }

    pub fn sequential() -> Self {
        Executor {
            jobs: 1,
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    pub fn jobs(&self) -> usize {
        self.jobs
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = self.pool.as_ref().filter(|_| self.jobs > 1) {
            return pool.install(|| ordered_map(items, f));
        }
        items.iter().map(f).collect()
    }

    /// Runs `op` inside the pool so nested [`ordered_map`] calls use it.
    pub fn install<R: Send>(&self, op: impl FnOnce() -> R + Send) -> R {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(op);
        }
        op()
    }
}
