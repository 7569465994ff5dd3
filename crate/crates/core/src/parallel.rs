//! Fixed-size sample batching with order-preserving results.

use rayon::prelude::*;

use crate::error::{OcError, Result};

/// How samples are split into work units. Results never depend on the
/// number of threads: batches are fixed by `batch_size` and reduced in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Parallelism {
    pub batch_size: usize,
}

impl Default for Parallelism {
    fn default() -> Self {
        Self { batch_size: 100 }
    }
}

impl Parallelism {
    pub fn new(batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(OcError::Parameter("batch_size must be >= 1".into()));
        }
        Ok(Self { batch_size })
    }

    pub fn batch_count(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size.max(1)).max(1)
    }

    /// Runs `f(first_sample, rows, work)` on each batch of `data` (rows of
    /// width `n`). Batch `b` receives `work[b]`. A single batch runs on the
    /// calling thread. Returns per-batch results in batch order; the first
    /// failing batch's error wins.
    pub(crate) fn run_batches<W, T, F>(&self, n: usize, data: &mut [f64], work: &mut [W], f: F) -> Result<Vec<T>>
    where
        W: Send,
        T: Send,
        F: Fn(usize, &mut [f64], &mut W) -> Result<T> + Sync,
    {
        let bs = self.batch_size.max(1);
        let chunk = (bs * n).max(1);
        let batches = data.len().div_ceil(chunk).max(1);
        debug_assert!(work.len() >= batches);
        if batches == 1 {
            return Ok(vec![f(0, data, &mut work[0])?]);
        }
        let results: Vec<Result<T>> = data
            .par_chunks_mut(chunk)
            .zip(work.par_iter_mut())
            .enumerate()
            .map(|(b, (rows, w))| f(b * bs, rows, w))
            .collect();
        results.into_iter().collect()
    }
}
