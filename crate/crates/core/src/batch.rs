//! Independent samples in parallel.
//!
//! Sample `k` of a batch is always drawn with seed `sample_seed(master, k)`,
//! so the output does not depend on the number of workers.

use rayon::prelude::*;

use crate::dcftp::{CoalescenceRecord, SamplerContext, SamplerError, StationaryNetworkState};
use crate::rng::sample_seed;

pub type SampleResult = Result<(StationaryNetworkState, CoalescenceRecord), SamplerError>;

/// Draws samples `0..n` of the batch keyed by `master`, in index order.
/// `workers = None` uses the global rayon pool.
pub fn run_batch(ctx: &SamplerContext, n: usize, master: u64, workers: Option<usize>) -> Vec<SampleResult> {
    let draw = || -> Vec<SampleResult> {
        (0..n)
            .into_par_iter()
            .map(|k| ctx.sample(sample_seed(master, k as u64)))
            .collect()
    };
    match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .expect("thread pool")
            .install(draw),
        None => draw(),
    }
}

/// Like [`run_batch`] but stops at the first failure.
pub fn try_run_batch(
    ctx: &SamplerContext,
    n: usize,
    master: u64,
    workers: Option<usize>,
) -> Result<Vec<(StationaryNetworkState, CoalescenceRecord)>, SamplerError> {
    run_batch(ctx, n, master, workers).into_iter().collect()
}
