//! Training, evaluation, baseline and rendering runs built on the core.

pub mod archive_io;
pub mod baseline;
pub mod evaluate;
pub mod render;
pub mod runlog;
pub mod train;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{Error, Result};
use crate::nca::Genome;
use crate::sim::episode::{evaluate_genome, EvalSettings, FitnessReport};
use crate::task::Task;

/// Worker pool with `jobs` threads (all cores when `None`).
pub fn thread_pool(jobs: Option<usize>) -> Result<ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::invalid("jobs must be at least 1"));
        }
        builder = builder.num_threads(j);
    }
    builder
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

/// Evaluates every candidate on the same episodes; results keep input order.
pub fn evaluate_population(
    pool: &ThreadPool,
    candidates: &[Vec<f64>],
    task: Task,
    episode_seed: u64,
    settings: &EvalSettings,
) -> Result<Vec<FitnessReport>> {
    pool.install(|| {
        candidates
            .par_iter()
            .map(|x| evaluate_genome(&Genome::new(x.clone())?, task, episode_seed, settings))
            .collect()
    })
}
