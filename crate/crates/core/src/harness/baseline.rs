//! Random-genome baseline: the fitness distribution of untrained networks
//! drawn like the optimizer's first population.

use std::fmt;

use rand_distr::{Distribution, Normal};
use rayon::ThreadPool;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::harness::evaluate_population;
use crate::harness::train::training_episode_seed;
use crate::nca::genome_length;
use crate::rng;

const GENOME_TAG: u64 = 0xBA5E;

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineStats {
    pub genomes: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub max: f64,
    pub valid_rate: f64,
}

impl fmt::Display for BaselineStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "genomes: {}", self.genomes)?;
        writeln!(f, "mean: {:.6}", self.mean)?;
        writeln!(f, "std: {:.6}", self.std)?;
        writeln!(f, "max: {:.6}", self.max)?;
        writeln!(f, "valid_rate: {:.4}", self.valid_rate)
    }
}

/// Genome `index` of the baseline sample for `seed`: entries i.i.d.
/// `N(0, sigma²)`.
pub fn baseline_genome(seed: u64, index: usize, dimension: usize, sigma: f64) -> Vec<f64> {
    let mut r = rng::stream(seed, &[GENOME_TAG, index as u64]);
    let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
    (0..dimension).map(|_| normal.sample(&mut r)).collect()
}

/// Samples `n` genomes with the config's `sigma0` and evaluates each on the
/// run's training episodes.
pub fn run_baseline(config: &RunConfig, n: usize, pool: &ThreadPool) -> Result<BaselineStats> {
    if n == 0 {
        return Err(Error::invalid("baseline needs at least one genome"));
    }
    let dim = genome_length(&config.task.layout());
    let settings = config.eval_settings(config.train_episodes);
    let episode_seed = training_episode_seed(config.seed);
    let mut fitness = Vec::with_capacity(n);
    let mut valid = 0;
    for chunk_start in (0..n).step_by(256) {
        let chunk: Vec<Vec<f64>> = (chunk_start..n.min(chunk_start + 256))
            .map(|i| baseline_genome(config.seed, i, dim, config.sigma0))
            .collect();
        for r in evaluate_population(pool, &chunk, config.task, episode_seed, &settings)? {
            fitness.push(r.fitness);
            valid += usize::from(r.valid);
        }
    }
    let mean = fitness.iter().sum::<f64>() / n as f64;
    let var = fitness.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n as f64;
    Ok(BaselineStats {
        genomes: n,
        mean,
        std: var.sqrt(),
        max: fitness.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        valid_rate: valid as f64 / n as f64,
    })
}
