//! Covariance matrix adaptation evolution strategy, maximizing.
//!
//! Standard (μ/μ_w, λ) formulation with cumulative step-size adaptation and
//! combined rank-one / rank-μ covariance updates. Strategy constants:
//!
//! ```text
//! μ      = ⌊λ/2⌋
//! w_i    ∝ ln((λ+1)/2) − ln i,  i = 1..μ,  Σ w_i = 1
//! μ_eff  = 1 / Σ w_i²
//! c_σ    = (μ_eff + 2) / (n + μ_eff + 5)
//! d_σ    = 1 + 2·max(0, √((μ_eff − 1)/(n + 1)) − 1) + c_σ
//! c_c    = (4 + μ_eff/n) / (n + 4 + 2μ_eff/n)
//! c_1    = 2 / ((n + 1.3)² + μ_eff)
//! c_μ    = min(1 − c_1, 2(μ_eff − 2 + 1/μ_eff) / ((n + 2)² + μ_eff))
//! E‖N(0,I)‖ ≈ √n (1 − 1/(4n) + 1/(21n²))
//! ```
//!
//! The eigendecomposition `C = B·D²·Bᵀ` used for sampling is refreshed every
//! `⌈1 / (10·(c_1 + c_μ)·n)⌉` generations. Eigenvalues below `1e-20` are
//! floored and `C` is rebuilt from the repaired factors.

use std::io::{Read, Write};

use faer::linalg::matmul::matmul;
use faer::{Mat, Parallelism, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::binio::{BinReader, BinWriter};
use crate::error::{Error, Result};

const EIGEN_FLOOR: f64 = 1e-20;
const CHECKPOINT_MAGIC: &[u8; 8] = b"NCRSCMA\0";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CmaConfig {
    pub dimension: usize,
    pub population: usize,
    pub sigma0: f64,
    /// Defaults to the origin when `None`.
    pub initial_mean: Option<Vec<f64>>,
    pub seed: u64,
}

impl CmaConfig {
    pub fn new(dimension: usize, population: usize, sigma0: f64, seed: u64) -> Self {
        Self {
            dimension,
            population,
            sigma0,
            initial_mean: None,
            seed,
        }
    }

    pub fn with_mean(mut self, mean: Vec<f64>) -> Self {
        self.initial_mean = Some(mean);
        self
    }

    /// `4 + ⌊3 ln n⌋`.
    pub fn default_population(dimension: usize) -> usize {
        4 + (3.0 * (dimension as f64).ln()).floor() as usize
    }
}

/// Derived strategy constants.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyParams {
    pub dimension: usize,
    pub population: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
    pub eigen_interval: u64,
}

impl StrategyParams {
    pub fn new(dimension: usize, population: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::invalid("CMA-ES dimension must be positive"));
        }
        if population < 2 {
            return Err(Error::invalid(format!("population must be at least 2, got {population}")));
        }
        let n = dimension as f64;
        let mu = population / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((population as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        let eigen_interval = (1.0 / (10.0 * (c_1 + c_mu) * n)).ceil().max(1.0) as u64;
        Ok(Self {
            dimension,
            population,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            eigen_interval,
        })
    }
}

/// Full optimizer state. `ask`/`tell` must alternate.
#[derive(Clone, Debug)]
pub struct CmaState {
    params: StrategyParams,
    mean: Vec<f64>,
    sigma: f64,
    cov: Mat<f64>,
    basis: Mat<f64>,
    scales: Vec<f64>,
    path_sigma: Vec<f64>,
    path_c: Vec<f64>,
    generation: u64,
    eigen_generation: u64,
    eigen_refreshes: u64,
    seed: u64,
    rng: ChaCha8Rng,
}

impl CmaState {
    pub fn new(config: &CmaConfig) -> Result<Self> {
        let params = StrategyParams::new(config.dimension, config.population)?;
        if !(config.sigma0 > 0.0 && config.sigma0.is_finite()) {
            return Err(Error::invalid(format!("initial step size must be positive, got {}", config.sigma0)));
        }
        let n = config.dimension;
        let mean = match &config.initial_mean {
            Some(m) if m.len() != n => {
                return Err(Error::invalid(format!("initial mean has length {}, expected {n}", m.len())))
            }
            Some(m) if m.iter().any(|v| !v.is_finite()) => return Err(Error::invalid("initial mean is not finite")),
            Some(m) => m.clone(),
            None => vec![0.0; n],
        };
        Ok(Self {
            params,
            mean,
            sigma: config.sigma0,
            cov: Mat::identity(n, n),
            basis: Mat::identity(n, n),
            scales: vec![1.0; n],
            path_sigma: vec![0.0; n],
            path_c: vec![0.0; n],
            generation: 0,
            eigen_generation: 0,
            eigen_refreshes: 0,
            seed: config.seed,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    pub fn params(&self) -> &StrategyParams {
        &self.params
    }

    pub fn dimension(&self) -> usize {
        self.params.dimension
    }

    pub fn population(&self) -> usize {
        self.params.population
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn covariance(&self) -> &Mat<f64> {
        &self.cov
    }

    pub fn eigen_basis(&self) -> &Mat<f64> {
        &self.basis
    }

    /// Square roots of the eigenvalues of `C` at the last refresh.
    pub fn eigen_scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn eigen_refreshes(&self) -> u64 {
        self.eigen_refreshes
    }

    /// Forces an eigendecomposition of the current covariance.
    pub fn refresh_eigen(&mut self) {
        let n = self.dimension();
        let evd = self.cov.selfadjoint_eigendecomposition(Side::Lower);
        let eigvals = evd.s().column_vector();
        let mut repaired = false;
        for i in 0..n {
            let mut v = eigvals.read(i);
            if !(v >= EIGEN_FLOOR) {
                v = EIGEN_FLOOR;
                repaired = true;
            }
            self.scales[i] = v.sqrt();
        }
        self.basis = evd.u().to_owned();
        if repaired {
            log::warn!("covariance lost positive definiteness; eigenvalues floored at {EIGEN_FLOOR:e}");
            let mut scaled = self.basis.clone();
            for j in 0..n {
                let s2 = self.scales[j] * self.scales[j];
                for v in scaled.col_as_slice_mut(j) {
                    *v *= s2;
                }
            }
            matmul(
                self.cov.as_mut(),
                scaled.as_ref(),
                self.basis.transpose(),
                None,
                1.0,
                Parallelism::None,
            );
            symmetrize(&mut self.cov);
        }
        self.eigen_generation = self.generation;
        self.eigen_refreshes += 1;
    }

    fn eigen_is_stale(&self) -> bool {
        self.generation > self.eigen_generation
            && self.generation - self.eigen_generation >= self.params.eigen_interval
    }

    /// Samples `λ` candidates `m + σ·B·D·z` with `z ~ N(0, I)`.
    pub fn ask(&mut self) -> Vec<Vec<f64>> {
        if self.eigen_is_stale() {
            self.refresh_eigen();
        }
        let n = self.dimension();
        let lambda = self.population();
        let mut z = Mat::<f64>::zeros(n, lambda);
        for k in 0..lambda {
            for (i, v) in z.col_as_slice_mut(k).iter_mut().enumerate() {
                let s: f64 = StandardNormal.sample(&mut self.rng);
                *v = s * self.scales[i];
            }
        }
        let mut y = Mat::<f64>::zeros(n, lambda);
        matmul(y.as_mut(), self.basis.as_ref(), z.as_ref(), None, 1.0, Parallelism::None);
        (0..lambda)
            .map(|k| {
                y.col_as_slice(k)
                    .iter()
                    .zip(&self.mean)
                    .map(|(yi, mi)| mi + self.sigma * yi)
                    .collect()
            })
            .collect()
    }

    /// Updates the distribution from candidates and their fitness (higher is
    /// better). Ties keep their sampling order.
    pub fn tell(&mut self, candidates: &[Vec<f64>], fitness: &[f64]) -> Result<()> {
        if let Some(i) = fitness.iter().position(|f| f.is_nan()) {
            return Err(Error::invalid(format!("fitness of candidate {i} is NaN")));
        }
        if fitness.len() != candidates.len() {
            return Err(Error::invalid("candidate and fitness counts differ"));
        }
        let mut order: Vec<usize> = (0..fitness.len()).collect();
        order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]));
        self.tell_ranked(candidates, &order)
    }

    /// Updates the distribution from an explicit ranking, best first.
    pub fn tell_ranked(&mut self, candidates: &[Vec<f64>], ranking: &[usize]) -> Result<()> {
        let n = self.dimension();
        let lambda = self.population();
        if candidates.len() != lambda || ranking.len() != lambda {
            return Err(Error::invalid(format!(
                "expected {lambda} ranked candidates, got {} candidates and {} ranks",
                candidates.len(),
                ranking.len()
            )));
        }
        let mut seen = vec![false; lambda];
        for &r in ranking {
            if r >= lambda || std::mem::replace(&mut seen[r], true) {
                return Err(Error::invalid("ranking is not a permutation of the candidates"));
            }
        }
        if let Some(c) = candidates.iter().find(|c| c.len() != n) {
            return Err(Error::invalid(format!("candidate has length {}, expected {n}", c.len())));
        }

        let p = &self.params;
        let mu = p.mu;

        // Selected steps y_i = (x_i − m)/σ scaled by √(c_μ w_i), plus the
        // rank-one column √c_1·p_c appended after p_c is updated.
        let mut steps = Mat::<f64>::zeros(n, mu + 1);
        let mut y_w = vec![0.0; n];
        for (i, &idx) in ranking.iter().take(mu).enumerate() {
            let w = p.weights[i];
            let sw = (p.c_mu * w).sqrt();
            let col = steps.col_as_slice_mut(i);
            for j in 0..n {
                let y = (candidates[idx][j] - self.mean[j]) / self.sigma;
                col[j] = sw * y;
                y_w[j] += w * y;
            }
        }

        for (m, y) in self.mean.iter_mut().zip(&y_w) {
            *m += self.sigma * y;
        }

        // C^{-1/2} y_w = B D^{-1} Bᵀ y_w
        let mut tmp = Mat::<f64>::zeros(n, 1);
        let yw_col = faer::col::from_slice(&y_w);
        matmul(
            tmp.as_mut(),
            self.basis.transpose(),
            yw_col.as_2d(),
            None,
            1.0,
            Parallelism::None,
        );
        for (i, v) in tmp.col_as_slice_mut(0).iter_mut().enumerate() {
            *v /= self.scales[i];
        }
        let mut whitened = Mat::<f64>::zeros(n, 1);
        matmul(whitened.as_mut(), self.basis.as_ref(), tmp.as_ref(), None, 1.0, Parallelism::None);

        let cs = p.c_sigma;
        let ks = (cs * (2.0 - cs) * p.mu_eff).sqrt();
        for (ps, w) in self.path_sigma.iter_mut().zip(whitened.col_as_slice(0)) {
            *ps = (1.0 - cs) * *ps + ks * w;
        }
        let ps_norm = norm(&self.path_sigma);
        let g = (self.generation + 1) as f64;
        let h_sigma = ps_norm / (1.0 - (1.0 - cs).powf(2.0 * g)).sqrt() < (1.4 + 2.0 / (n as f64 + 1.0)) * p.chi_n;

        let cc = p.c_c;
        let kc = if h_sigma { (cc * (2.0 - cc) * p.mu_eff).sqrt() } else { 0.0 };
        for (pc, y) in self.path_c.iter_mut().zip(&y_w) {
            *pc = (1.0 - cc) * *pc + kc * y;
        }

        let delta_h = if h_sigma { 0.0 } else { cc * (2.0 - cc) };
        let decay = 1.0 - p.c_1 - p.c_mu + p.c_1 * delta_h;
        let rank_one_scale = p.c_1.sqrt();
        for (dst, src) in steps.col_as_slice_mut(mu).iter_mut().zip(&self.path_c) {
            *dst = rank_one_scale * src;
        }
        for j in 0..n {
            for v in self.cov.col_as_slice_mut(j) {
                *v *= decay;
            }
        }
        matmul(
            self.cov.as_mut(),
            steps.as_ref(),
            steps.transpose(),
            Some(1.0),
            1.0,
            Parallelism::None,
        );
        symmetrize(&mut self.cov);

        self.sigma *= ((cs / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
        self.generation += 1;
        Ok(())
    }

    pub fn write_checkpoint<W: Write>(&self, out: &mut BinWriter<W>) -> std::io::Result<()> {
        out.bytes(CHECKPOINT_MAGIC)?;
        out.u32(CHECKPOINT_VERSION)?;
        out.len(self.dimension())?;
        out.len(self.population())?;
        out.u64(self.seed)?;
        out.f64(self.sigma)?;
        out.u64(self.generation)?;
        out.u64(self.eigen_generation)?;
        out.u64(self.eigen_refreshes)?;
        out.raw_f64s(&self.mean)?;
        out.raw_f64s(&self.path_sigma)?;
        out.raw_f64s(&self.path_c)?;
        out.raw_f64s(&self.scales)?;
        for j in 0..self.dimension() {
            out.raw_f64s(self.cov.col_as_slice(j))?;
        }
        for j in 0..self.dimension() {
            out.raw_f64s(self.basis.col_as_slice(j))?;
        }
        out.bytes(&self.rng.get_seed())?;
        out.u64(self.rng.get_stream())?;
        out.u128(self.rng.get_word_pos())
    }

    pub fn read_checkpoint<R: Read>(input: &mut BinReader<R>) -> std::io::Result<Self> {
        input.expect(CHECKPOINT_MAGIC)?;
        let version = input.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("unsupported CMA checkpoint version {version}"),
            ));
        }
        let n = input.len(1 << 20)?;
        let lambda = input.len(1 << 24)?;
        let params = StrategyParams::new(n, lambda)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
        let seed = input.u64()?;
        let sigma = input.f64()?;
        let generation = input.u64()?;
        let eigen_generation = input.u64()?;
        let eigen_refreshes = input.u64()?;
        let mean = input.raw_f64s(n)?;
        let path_sigma = input.raw_f64s(n)?;
        let path_c = input.raw_f64s(n)?;
        let scales = input.raw_f64s(n)?;
        let mut cov = Mat::<f64>::zeros(n, n);
        for j in 0..n {
            cov.col_as_slice_mut(j).copy_from_slice(&input.raw_f64s(n)?);
        }
        let mut basis = Mat::<f64>::zeros(n, n);
        for j in 0..n {
            basis.col_as_slice_mut(j).copy_from_slice(&input.raw_f64s(n)?);
        }
        let mut rng = ChaCha8Rng::from_seed(input.array::<32>()?);
        rng.set_stream(input.u64()?);
        rng.set_word_pos(input.u128()?);
        Ok(Self {
            params,
            mean,
            sigma,
            cov,
            basis,
            scales,
            path_sigma,
            path_c,
            generation,
            eigen_generation,
            eigen_refreshes,
            seed,
            rng,
        })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn symmetrize(m: &mut Mat<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m.read(i, j) + m.read(j, i));
            m.write(i, j, avg);
            m.write(j, i, avg);
        }
    }
}
