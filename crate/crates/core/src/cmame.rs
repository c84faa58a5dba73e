//! MAP-Elites archive driven by CMA-ES improvement emitters.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::io::{Read, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binio::{BinReader, BinWriter};
use crate::cmaes::{CmaConfig, CmaState};
use crate::error::{Error, Result};
use crate::morphology::{validate, Morphology};
use crate::rng;
use crate::task::Task;

/// Generations without an archive gain before an emitter may restart.
pub const STUCK_LIMIT: u64 = 500;
pub const DEFAULT_EMITTERS: usize = 15;

/// Behaviour descriptor of a grown body.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeatureDescriptor {
    /// Light/ball and target sensors together.
    pub sensors: u32,
    pub actuators: u32,
    pub body_parts: u32,
}

impl FeatureDescriptor {
    pub fn is_feasible(&self, grid_area: usize) -> bool {
        self.body_parts >= 1
            && self.sensors + self.actuators <= self.body_parts
            && self.body_parts as usize <= grid_area
    }
}

/// Descriptor of a morphology, or `None` when the body is not usable.
pub fn describe(morphology: &Morphology, grid_area: usize) -> Option<FeatureDescriptor> {
    let task = match morphology.n_type_channels() {
        3 => Task::Lc,
        4 => Task::Cbt,
        _ => return None,
    };
    if !validate(morphology, task).ok()?.valid {
        return None;
    }
    let counts = morphology.counts();
    let d = FeatureDescriptor {
        sensors: counts.sensors() as u32,
        actuators: counts.wheels as u32,
        body_parts: counts.total() as u32,
    };
    d.is_feasible(grid_area).then_some(d)
}

/// Number of feasible `(sensors, actuators, body_parts)` triples on a grid
/// with `grid_area` cells: `Σ_{b=1}^{A} (b+1)(b+2)/2`.
pub fn total_configurations(grid_area: usize) -> usize {
    (1..=grid_area).map(|b| (b + 1) * (b + 2) / 2).sum()
}

/// Brute-force count of the same triples.
pub fn enumerate_configurations(grid_area: usize) -> usize {
    let a = grid_area as u32;
    let mut n = 0;
    for b in 0..=a {
        for s in 0..=a {
            for w in 0..=a {
                let d = FeatureDescriptor {
                    sensors: s,
                    actuators: w,
                    body_parts: b,
                };
                n += usize::from(d.is_feasible(grid_area));
            }
        }
    }
    n
}

/// Archive cell coordinates that can be written to checkpoints.
pub trait CellKey: Ord + Clone + Debug {
    const ARITY: usize;
    fn coords(&self) -> Vec<u64>;
    fn from_coords(coords: &[u64]) -> Option<Self>;
}

impl CellKey for FeatureDescriptor {
    const ARITY: usize = 3;

    fn coords(&self) -> Vec<u64> {
        vec![self.sensors.into(), self.actuators.into(), self.body_parts.into()]
    }

    fn from_coords(c: &[u64]) -> Option<Self> {
        match *c {
            [s, a, b] => Some(Self {
                sensors: s.try_into().ok()?,
                actuators: a.try_into().ok()?,
                body_parts: b.try_into().ok()?,
            }),
            _ => None,
        }
    }
}

impl CellKey for (usize, usize) {
    const ARITY: usize = 2;

    fn coords(&self) -> Vec<u64> {
        vec![self.0 as u64, self.1 as u64]
    }

    fn from_coords(c: &[u64]) -> Option<Self> {
        match *c {
            [a, b] => Some((a.try_into().ok()?, b.try_into().ok()?)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Elite<D> {
    pub genome: Vec<f64>,
    pub fitness: f64,
    pub descriptor: D,
    pub generation: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InsertOutcome {
    NewCell,
    /// Fitness gain over the replaced elite.
    Improved(f64),
    Rejected,
}

impl InsertOutcome {
    pub fn is_gain(self) -> bool {
        !matches!(self, InsertOutcome::Rejected)
    }
}

/// One elite per descriptor; replacement requires strictly higher fitness.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive<D: Ord> {
    cells: BTreeMap<D, Elite<D>>,
    total_configurations: usize,
}

impl<D: Ord + Clone> Archive<D> {
    pub fn new(total_configurations: usize) -> Self {
        Self {
            cells: BTreeMap::new(),
            total_configurations,
        }
    }

    pub fn total_configurations(&self) -> usize {
        self.total_configurations
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, descriptor: &D) -> Option<&Elite<D>> {
        self.cells.get(descriptor)
    }

    /// Elites in descriptor order.
    pub fn elites(&self) -> impl Iterator<Item = &Elite<D>> {
        self.cells.values()
    }

    pub fn best(&self) -> Option<&Elite<D>> {
        self.cells.values().fold(None, |best: Option<&Elite<D>>, e| match best {
            Some(b) if b.fitness >= e.fitness => Some(b),
            _ => Some(e),
        })
    }

    pub fn insert(&mut self, genome: &[f64], fitness: f64, descriptor: D, generation: u64) -> Result<InsertOutcome> {
        if !fitness.is_finite() {
            return Err(Error::invalid(format!("elite fitness must be finite, got {fitness}")));
        }
        let elite = Elite {
            genome: genome.to_vec(),
            fitness,
            descriptor: descriptor.clone(),
            generation,
        };
        Ok(match self.cells.get_mut(&descriptor) {
            None => {
                self.cells.insert(descriptor, elite);
                InsertOutcome::NewCell
            }
            Some(old) if fitness > old.fitness => {
                let gain = fitness - old.fitness;
                *old = elite;
                InsertOutcome::Improved(gain)
            }
            Some(_) => InsertOutcome::Rejected,
        })
    }

    pub fn metrics(&self) -> QdMetrics {
        qd_metrics(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QdMetrics {
    pub cells_filled_pct: f64,
    pub qd_score: f64,
}

pub fn qd_metrics<D: Ord + Clone>(archive: &Archive<D>) -> QdMetrics {
    let total = archive.total_configurations.max(1) as f64;
    QdMetrics {
        cells_filled_pct: archive.len() as f64 / total * 100.0,
        qd_score: archive.elites().fold(0.0, |acc, e| acc + e.fitness) / total,
    }
}

/// Result of evaluating one candidate: its fitness and, for usable
/// solutions, the archive cell it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation<D> {
    pub fitness: f64,
    pub descriptor: Option<D>,
}

/// Improvement ranking, best first: new cells by fitness, then improvements
/// by gain, then everything else by fitness. `None` marks candidates that
/// could not be archived. Ties keep sampling order.
pub fn improvement_ranking(fitness: &[f64], outcomes: &[Option<InsertOutcome>]) -> Vec<usize> {
    let key = |i: usize| -> (u8, f64) {
        match outcomes[i] {
            Some(InsertOutcome::NewCell) => (0, fitness[i]),
            Some(InsertOutcome::Improved(gain)) => (1, gain),
            _ => (2, fitness[i]),
        }
    };
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| {
        let (ba, ka) = key(a);
        let (bb, kb) = key(b);
        ba.cmp(&bb).then(kb.total_cmp(&ka))
    });
    order
}

#[derive(Clone, Debug)]
pub struct Emitter {
    id: usize,
    cma: CmaState,
    stuck: u64,
    restarts: u64,
}

impl Emitter {
    pub fn new(id: usize, cma: CmaState) -> Self {
        Self {
            id,
            cma,
            stuck: 0,
            restarts: 0,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn cma(&self) -> &CmaState {
        &self.cma
    }

    pub fn stuck_counter(&self) -> u64 {
        self.stuck
    }

    pub fn restarts(&self) -> u64 {
        self.restarts
    }

    pub fn set_stuck_counter(&mut self, stuck: u64) {
        self.stuck = stuck;
    }

    pub fn ask(&mut self) -> Vec<Vec<f64>> {
        self.cma.ask()
    }

    /// Feeds the improvement ranking to the inner CMA-ES and updates the
    /// stuck counter. Returns the ranking used.
    pub fn tell(
        &mut self,
        candidates: &[Vec<f64>],
        fitness: &[f64],
        outcomes: &[Option<InsertOutcome>],
    ) -> Result<Vec<usize>> {
        if fitness.len() != candidates.len() || outcomes.len() != candidates.len() {
            return Err(Error::invalid("candidate, fitness and outcome counts differ"));
        }
        if let Some(i) = fitness.iter().position(|f| f.is_nan()) {
            return Err(Error::invalid(format!("fitness of candidate {i} is NaN")));
        }
        let ranking = improvement_ranking(fitness, outcomes);
        self.cma.tell_ranked(candidates, &ranking)?;
        if outcomes.iter().flatten().any(|o| o.is_gain()) {
            self.stuck = 0;
        } else {
            self.stuck += 1;
        }
        Ok(ranking)
    }

    /// Whether the restart rule fires: more elites than emitters and stuck
    /// for more than [`STUCK_LIMIT`] generations.
    pub fn should_restart(&self, archive_len: usize, n_emitters: usize) -> bool {
        archive_len > n_emitters && self.stuck > STUCK_LIMIT
    }

    /// Restarts from a uniformly drawn elite if the rule fires.
    pub fn maybe_restart<D: Ord + Clone>(
        &mut self,
        archive: &Archive<D>,
        n_emitters: usize,
        sigma0: f64,
        seed: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<bool> {
        if !self.should_restart(archive.len(), n_emitters) {
            return Ok(false);
        }
        let pick = rng.gen_range(0..archive.len());
        let elite = archive.elites().nth(pick).expect("index below archive size");
        self.restarts += 1;
        let config = CmaConfig::new(self.cma.dimension(), self.cma.population(), sigma0, seed)
            .with_mean(elite.genome.clone());
        self.cma = CmaState::new(&config)?;
        self.stuck = 0;
        Ok(true)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CmaMeConfig {
    pub dimension: usize,
    pub emitters: usize,
    pub population: usize,
    pub sigma0: f64,
    pub seed: u64,
    pub total_configurations: usize,
}

/// What happened in one emitter generation.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationSummary {
    pub generation: u64,
    pub emitter: usize,
    pub evaluations: u64,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub new_cells: usize,
    pub improvements: usize,
    pub restarted: bool,
    pub sigma: f64,
    pub archive_size: usize,
    pub metrics: QdMetrics,
}

/// Round-robin CMA-ME: each generation asks one emitter, evaluates, inserts
/// usable candidates, tells the emitter and applies the restart rule.
#[derive(Clone, Debug)]
pub struct CmaMe<D: Ord> {
    config: CmaMeConfig,
    emitters: Vec<Emitter>,
    archive: Archive<D>,
    rng: ChaCha8Rng,
    generation: u64,
    evaluations: u64,
}

impl<D: CellKey> CmaMe<D> {
    pub fn new(config: CmaMeConfig) -> Result<Self> {
        if config.emitters == 0 {
            return Err(Error::invalid("at least one emitter is required"));
        }
        let emitters = (0..config.emitters)
            .map(|i| {
                let seed = rng::derive_seed(config.seed, &[i as u64, 0]);
                CmaState::new(&CmaConfig::new(config.dimension, config.population, config.sigma0, seed))
                    .map(|cma| Emitter::new(i, cma))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            archive: Archive::new(config.total_configurations),
            rng: rng::stream(config.seed, &[u64::MAX]),
            emitters,
            config,
            generation: 0,
            evaluations: 0,
        })
    }

    pub fn config(&self) -> &CmaMeConfig {
        &self.config
    }

    pub fn archive(&self) -> &Archive<D> {
        &self.archive
    }

    pub fn emitters(&self) -> &[Emitter] {
        &self.emitters
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    /// Runs one generation with `evaluate`, which must return one
    /// evaluation per candidate in order.
    pub fn step<F>(&mut self, evaluate: F) -> Result<GenerationSummary>
    where
        F: FnOnce(&[Vec<f64>]) -> Result<Vec<Evaluation<D>>>,
    {
        let idx = (self.generation % self.emitters.len() as u64) as usize;
        let candidates = self.emitters[idx].ask();
        let evals = evaluate(&candidates)?;
        if evals.len() != candidates.len() {
            return Err(Error::invalid(format!(
                "evaluator returned {} results for {} candidates",
                evals.len(),
                candidates.len()
            )));
        }
        let fitness: Vec<f64> = evals.iter().map(|e| e.fitness).collect();
        let mut outcomes = Vec::with_capacity(evals.len());
        for (x, e) in candidates.iter().zip(&evals) {
            outcomes.push(match &e.descriptor {
                Some(d) => Some(self.archive.insert(x, e.fitness, d.clone(), self.generation)?),
                None => None,
            });
        }
        self.emitters[idx].tell(&candidates, &fitness, &outcomes)?;
        let restart_seed = {
            let e = &self.emitters[idx];
            rng::derive_seed(self.config.seed, &[idx as u64, e.restarts() + 1])
        };
        let n_emitters = self.emitters.len();
        let restarted = self.emitters[idx].maybe_restart(
            &self.archive,
            n_emitters,
            self.config.sigma0,
            restart_seed,
            &mut self.rng,
        )?;
        if restarted {
            log::info!("emitter {idx} restarted at generation {}", self.generation);
        }
        self.generation += 1;
        self.evaluations += candidates.len() as u64;
        let count = |f: fn(&InsertOutcome) -> bool| outcomes.iter().flatten().filter(|o| f(o)).count();
        Ok(GenerationSummary {
            generation: self.generation,
            emitter: idx,
            evaluations: self.evaluations,
            best_fitness: fitness.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_fitness: fitness.iter().sum::<f64>() / fitness.len().max(1) as f64,
            new_cells: count(|o| matches!(o, InsertOutcome::NewCell)),
            improvements: count(|o| matches!(o, InsertOutcome::Improved(_))),
            restarted,
            sigma: self.emitters[idx].cma().sigma(),
            archive_size: self.archive.len(),
            metrics: self.archive.metrics(),
        })
    }

    pub fn write_checkpoint<W: Write>(&self, out: &mut BinWriter<W>) -> std::io::Result<()> {
        out.bytes(b"NCRSCME\0")?;
        out.u32(1)?;
        out.len(self.config.dimension)?;
        out.len(self.config.emitters)?;
        out.len(self.config.population)?;
        out.f64(self.config.sigma0)?;
        out.u64(self.config.seed)?;
        out.len(self.config.total_configurations)?;
        out.u64(self.generation)?;
        out.u64(self.evaluations)?;
        out.bytes(&self.rng.get_seed())?;
        out.u64(self.rng.get_stream())?;
        out.u128(self.rng.get_word_pos())?;
        for e in &self.emitters {
            out.u64(e.stuck)?;
            out.u64(e.restarts)?;
            e.cma.write_checkpoint(out)?;
        }
        write_archive(&self.archive, out)
    }

    pub fn read_checkpoint<R: Read>(input: &mut BinReader<R>) -> std::io::Result<Self> {
        input.expect(b"NCRSCME\0")?;
        let version = input.u32()?;
        if version != 1 {
            return Err(bad_data(format!("unsupported CMA-ME checkpoint version {version}")));
        }
        let config = CmaMeConfig {
            dimension: input.len(1 << 20)?,
            emitters: input.len(1 << 16)?,
            population: input.len(1 << 24)?,
            sigma0: input.f64()?,
            seed: input.u64()?,
            total_configurations: input.len(usize::MAX)?,
        };
        let generation = input.u64()?;
        let evaluations = input.u64()?;
        let mut rng = ChaCha8Rng::from_seed(input.array::<32>()?);
        rng.set_stream(input.u64()?);
        rng.set_word_pos(input.u128()?);
        let mut emitters = Vec::with_capacity(config.emitters);
        for id in 0..config.emitters {
            let stuck = input.u64()?;
            let restarts = input.u64()?;
            let cma = CmaState::read_checkpoint(input)?;
            if cma.dimension() != config.dimension || cma.population() != config.population {
                return Err(bad_data("emitter shape does not match checkpoint header".into()));
            }
            emitters.push(Emitter {
                id,
                cma,
                stuck,
                restarts,
            });
        }
        let archive = read_archive(input, config.total_configurations, config.dimension)?;
        Ok(Self {
            config,
            emitters,
            archive,
            rng,
            generation,
            evaluations,
        })
    }
}

fn bad_data(msg: String) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg)
}

pub fn write_archive<D: CellKey, W: Write>(archive: &Archive<D>, out: &mut BinWriter<W>) -> std::io::Result<()> {
    out.len(archive.len())?;
    for e in archive.elites() {
        for c in e.descriptor.coords() {
            out.u64(c)?;
        }
        out.f64(e.fitness)?;
        out.u64(e.generation)?;
        out.f64s(&e.genome)?;
    }
    Ok(())
}

pub fn read_archive<D: CellKey, R: Read>(
    input: &mut BinReader<R>,
    total_configurations: usize,
    dimension: usize,
) -> std::io::Result<Archive<D>> {
    let n = input.len(1 << 24)?;
    let mut archive = Archive::new(total_configurations);
    for _ in 0..n {
        let coords = (0..D::ARITY).map(|_| input.u64()).collect::<std::io::Result<Vec<_>>>()?;
        let descriptor = D::from_coords(&coords).ok_or_else(|| bad_data(format!("bad cell {coords:?}")))?;
        let fitness = input.f64()?;
        let generation = input.u64()?;
        let genome = input.f64s(dimension)?;
        let elite = Elite {
            genome,
            fitness,
            descriptor: descriptor.clone(),
            generation,
        };
        if archive.cells.insert(descriptor, elite).is_some() {
            return Err(bad_data("duplicate archive cell".into()));
        }
    }
    Ok(archive)
}
