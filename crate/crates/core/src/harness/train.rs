//! Training runs with checkpoint/resume.
//!
//! A run directory holds `config.txt`, `log.csv`, `best.genome`,
//! `checkpoint.bin` and an `archive/` of elites. Plain CMA-ES keeps a passive
//! archive of every valid candidate it evaluates; it never feeds back into
//! the search.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::ThreadPool;

use crate::binio::{BinReader, BinWriter};
use crate::cmaes::{CmaConfig, CmaState};
use crate::cmame::{read_archive, write_archive, Archive, CmaMe, CmaMeConfig, Evaluation, FeatureDescriptor};
use crate::config::{Optimizer, RunConfig};
use crate::error::{Error, IoContext, Result};
use crate::genome_io::GenomeFile;
use crate::harness::archive_io::save_archive;
use crate::harness::evaluate_population;
use crate::harness::runlog::{read_log, LogRow, LogWriter};
use crate::nca::{genome_length, Genome};
use crate::rng;
use crate::sim::episode::FitnessReport;

pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "log.csv";
pub const BEST_GENOME_FILE: &str = "best.genome";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const ARCHIVE_DIR: &str = "archive";

const CHECKPOINT_MAGIC: &[u8; 8] = b"NCRSRUN\0";
const CHECKPOINT_VERSION: u32 = 1;
const TRAIN_EPISODE_TAG: u64 = 0x7EA1;
const OPTIMIZER_TAG: u64 = 0x0C7A;

/// Master seed of the training episodes, fixed for the whole run.
pub fn training_episode_seed(run_seed: u64) -> u64 {
    rng::derive_seed(run_seed, &[TRAIN_EPISODE_TAG])
}

fn optimizer_seed(run_seed: u64) -> u64 {
    rng::derive_seed(run_seed, &[OPTIMIZER_TAG])
}

enum Engine {
    CmaEs {
        cma: CmaState,
        archive: Archive<FeatureDescriptor>,
        evaluations: u64,
    },
    CmaMe(CmaMe<FeatureDescriptor>),
}

impl Engine {
    fn generation(&self) -> u64 {
        match self {
            Engine::CmaEs { cma, .. } => cma.generation(),
            Engine::CmaMe(me) => me.generation(),
        }
    }

    fn archive(&self) -> &Archive<FeatureDescriptor> {
        match self {
            Engine::CmaEs { archive, .. } => archive,
            Engine::CmaMe(me) => me.archive(),
        }
    }
}

/// Summary returned by [`Trainer::run`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<LogRow>,
    pub best_fitness: f64,
    pub best_genome: Option<Vec<f64>>,
    pub archive_size: usize,
}

pub struct Trainer {
    config: RunConfig,
    dir: PathBuf,
    engine: Engine,
    best: Option<(f64, Vec<f64>)>,
    rows: Vec<LogRow>,
    elapsed: f64,
}

impl Trainer {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let dim = genome_length(&config.task.layout());
        let seed = optimizer_seed(config.seed);
        let engine = match config.optimizer {
            Optimizer::CmaEs => Engine::CmaEs {
                cma: CmaState::new(&CmaConfig::new(dim, config.population(), config.sigma0, seed))?,
                archive: Archive::new(config.archive_size()),
                evaluations: 0,
            },
            Optimizer::CmaMe => Engine::CmaMe(CmaMe::new(CmaMeConfig {
                dimension: dim,
                emitters: config.emitters,
                population: config.population(),
                sigma0: config.sigma0,
                seed,
                total_configurations: config.archive_size(),
            })?),
        };
        Ok(Self {
            dir: config.output_dir.clone(),
            config: config.clone(),
            engine,
            best: None,
            rows: Vec::new(),
            elapsed: 0.0,
        })
    }

    /// Reopens a run directory at its last checkpoint. Log rows written after
    /// the checkpoint are discarded.
    pub fn resume(dir: &Path) -> Result<Self> {
        let path = dir.join(CHECKPOINT_FILE);
        let file = File::open(&path).context(|| format!("opening {}", path.display()))?;
        let (mut trainer, keep) = read_checkpoint(&mut BinReader::new(BufReader::new(file)), &path)?;
        trainer.dir = dir.to_path_buf();
        trainer.config.output_dir = dir.to_path_buf();
        let rows = read_log(&dir.join(LOG_FILE))?;
        if rows.len() < keep {
            return Err(Error::format(
                dir.join(LOG_FILE),
                format!("log has {} rows but the checkpoint needs {keep}", rows.len()),
            ));
        }
        trainer.rows = rows.into_iter().take(keep).collect();
        Ok(trainer)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn set_generation_budget(&mut self, generations: u64) {
        self.config.generations = Some(generations);
    }

    pub fn generation(&self) -> u64 {
        self.engine.generation()
    }

    pub fn archive(&self) -> &Archive<FeatureDescriptor> {
        self.engine.archive()
    }

    pub fn log(&self) -> &[LogRow] {
        &self.rows
    }

    fn track_best(&mut self, candidates: &[Vec<f64>], reports: &[FitnessReport]) {
        for (x, r) in candidates.iter().zip(reports) {
            if self.best.as_ref().is_none_or(|(f, _)| r.fitness > *f) {
                self.best = Some((r.fitness, x.clone()));
            }
        }
    }

    /// Runs one generation and returns its log row.
    pub fn step(&mut self, pool: &ThreadPool) -> Result<LogRow> {
        let started = Instant::now();
        let task = self.config.task;
        let episode_seed = training_episode_seed(self.config.seed);
        let settings = self.config.eval_settings(self.config.train_episodes);
        let mut evaluated: Option<(Vec<Vec<f64>>, Vec<FitnessReport>)> = None;
        let (emitter, restarted, sigma, evaluations) = match &mut self.engine {
            Engine::CmaEs {
                cma,
                archive,
                evaluations,
            } => {
                let candidates = cma.ask();
                let reports = evaluate_population(pool, &candidates, task, episode_seed, &settings)?;
                let fitness: Vec<f64> = reports.iter().map(|r| r.fitness).collect();
                cma.tell(&candidates, &fitness)?;
                for (x, r) in candidates.iter().zip(&reports) {
                    if let Some(d) = r.features {
                        archive.insert(x, r.fitness, d, cma.generation() - 1)?;
                    }
                }
                *evaluations += candidates.len() as u64;
                let out = (0, false, cma.sigma(), *evaluations);
                evaluated = Some((candidates, reports));
                out
            }
            Engine::CmaMe(me) => {
                let summary = me.step(|xs| {
                    let reports = evaluate_population(pool, xs, task, episode_seed, &settings)?;
                    let evals = reports
                        .iter()
                        .map(|r| Evaluation {
                            fitness: r.fitness,
                            descriptor: r.features,
                        })
                        .collect();
                    evaluated = Some((xs.to_vec(), reports));
                    Ok(evals)
                })?;
                (summary.emitter, summary.restarted, summary.sigma, summary.evaluations)
            }
        };
        let (candidates, reports) = evaluated.expect("generation evaluated its population");
        self.track_best(&candidates, &reports);
        let n = reports.len().max(1) as f64;
        let metrics = self.engine.archive().metrics();
        self.elapsed += started.elapsed().as_secs_f64();
        let row = LogRow {
            generation: self.engine.generation(),
            evaluations,
            best_fitness: self.best.as_ref().map_or(f64::NEG_INFINITY, |b| b.0),
            generation_best: reports.iter().map(|r| r.fitness).fold(f64::NEG_INFINITY, f64::max),
            mean_fitness: reports.iter().map(|r| r.fitness).sum::<f64>() / n,
            valid_fraction: reports.iter().filter(|r| r.valid).count() as f64 / n,
            sigma,
            emitter,
            restarted,
            archive_size: self.engine.archive().len(),
            qd_score: metrics.qd_score,
            cells_filled_pct: metrics.cells_filled_pct,
            wall_time_s: self.elapsed,
        };
        self.rows.push(row.clone());
        Ok(row)
    }

    /// Trains until the generation budget is reached, writing the log as it
    /// goes and checkpoints periodically and at the end.
    pub fn run(&mut self, pool: &ThreadPool) -> Result<TrainOutcome> {
        std::fs::create_dir_all(&self.dir).context(|| format!("creating output directory {}", self.dir.display()))?;
        let cfg_path = self.dir.join(CONFIG_FILE);
        std::fs::write(&cfg_path, self.config.to_text()).context(|| format!("writing {}", cfg_path.display()))?;
        let mut log = LogWriter::create(&self.dir.join(LOG_FILE), &self.rows)?;
        let budget = self.config.generation_budget();
        while self.engine.generation() < budget {
            let row = self.step(pool)?;
            log.push(&row)?;
            log::info!(
                "gen {} evals {} best {:.5} mean {:.5} valid {:.2} archive {}",
                row.generation,
                row.evaluations,
                row.best_fitness,
                row.mean_fitness,
                row.valid_fraction,
                row.archive_size
            );
            let every = self.config.checkpoint_every;
            if every > 0 && row.generation % every == 0 && row.generation < budget {
                self.save_checkpoint()?;
            }
        }
        self.save_artifacts()?;
        Ok(TrainOutcome {
            log: self.rows.clone(),
            best_fitness: self.best.as_ref().map_or(f64::NEG_INFINITY, |b| b.0),
            best_genome: self.best.as_ref().map(|b| b.1.clone()),
            archive_size: self.engine.archive().len(),
        })
    }

    fn save_artifacts(&self) -> Result<()> {
        let c = &self.config;
        if let Some((_, genome)) = &self.best {
            GenomeFile::new(c.task, c.activation, c.grid_height, c.grid_width, Genome::new(genome.clone())?)?
                .save(&self.dir.join(BEST_GENOME_FILE))?;
        }
        save_archive(
            &self.dir.join(ARCHIVE_DIR),
            self.engine.archive(),
            c.task,
            c.activation,
            (c.grid_height, c.grid_width),
        )?;
        self.save_checkpoint()
    }

    pub fn save_checkpoint(&self) -> Result<()> {
        let path = self.dir.join(CHECKPOINT_FILE);
        let tmp = self.dir.join(format!("{CHECKPOINT_FILE}.tmp"));
        let file = File::create(&tmp).context(|| format!("creating {}", tmp.display()))?;
        let mut out = BinWriter::new(BufWriter::new(file));
        self.write_checkpoint(&mut out)
            .and_then(|_| out.into_inner().flush())
            .context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, &path).context(|| format!("replacing {}", path.display()))
    }

    fn write_checkpoint<W: Write>(&self, out: &mut BinWriter<W>) -> std::io::Result<()> {
        out.bytes(CHECKPOINT_MAGIC)?;
        out.u32(CHECKPOINT_VERSION)?;
        out.str(&self.config.to_text())?;
        out.f64(self.elapsed)?;
        out.len(self.rows.len())?;
        match &self.best {
            Some((f, g)) => {
                out.u32(1)?;
                out.f64(*f)?;
                out.f64s(g)?;
            }
            None => out.u32(0)?,
        }
        match &self.engine {
            Engine::CmaEs {
                cma,
                archive,
                evaluations,
            } => {
                out.u32(0)?;
                out.u64(*evaluations)?;
                cma.write_checkpoint(out)?;
                write_archive(archive, out)
            }
            Engine::CmaMe(me) => {
                out.u32(1)?;
                me.write_checkpoint(out)
            }
        }
    }
}

fn read_checkpoint<R: std::io::Read>(input: &mut BinReader<R>, path: &Path) -> Result<(Trainer, usize)> {
    let io = |e: std::io::Error| Error::format(path, e.to_string());
    input.expect(CHECKPOINT_MAGIC).map_err(io)?;
    let version = input.u32().map_err(io)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let config = RunConfig::parse(&input.str(1 << 20).map_err(io)?)?;
    let dim = genome_length(&config.task.layout());
    let elapsed = input.f64().map_err(io)?;
    let n_rows = input.len(usize::MAX).map_err(io)?;
    let best = match input.u32().map_err(io)? {
        0 => None,
        _ => Some((input.f64().map_err(io)?, input.f64s(dim).map_err(io)?)),
    };
    let engine = match input.u32().map_err(io)? {
        0 => {
            let evaluations = input.u64().map_err(io)?;
            let cma = CmaState::read_checkpoint(input).map_err(io)?;
            let archive = read_archive(input, config.archive_size(), dim).map_err(io)?;
            Engine::CmaEs {
                cma,
                archive,
                evaluations,
            }
        }
        1 => Engine::CmaMe(CmaMe::read_checkpoint(input).map_err(io)?),
        t => return Err(Error::format(path, format!("unknown optimizer tag {t}"))),
    };
    let generation = engine.generation();
    if n_rows as u64 != generation {
        return Err(Error::format(path, format!("{n_rows} log rows recorded at generation {generation}")));
    }
    let trainer = Trainer {
        dir: config.output_dir.clone(),
        config,
        engine,
        best,
        rows: Vec::new(),
        elapsed,
    };
    Ok((trainer, n_rows))
}
