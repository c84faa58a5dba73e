//! Testing campaigns over freshly seeded episodes.

use std::fmt;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::cmame::{describe, FeatureDescriptor};
use crate::error::{Error, Result};
use crate::genome_io::GenomeFile;
use crate::morphology::{invalid_score, validate, ValidityReport};
use crate::nca::Nca;
use crate::sim::episode::{develop_morphology, run_episode, EvalSettings};
use crate::sim::physics::PhysicsParams;
use crate::sim::scenario::{episode_schedule, make_episode, ScenarioParams, N_REGIONS};
use crate::task::Task;

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub task: Task,
    pub trained_on: Task,
    pub seed: u64,
    pub episodes: usize,
    pub valid: bool,
    pub validity: ValidityReport,
    pub mean_fitness: f64,
    pub success_count: usize,
    /// Successes and episodes per start region.
    pub per_region: [(usize, usize); N_REGIONS],
    pub features: Option<FeatureDescriptor>,
    pub morphology_text: String,
}

impl EvaluationReport {
    pub fn success_pct(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            100.0 * self.success_count as f64 / self.episodes as f64
        }
    }
}

impl fmt::Display for EvaluationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "task: {}", self.task)?;
        if self.trained_on != self.task {
            writeln!(f, "trained_on: {}", self.trained_on)?;
        }
        writeln!(f, "seed: {}", self.seed)?;
        writeln!(f, "episodes: {}", self.episodes)?;
        writeln!(f, "valid_body: {}", self.valid)?;
        writeln!(
            f,
            "slots: {}/{}",
            self.validity.satisfied_slots, self.validity.required_slots
        )?;
        writeln!(f, "mean_fitness: {:.6}", self.mean_fitness)?;
        writeln!(f, "success_pct: {:.1}", self.success_pct())?;
        for (i, (s, n)) in self.per_region.iter().enumerate() {
            writeln!(f, "region_{i}: {s}/{n}")?;
        }
        if let Some(d) = self.features {
            writeln!(
                f,
                "features: sensors {} actuators {} body_parts {}",
                d.sensors, d.actuators, d.body_parts
            )?;
        }
        writeln!(f, "morphology:")?;
        f.write_str(&self.morphology_text)
    }
}

/// Runs `episodes` episodes (regions cycled, a new seed every full cycle)
/// of the genome on `task`. The genome must share the task's channel layout.
pub fn evaluate_file(
    file: &GenomeFile,
    task: Task,
    episodes: usize,
    seed: u64,
    physics: &PhysicsParams,
    scenario: &ScenarioParams,
    pool: &ThreadPool,
) -> Result<EvaluationReport> {
    if file.task.layout() != task.layout() {
        return Err(Error::Layout(format!(
            "genome was trained for {} ({} channels) and cannot run {task} ({} channels)",
            file.task,
            file.task.layout().n_total(),
            task.layout().n_total()
        )));
    }
    if file.task != task {
        log::warn!("evaluating a {} genome on {task}", file.task);
    }
    let settings = EvalSettings {
        grid_height: file.grid_height,
        grid_width: file.grid_width,
        activation: file.activation,
        physics: physics.clone(),
        scenario: scenario.clone(),
        episodes,
    };
    let nca = Nca::new(task.layout(), file.activation, file.genome.clone())?;
    let morphology = develop_morphology(&nca, &settings)?;
    let validity = validate(&morphology, task)?;
    let mut report = EvaluationReport {
        task,
        trained_on: file.task,
        seed,
        episodes,
        valid: validity.valid,
        validity,
        mean_fitness: 0.0,
        success_count: 0,
        per_region: [(0, 0); N_REGIONS],
        features: None,
        morphology_text: morphology.to_text(),
    };
    let schedule = episode_schedule(seed, episodes);
    for &(_, region) in &schedule {
        report.per_region[region].1 += 1;
    }
    if !validity.valid {
        report.mean_fitness = invalid_score(&validity)?;
        return Ok(report);
    }
    report.features = describe(&morphology, file.grid_height * file.grid_width);
    let outcomes: Vec<(f64, bool)> = pool.install(|| {
        schedule
            .par_iter()
            .map(|&(s, region)| {
                let episode = make_episode(task, s, region, scenario)?;
                run_episode(&nca, &morphology, &episode, physics).map(|o| (o.fitness, o.success))
            })
            .collect::<Result<_>>()
    })?;
    for (&(_, region), &(_, success)) in schedule.iter().zip(&outcomes) {
        if success {
            report.success_count += 1;
            report.per_region[region].0 += 1;
        }
    }
    report.mean_fitness = outcomes.iter().map(|o| o.0).sum::<f64>() / outcomes.len().max(1) as f64;
    Ok(report)
}
