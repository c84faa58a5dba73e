use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cmame::{describe, FeatureDescriptor};
use crate::error::{Error, Result};
use crate::morphology::{extract_body, invalid_score, validate, ModuleKind, Morphology, ValidityReport};
use crate::nca::{control_grid, Activation, Genome, Nca, DEFAULT_GRID};
use crate::sim::physics::{distance, env_step, Arena, PhysicsParams, RigidState, RobotBody, Vec2, WorldState};
use crate::sim::scenario::{episode_schedule, make_episode, EpisodeConfig, ScenarioParams};
use crate::task::Task;

/// Training evaluation runs 4 regions x 3 seeds.
pub const TRAIN_EPISODES: usize = 12;
pub const TEST_EPISODES: usize = 100;

/// Sensor activity for an object at `distance`: `exp(-distance / playfield)`.
pub fn sensor_activity(distance: f64, playfield: f64) -> Result<f64> {
    if !(distance >= 0.0) {
        return Err(Error::invalid(format!("distance must be non-negative, got {distance}")));
    }
    Ok((-distance / playfield).exp())
}

fn activity(d: f64, playfield: f64) -> f64 {
    (-d / playfield).exp()
}

/// Reading of every sensor cell: light/ball sensors measure the light or
/// ball, target sensors the target centre.
pub fn read_sensors(world: &WorldState, body: &RobotBody, playfield: f64) -> BTreeMap<(usize, usize), f64> {
    body.modules()
        .iter()
        .filter_map(|m| {
            let goal = match m.kind {
                ModuleKind::LightBallSensor => world.object,
                ModuleKind::TargetSensor => world.target?,
                _ => return None,
            };
            let p = world.robot.to_world(m.offset);
            Some((m.cell, activity(distance(p, goal), playfield)))
        })
        .collect()
}

/// Per-step score: light tasks use the robot centre's distance to the light;
/// ball-to-target averages the robot-ball and ball-target activities.
pub fn step_score(task: Task, world: &WorldState, playfield: f64) -> f64 {
    let robot_object = activity(distance(world.robot.position, world.object), playfield);
    match task {
        Task::Lc | Task::Lco => robot_object,
        Task::Cbt => {
            let target = world.target.expect("ball-to-target world has a target");
            0.5 * (robot_object + activity(distance(world.object, target), playfield))
        }
    }
}

/// Distance checked against the success radius.
pub fn success_distance(task: Task, world: &WorldState) -> f64 {
    match task {
        Task::Lc | Task::Lco => distance(world.robot.position, world.object),
        Task::Cbt => distance(world.object, world.target.expect("target present")),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub robot_x: f64,
    pub robot_y: f64,
    pub heading: f64,
    pub object_x: f64,
    pub object_y: f64,
    pub target_x: Option<f64>,
    pub target_y: Option<f64>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub fitness: f64,
    pub success: bool,
    pub min_distance: f64,
    pub trajectory: Vec<TrajectoryRow>,
    /// World state before the first step followed by the state after each step.
    pub states: Vec<WorldState>,
}

pub fn initial_world(episode: &EpisodeConfig) -> WorldState {
    WorldState {
        robot: RigidState::at_rest(episode.robot_start.position, episode.robot_start.heading),
        object: episode.object,
        ball_velocity: [0.0, 0.0],
        target: episode.target,
        has_ball: episode.task == Task::Cbt,
        step: 0,
    }
}

pub fn arena(episode: &EpisodeConfig) -> Arena {
    Arena {
        playfield: episode.playfield,
        segments: episode.obstacle.as_ref().map(|o| o.segments()).unwrap_or_default(),
    }
}

/// Simulates one episode of a developed robot. The morphology must be valid
/// for the episode's task.
pub fn run_episode(
    nca: &Nca,
    morphology: &Morphology,
    episode: &EpisodeConfig,
    physics: &PhysicsParams,
) -> Result<EpisodeOutcome> {
    let body = RobotBody::new(morphology, episode.module_size, physics.module_mass)?;
    let arena = arena(episode);
    let mut world = initial_world(episode);
    let mut grid = control_grid(nca.layout(), morphology)?;
    let mut trajectory = Vec::with_capacity(episode.episode_steps);
    let mut states = Vec::with_capacity(episode.episode_steps + 1);
    states.push(world.clone());
    let mut total = 0.0;
    let mut min_distance = f64::INFINITY;
    for step in 0..episode.episode_steps {
        let sensors = read_sensors(&world, &body, episode.playfield);
        let (next_grid, commands) = nca.control_tick(&grid, morphology, &sensors)?;
        grid = next_grid;
        world = env_step(&world, &body, &commands, &arena, physics)?;
        let score = step_score(episode.task, &world, episode.playfield);
        total += score;
        min_distance = min_distance.min(success_distance(episode.task, &world));
        trajectory.push(TrajectoryRow {
            step,
            robot_x: world.robot.position[0],
            robot_y: world.robot.position[1],
            heading: world.robot.heading,
            object_x: world.object[0],
            object_y: world.object[1],
            target_x: world.target.map(|t: Vec2| t[0]),
            target_y: world.target.map(|t: Vec2| t[1]),
            score,
        });
        states.push(world.clone());
    }
    let steps = episode.episode_steps.max(1) as f64;
    Ok(EpisodeOutcome {
        fitness: total / steps,
        success: min_distance < 10.0 * episode.module_size,
        min_distance,
        trajectory,
        states,
    })
}

/// Everything needed to turn a genome into a fitness value.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub grid_height: usize,
    pub grid_width: usize,
    pub activation: Activation,
    pub physics: PhysicsParams,
    pub scenario: ScenarioParams,
    pub episodes: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            grid_height: DEFAULT_GRID,
            grid_width: DEFAULT_GRID,
            activation: Activation::Relu,
            physics: PhysicsParams::default(),
            scenario: ScenarioParams::default(),
            episodes: TRAIN_EPISODES,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitnessReport {
    pub fitness: f64,
    pub valid: bool,
    pub validity: ValidityReport,
    pub success_count: usize,
    pub episodes: usize,
    /// Present only for valid bodies.
    pub features: Option<FeatureDescriptor>,
    pub morphology: Morphology,
}

impl FitnessReport {
    pub fn success_rate(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.success_count as f64 / self.episodes as f64
        }
    }
}

pub fn develop_morphology(nca: &Nca, settings: &EvalSettings) -> Result<Morphology> {
    let grid = nca.develop(settings.grid_height, settings.grid_width)?;
    Ok(extract_body(&grid, nca.layout()))
}

/// Develops, validates and, for usable bodies, simulates `settings.episodes`
/// episodes drawn from `master_seed`. Unusable bodies receive partial credit
/// and are not simulated.
pub fn evaluate_genome(genome: &Genome, task: Task, master_seed: u64, settings: &EvalSettings) -> Result<FitnessReport> {
    let nca = Nca::new(task.layout(), settings.activation, genome.clone())?;
    let morphology = develop_morphology(&nca, settings)?;
    let validity = validate(&morphology, task)?;
    if !validity.valid {
        return Ok(FitnessReport {
            fitness: invalid_score(&validity)?,
            valid: false,
            validity,
            success_count: 0,
            episodes: 0,
            features: None,
            morphology,
        });
    }
    let mut total = 0.0;
    let mut successes = 0;
    let schedule = episode_schedule(master_seed, settings.episodes);
    for &(seed, region) in &schedule {
        let episode = make_episode(task, seed, region, &settings.scenario)?;
        let outcome = run_episode(&nca, &morphology, &episode, &settings.physics)?;
        total += outcome.fitness;
        successes += usize::from(outcome.success);
    }
    Ok(FitnessReport {
        fitness: total / schedule.len().max(1) as f64,
        valid: true,
        validity,
        success_count: successes,
        episodes: schedule.len(),
        features: describe(&morphology, settings.grid_height * settings.grid_width),
        morphology,
    })
}
