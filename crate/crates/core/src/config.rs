//! Run configuration stored as a flat `key = value` text file.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are errors. Keys
//! that accept `auto` resolve to an optimizer-dependent default.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cmame::{total_configurations, DEFAULT_EMITTERS};
use crate::error::{Error, IoContext, Result};
use crate::nca::{Activation, DEFAULT_GRID};
use crate::sim::episode::{EvalSettings, TEST_EPISODES, TRAIN_EPISODES};
use crate::sim::physics::PhysicsParams;
use crate::sim::scenario::ScenarioParams;
use crate::task::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Optimizer {
    CmaEs,
    CmaMe,
}

impl Optimizer {
    pub fn name(self) -> &'static str {
        match self {
            Optimizer::CmaEs => "cma-es",
            Optimizer::CmaMe => "cma-me",
        }
    }

    pub fn default_population(self) -> usize {
        match self {
            Optimizer::CmaEs => 112,
            Optimizer::CmaMe => 128,
        }
    }

    pub fn default_generations(self) -> u64 {
        match self {
            Optimizer::CmaEs => 20_000,
            Optimizer::CmaMe => 60_000,
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cma-es" | "cmaes" => Ok(Optimizer::CmaEs),
            "cma-me" | "cmame" => Ok(Optimizer::CmaMe),
            other => Err(Error::invalid(format!("unknown optimizer '{other}' (expected cma-es or cma-me)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub optimizer: Optimizer,
    pub grid_height: usize,
    pub grid_width: usize,
    pub activation: Activation,
    pub lambda: Option<usize>,
    pub emitters: usize,
    pub generations: Option<u64>,
    pub sigma0: f64,
    pub seed: u64,
    pub train_episodes: usize,
    pub test_episodes: usize,
    /// Archive normalization constant; `None` counts feasible descriptors.
    pub total_configurations: Option<usize>,
    /// Write a checkpoint every this many generations (0 disables periodic
    /// checkpoints; one is always written at the end).
    pub checkpoint_every: u64,
    pub output_dir: PathBuf,
    pub physics: PhysicsParams,
    pub scenario: ScenarioParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Lc,
            optimizer: Optimizer::CmaEs,
            grid_height: DEFAULT_GRID,
            grid_width: DEFAULT_GRID,
            activation: Activation::Relu,
            lambda: None,
            emitters: DEFAULT_EMITTERS,
            generations: None,
            sigma0: 0.01,
            seed: 0,
            train_episodes: TRAIN_EPISODES,
            test_episodes: TEST_EPISODES,
            total_configurations: None,
            checkpoint_every: 100,
            output_dir: PathBuf::from("runs/default"),
            physics: PhysicsParams::default(),
            scenario: ScenarioParams::default(),
        }
    }
}

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        line,
        message: format!("invalid value '{value}' for '{key}'"),
    })
}

fn parse_auto<T: FromStr>(line: usize, key: &str, value: &str) -> Result<Option<T>> {
    if value.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        parse(line, key, value).map(Some)
    }
}

fn auto<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), |x| x.to_string())
}

impl RunConfig {
    pub fn population(&self) -> usize {
        self.lambda.unwrap_or(self.optimizer.default_population())
    }

    pub fn generation_budget(&self) -> u64 {
        self.generations.unwrap_or(self.optimizer.default_generations())
    }

    pub fn grid_area(&self) -> usize {
        self.grid_height * self.grid_width
    }

    pub fn archive_size(&self) -> usize {
        self.total_configurations.unwrap_or_else(|| total_configurations(self.grid_area()))
    }

    pub fn eval_settings(&self, episodes: usize) -> EvalSettings {
        EvalSettings {
            grid_height: self.grid_height,
            grid_width: self.grid_width,
            activation: self.activation,
            physics: self.physics.clone(),
            scenario: self.scenario.clone(),
            episodes,
        }
    }

    /// Applies one `key = value` assignment; `line` is used in errors.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let v = value;
        let p = &mut self.physics;
        let s = &mut self.scenario;
        match key {
            "task" => self.task = v.parse().map_err(|e: Error| Error::Config { line, message: e.to_string() })?,
            "optimizer" => {
                self.optimizer = v.parse().map_err(|e: Error| Error::Config { line, message: e.to_string() })?
            }
            "grid_height" => self.grid_height = parse(line, key, v)?,
            "grid_width" => self.grid_width = parse(line, key, v)?,
            "activation" => {
                self.activation = Activation::from_name(v).ok_or_else(|| Error::Config {
                    line,
                    message: format!("unknown activation '{v}' (expected relu or tanh)"),
                })?
            }
            "lambda" => self.lambda = parse_auto(line, key, v)?,
            "emitters" => self.emitters = parse(line, key, v)?,
            "generations" => self.generations = parse_auto(line, key, v)?,
            "sigma0" => self.sigma0 = parse(line, key, v)?,
            "seed" => self.seed = parse(line, key, v)?,
            "train_episodes" => self.train_episodes = parse(line, key, v)?,
            "test_episodes" => self.test_episodes = parse(line, key, v)?,
            "total_configurations" => self.total_configurations = parse_auto(line, key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(line, key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "dt" => p.dt = parse(line, key, v)?,
            "substeps" => p.substeps = parse(line, key, v)?,
            "max_wheel_speed" => p.max_wheel_speed = parse(line, key, v)?,
            "drive_gain" => p.drive_gain = parse(line, key, v)?,
            "lateral_damping" => p.lateral_damping = parse(line, key, v)?,
            "module_mass" => p.module_mass = parse(line, key, v)?,
            "restitution" => p.restitution = parse(line, key, v)?,
            "wall_friction" => p.wall_friction = parse(line, key, v)?,
            "ball_radius" => p.ball_radius = parse(line, key, v)?,
            "ball_mass" => p.ball_mass = parse(line, key, v)?,
            "ball_damping" => p.ball_damping = parse(line, key, v)?,
            "contact_iterations" => p.contact_iterations = parse(line, key, v)?,
            "playfield" => s.playfield = parse(line, key, v)?,
            "module_size" => s.module_size = parse(line, key, v)?,
            "episode_steps" => s.episode_steps = parse(line, key, v)?,
            "corner_inset" => s.corner_inset = parse(line, key, v)?,
            "light_jitter_radius" => s.light_jitter_radius = parse(line, key, v)?,
            "region_jitter" => s.region_jitter = parse(line, key, v)?,
            "robot_bottom_y" => s.robot_bottom_y = parse(line, key, v)?,
            "spawn_x_min" => s.spawn_x_min = parse(line, key, v)?,
            "spawn_x_max" => s.spawn_x_max = parse(line, key, v)?,
            "top_light_y" => s.top_light_y = parse(line, key, v)?,
            "ball_y" => s.ball_y = parse(line, key, v)?,
            "target_y" => s.target_y = parse(line, key, v)?,
            "passage_y" => s.passage_y = parse(line, key, v)?,
            "funnel_drop" => s.funnel_drop = parse(line, key, v)?,
            "wall_roughness" => s.wall_roughness = parse(line, key, v)?,
            "wall_vertices" => s.wall_vertices = parse(line, key, v)?,
            _ => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key '{key}'"),
                })
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected 'key = value', found '{content}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if value.is_empty() {
                return Err(Error::Config {
                    line,
                    message: format!("missing value for '{key}'"),
                });
            }
            cfg.set(key, value, line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Err(Error::Config { line: 0, message });
        if self.grid_height.is_multiple_of(2) || self.grid_width.is_multiple_of(2) || self.grid_height == 0 || self.grid_width == 0 {
            return fail(format!("grid {}x{} must have odd, positive sides", self.grid_height, self.grid_width));
        }
        if self.population() < 2 {
            return fail("lambda must be at least 2".into());
        }
        if self.emitters == 0 {
            return fail("emitters must be at least 1".into());
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return fail(format!("sigma0 must be positive, got {}", self.sigma0));
        }
        if self.train_episodes == 0 || self.test_episodes == 0 {
            return fail("episode counts must be positive".into());
        }
        if !(self.physics.dt > 0.0) || self.physics.substeps == 0 {
            return fail("dt and substeps must be positive".into());
        }
        if !(self.scenario.playfield > 0.0 && self.scenario.module_size > 0.0) {
            return fail("playfield and module_size must be positive".into());
        }
        Ok(())
    }

    /// Serializes every key; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let p = &self.physics;
        let s = &self.scenario;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("task", self.task.to_string());
        kv("optimizer", self.optimizer.to_string());
        kv("grid_height", self.grid_height.to_string());
        kv("grid_width", self.grid_width.to_string());
        kv("activation", self.activation.name().to_string());
        kv("lambda", auto(&self.lambda));
        kv("emitters", self.emitters.to_string());
        kv("generations", auto(&self.generations));
        kv("sigma0", self.sigma0.to_string());
        kv("seed", self.seed.to_string());
        kv("train_episodes", self.train_episodes.to_string());
        kv("test_episodes", self.test_episodes.to_string());
        kv("total_configurations", auto(&self.total_configurations));
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        kv("dt", p.dt.to_string());
        kv("substeps", p.substeps.to_string());
        kv("max_wheel_speed", p.max_wheel_speed.to_string());
        kv("drive_gain", p.drive_gain.to_string());
        kv("lateral_damping", p.lateral_damping.to_string());
        kv("module_mass", p.module_mass.to_string());
        kv("restitution", p.restitution.to_string());
        kv("wall_friction", p.wall_friction.to_string());
        kv("ball_radius", p.ball_radius.to_string());
        kv("ball_mass", p.ball_mass.to_string());
        kv("ball_damping", p.ball_damping.to_string());
        kv("contact_iterations", p.contact_iterations.to_string());
        kv("playfield", s.playfield.to_string());
        kv("module_size", s.module_size.to_string());
        kv("episode_steps", s.episode_steps.to_string());
        kv("corner_inset", s.corner_inset.to_string());
        kv("light_jitter_radius", s.light_jitter_radius.to_string());
        kv("region_jitter", s.region_jitter.to_string());
        kv("robot_bottom_y", s.robot_bottom_y.to_string());
        kv("spawn_x_min", s.spawn_x_min.to_string());
        kv("spawn_x_max", s.spawn_x_max.to_string());
        kv("top_light_y", s.top_light_y.to_string());
        kv("ball_y", s.ball_y.to_string());
        kv("target_y", s.target_y.to_string());
        kv("passage_y", s.passage_y.to_string());
        kv("funnel_drop", s.funnel_drop.to_string());
        kv("wall_roughness", s.wall_roughness.to_string());
        kv("wall_vertices", s.wall_vertices.to_string());
        out
    }
}
