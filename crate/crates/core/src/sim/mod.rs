//! Deterministic 2D benchmark environments.

pub mod episode;
pub mod physics;
pub mod scenario;

pub use episode::{
    develop_morphology, evaluate_genome, read_sensors, run_episode, sensor_activity, step_score, EpisodeOutcome,
    EvalSettings, FitnessReport, TrajectoryRow, TEST_EPISODES, TRAIN_EPISODES,
};
pub use physics::{env_step, Arena, PhysicsParams, RigidState, RobotBody, Segment, WorldState};
pub use scenario::{episode_schedule, generate_obstacle, make_episode, EpisodeConfig, ObstacleSpec, ScenarioParams};
