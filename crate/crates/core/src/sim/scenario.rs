//! Seeded placement of the robot, light, ball, target and obstacle.

use std::f64::consts::{FRAC_PI_2, TAU};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::sim::physics::{Segment, Vec2};
use crate::task::Task;

pub const N_REGIONS: usize = 4;

/// Placement constants. Lengths are in world units (one module = 1).
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioParams {
    pub playfield: f64,
    pub module_size: f64,
    pub episode_steps: usize,
    /// Distance of each light-chasing corner region centre from both walls.
    pub corner_inset: f64,
    pub light_jitter_radius: f64,
    /// Half-width of the uniform jitter around a horizontal region centre.
    pub region_jitter: f64,
    pub robot_bottom_y: f64,
    /// Horizontal range for random bottom starts and target centres.
    pub spawn_x_min: f64,
    pub spawn_x_max: f64,
    pub top_light_y: f64,
    pub ball_y: f64,
    pub target_y: f64,
    pub passage_y: f64,
    /// Height difference between the wall ends at the arena sides and at the
    /// passage mouth.
    pub funnel_drop: f64,
    pub wall_roughness: f64,
    pub wall_vertices: usize,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            playfield: 60.0,
            module_size: 1.0,
            episode_steps: 100,
            corner_inset: 5.0,
            light_jitter_radius: 5.0,
            region_jitter: 4.0,
            robot_bottom_y: 6.0,
            spawn_x_min: 10.0,
            spawn_x_max: 50.0,
            top_light_y: 54.0,
            ball_y: 30.0,
            target_y: 52.0,
            passage_y: 36.0,
            funnel_drop: 10.0,
            wall_roughness: 1.0,
            wall_vertices: 6,
        }
    }
}

impl ScenarioParams {
    /// Passage width: three modules.
    pub fn passage_width(&self) -> f64 {
        3.0 * self.module_size
    }

    /// Success radius: ten modules.
    pub fn success_radius(&self) -> f64 {
        10.0 * self.module_size
    }

    /// Centre of horizontal region `i` (left, centre-left, centre-right, right).
    pub fn region_center_x(&self, region: usize) -> f64 {
        self.playfield * (2 * region + 1) as f64 / (2 * N_REGIONS) as f64
    }
}

/// Funnel-shaped obstacle: two wall polylines rising from the arena sides to a
/// passage mouth. The vertical strip of width `passage_width` centred on
/// `passage_center_x` is free of wall geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct ObstacleSpec {
    pub left_wall: Vec<Vec2>,
    pub right_wall: Vec<Vec2>,
    pub passage_center_x: f64,
    pub passage_width: f64,
    pub roughness: f64,
    pub passage_y: f64,
}

impl ObstacleSpec {
    pub fn segments(&self) -> Vec<Segment> {
        self.left_wall
            .windows(2)
            .chain(self.right_wall.windows(2))
            .map(|w| Segment { a: w[0], b: w[1] })
            .collect()
    }
}

pub fn generate_obstacle(
    rng: &mut ChaCha8Rng,
    passage_width: f64,
    roughness: f64,
    params: &ScenarioParams,
) -> Result<ObstacleSpec> {
    let pf = params.playfield;
    if !(passage_width > 0.0) || passage_width >= pf / 2.0 {
        return Err(Error::invalid(format!(
            "passage width {passage_width} must be positive and below half the playfield"
        )));
    }
    if roughness < 0.0 {
        return Err(Error::invalid("wall roughness must be non-negative"));
    }
    let k = params.wall_vertices.max(2);
    let center = rng.gen_range(passage_width..=pf - passage_width);
    let half = passage_width / 2.0;
    let base = params.passage_y - params.funnel_drop;
    let mut wall = |x0: f64, x1: f64, y0: f64, y1: f64| -> Vec<Vec2> {
        (0..k)
            .map(|i| {
                let t = i as f64 / (k - 1) as f64;
                let jitter = if roughness > 0.0 {
                    rng.gen_range(-roughness..=roughness)
                } else {
                    0.0
                };
                [x0 + t * (x1 - x0), y0 + t * (y1 - y0) + jitter]
            })
            .collect()
    };
    let left_wall = wall(0.0, center - half, base, params.passage_y);
    let right_wall = wall(center + half, pf, params.passage_y, base);
    Ok(ObstacleSpec {
        left_wall,
        right_wall,
        passage_center_x: center,
        passage_width,
        roughness,
        passage_y: params.passage_y,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vec2,
    pub heading: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeConfig {
    pub task: Task,
    pub seed: u64,
    pub region_index: usize,
    pub robot_start: Pose,
    /// Light (light tasks) or ball (ball-to-target) start position.
    pub object: Vec2,
    pub target: Option<Vec2>,
    pub obstacle: Option<ObstacleSpec>,
    pub episode_steps: usize,
    pub playfield: f64,
    pub module_size: f64,
}

pub fn make_episode(task: Task, seed: u64, region_index: usize, params: &ScenarioParams) -> Result<EpisodeConfig> {
    if region_index >= N_REGIONS {
        return Err(Error::invalid(format!("region index {region_index} outside 0..{N_REGIONS}")));
    }
    let mut rng = rng::stream(seed, &[u64::from(task.id()), region_index as u64]);
    let pf = params.playfield;
    let heading = FRAC_PI_2;
    let region_x = |rng: &mut ChaCha8Rng| {
        let c = params.region_center_x(region_index);
        c + rng.gen_range(-params.region_jitter..=params.region_jitter)
    };
    let bottom_start = |rng: &mut ChaCha8Rng| Pose {
        position: [rng.gen_range(params.spawn_x_min..=params.spawn_x_max), params.robot_bottom_y],
        heading,
    };

    let (robot_start, object, target, obstacle) = match task {
        Task::Lc => {
            let inset = params.corner_inset;
            let corners = [[inset, inset], [pf - inset, inset], [inset, pf - inset], [pf - inset, pf - inset]];
            let c = corners[region_index];
            let radius = params.light_jitter_radius * rng.gen::<f64>().sqrt();
            let angle = TAU * rng.gen::<f64>();
            let light = [
                (c[0] + radius * angle.cos()).clamp(0.0, pf),
                (c[1] + radius * angle.sin()).clamp(0.0, pf),
            ];
            let start = Pose {
                position: [pf / 2.0, pf / 2.0],
                heading,
            };
            (start, light, None, None)
        }
        Task::Lco => {
            let start = bottom_start(&mut rng);
            let obstacle = generate_obstacle(&mut rng, params.passage_width(), params.wall_roughness, params)?;
            let light = [region_x(&mut rng), params.top_light_y];
            (start, light, None, Some(obstacle))
        }
        Task::Cbt => {
            let start = bottom_start(&mut rng);
            let ball = [region_x(&mut rng), params.ball_y];
            let target = [rng.gen_range(params.spawn_x_min..=params.spawn_x_max), params.target_y];
            (start, ball, Some(target), None)
        }
    };
    Ok(EpisodeConfig {
        task,
        seed,
        region_index,
        robot_start,
        object,
        target,
        obstacle,
        episode_steps: params.episode_steps,
        playfield: pf,
        module_size: params.module_size,
    })
}

/// `(seed, region)` for `n_episodes` episodes: regions cycle 0..4 and each
/// full cycle draws a fresh seed from `master_seed`.
pub fn episode_schedule(master_seed: u64, n_episodes: usize) -> Vec<(u64, usize)> {
    (0..n_episodes)
        .map(|i| (rng::derive_seed(master_seed, &[(i / N_REGIONS) as u64]), i % N_REGIONS))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::physics::distance;
    use rand::SeedableRng;

    #[test]
    fn episodes_are_reproducible() {
        let p = ScenarioParams::default();
        for task in Task::ALL {
            let a = make_episode(task, 42, 1, &p).unwrap();
            let b = make_episode(task, 42, 1, &p).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, make_episode(task, 43, 1, &p).unwrap());
        }
        assert!(make_episode(Task::Lc, 0, 4, &p).is_err());
    }

    #[test]
    fn light_chasing_layout() {
        let p = ScenarioParams::default();
        for seed in 0..50 {
            for region in 0..4 {
                let e = make_episode(Task::Lc, seed, region, &p).unwrap();
                assert_eq!(e.robot_start.position, [30.0, 30.0]);
                let d = distance(e.robot_start.position, e.object);
                assert!((30.0..=40.5).contains(&d), "distance {d}");
            }
        }
    }

    #[test]
    fn placements_stay_in_arena() {
        let p = ScenarioParams::default();
        for seed in 0..100 {
            for region in 0..4 {
                for task in Task::ALL {
                    let e = make_episode(task, seed, region, &p).unwrap();
                    let inside = |v: Vec2| (0.0..=60.0).contains(&v[0]) && (0.0..=60.0).contains(&v[1]);
                    assert!(inside(e.robot_start.position) && inside(e.object));
                    assert!(e.target.is_none_or(inside));
                    if let Some(o) = &e.obstacle {
                        assert_eq!(o.passage_width, 3.0);
                        assert!(o.left_wall.iter().chain(&o.right_wall).copied().all(inside));
                    }
                }
            }
        }
    }

    #[test]
    fn smooth_walls_without_roughness() {
        let p = ScenarioParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let o = generate_obstacle(&mut rng, 3.0, 0.0, &p).unwrap();
        for wall in [&o.left_wall, &o.right_wall] {
            let (a, b) = (wall[0], wall[wall.len() - 1]);
            for v in wall {
                let t = (v[0] - a[0]) / (b[0] - a[0]);
                assert!((a[1] + t * (b[1] - a[1]) - v[1]).abs() < 1e-12);
            }
        }
        assert_eq!(o.left_wall.last().unwrap()[1], p.passage_y);
        assert!(generate_obstacle(&mut rng, 60.0, 0.0, &p).is_err());
    }

    #[test]
    fn schedule_cycles_regions() {
        let s = episode_schedule(9, 12);
        assert_eq!(s.iter().map(|x| x.1).collect::<Vec<_>>(), vec![0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3]);
        assert_eq!(s[0].0, s[3].0);
        assert_ne!(s[0].0, s[4].0);
        assert_eq!(&episode_schedule(9, 100)[..12], &s[..]);
    }
}
