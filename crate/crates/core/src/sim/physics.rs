//! Top-down rigid-body dynamics for a modular wheeled robot.
//!
//! The robot is one rigid body made of unit modules. Each wheel pushes along
//! the body's forward axis with a force proportional to the gap between its
//! commanded speed and its current longitudinal speed, and resists sideways
//! slip with a linear damping force. Integration is semi-implicit Euler with a
//! fixed number of substeps. Contacts (arena walls, obstacle segments and the
//! ball) are resolved with impulses and positional projection, treating every
//! module as a disc of half the module size.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::morphology::{ModuleKind, Morphology};

#[derive(Clone, Debug, PartialEq)]
pub struct PhysicsParams {
    /// Seconds per environment step.
    pub dt: f64,
    pub substeps: u32,
    /// Wheel surface speed at command 1.0, in units per second.
    pub max_wheel_speed: f64,
    pub drive_gain: f64,
    pub lateral_damping: f64,
    pub module_mass: f64,
    pub restitution: f64,
    pub wall_friction: f64,
    pub ball_radius: f64,
    pub ball_mass: f64,
    /// Linear velocity decay rate of the ball, per second.
    pub ball_damping: f64,
    pub contact_iterations: u32,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            dt: 1.0 / 30.0,
            substeps: 4,
            max_wheel_speed: 8.0,
            drive_gain: 20.0,
            lateral_damping: 20.0,
            module_mass: 1.0,
            restitution: 0.0,
            wall_friction: 0.3,
            ball_radius: 1.0,
            ball_mass: 1.0,
            ball_damping: 1.0,
            contact_iterations: 4,
        }
    }
}

pub type Vec2 = [f64; 2];

#[inline]
fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
fn cross(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn distance(a: Vec2, b: Vec2) -> f64 {
    let d = sub(a, b);
    d[0].hypot(d[1])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub fn closest_point(&self, p: Vec2) -> Vec2 {
        let ab = sub(self.b, self.a);
        let len2 = dot(ab, ab);
        if len2 == 0.0 {
            return self.a;
        }
        let t = (dot(sub(p, self.a), ab) / len2).clamp(0.0, 1.0);
        [self.a[0] + t * ab[0], self.a[1] + t * ab[1]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyModule {
    pub cell: (usize, usize),
    pub kind: ModuleKind,
    /// Position relative to the centre of mass in the body frame, as
    /// `[right, forward]`.
    pub offset: Vec2,
}

/// Rigid-body description of a morphology. Grid row 0 is the front of the
/// robot; column 0 its left side.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotBody {
    modules: Vec<BodyModule>,
    mass: f64,
    inertia: f64,
    module_radius: f64,
}

impl RobotBody {
    pub fn new(morphology: &Morphology, module_size: f64, module_mass: f64) -> Result<Self> {
        if morphology.is_empty() {
            return Err(Error::invalid("cannot build a rigid body from an empty morphology"));
        }
        let (cr, cc) = (
            (morphology.height() / 2) as f64,
            (morphology.width() / 2) as f64,
        );
        let raw: Vec<(BodyModule, Vec2)> = morphology
            .cells()
            .iter()
            .map(|(&(r, c), &kind)| {
                let p = [(c as f64 - cc) * module_size, (cr - r as f64) * module_size];
                (
                    BodyModule {
                        cell: (r, c),
                        kind,
                        offset: p,
                    },
                    p,
                )
            })
            .collect();
        let n = raw.len() as f64;
        let com = [
            raw.iter().map(|(_, p)| p[0]).sum::<f64>() / n,
            raw.iter().map(|(_, p)| p[1]).sum::<f64>() / n,
        ];
        let modules: Vec<BodyModule> = raw
            .into_iter()
            .map(|(mut m, p)| {
                m.offset = sub(p, com);
                m
            })
            .collect();
        let square = module_size * module_size / 6.0;
        let inertia = modules
            .iter()
            .map(|m| module_mass * (dot(m.offset, m.offset) + square))
            .sum();
        Ok(Self {
            modules,
            mass: module_mass * n,
            inertia,
            module_radius: module_size / 2.0,
        })
    }

    pub fn modules(&self) -> &[BodyModule] {
        &self.modules
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    pub fn module_radius(&self) -> f64 {
        self.module_radius
    }

    /// Largest distance from the centre of mass to any module edge.
    pub fn extent(&self) -> f64 {
        self.modules
            .iter()
            .map(|m| m.offset[0].hypot(m.offset[1]))
            .fold(0.0, f64::max)
            + self.module_radius
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidState {
    /// Centre of mass in world coordinates.
    pub position: Vec2,
    /// World angle of the body's forward axis, radians from +x.
    pub heading: f64,
    pub velocity: Vec2,
    pub angular_velocity: f64,
}

impl RigidState {
    pub fn at_rest(position: Vec2, heading: f64) -> Self {
        Self {
            position,
            heading,
            velocity: [0.0, 0.0],
            angular_velocity: 0.0,
        }
    }

    /// World-frame unit vectors `(right, forward)` of the body.
    pub fn axes(&self) -> (Vec2, Vec2) {
        let (s, c) = self.heading.sin_cos();
        ([s, -c], [c, s])
    }

    pub fn to_world_offset(&self, local: Vec2) -> Vec2 {
        let (r, f) = self.axes();
        [local[0] * r[0] + local[1] * f[0], local[0] * r[1] + local[1] * f[1]]
    }

    pub fn to_world(&self, local: Vec2) -> Vec2 {
        let o = self.to_world_offset(local);
        [self.position[0] + o[0], self.position[1] + o[1]]
    }
}

/// Simulated state of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub robot: RigidState,
    /// Light (light tasks) or ball (ball-to-target) centre.
    pub object: Vec2,
    pub ball_velocity: Vec2,
    pub target: Option<Vec2>,
    pub has_ball: bool,
    pub step: usize,
}

/// Static geometry of an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Arena {
    pub playfield: f64,
    pub segments: Vec<Segment>,
}

impl Arena {
    pub fn open(playfield: f64) -> Self {
        Self {
            playfield,
            segments: Vec::new(),
        }
    }
}

struct Contact {
    normal: Vec2,
    depth: f64,
}

fn boundary_contacts(p: Vec2, radius: f64, arena: &Arena, out: &mut Vec<Contact>) {
    let pf = arena.playfield;
    let walls = [
        ([1.0, 0.0], radius - p[0]),
        ([-1.0, 0.0], p[0] + radius - pf),
        ([0.0, 1.0], radius - p[1]),
        ([0.0, -1.0], p[1] + radius - pf),
    ];
    for (normal, depth) in walls {
        if depth > 0.0 {
            out.push(Contact { normal, depth });
        }
    }
    for seg in &arena.segments {
        let q = seg.closest_point(p);
        let d = sub(p, q);
        let dist = d[0].hypot(d[1]);
        if dist < radius && dist > 0.0 {
            out.push(Contact {
                normal: [d[0] / dist, d[1] / dist],
                depth: radius - dist,
            });
        }
    }
}

/// Advances the world by one environment step. `commands` maps wheel cells to
/// speed commands; missing wheels are treated as 0 and values are clipped to
/// `[-1, 1]`.
pub fn env_step(
    world: &WorldState,
    body: &RobotBody,
    commands: &BTreeMap<(usize, usize), f64>,
    arena: &Arena,
    params: &PhysicsParams,
) -> Result<WorldState> {
    if let Some((cell, v)) = commands.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite wheel command {v} at {cell:?}")));
    }
    let wheels: Vec<(Vec2, f64)> = body
        .modules
        .iter()
        .filter(|m| m.kind == ModuleKind::Wheel)
        .map(|m| (m.offset, commands.get(&m.cell).copied().unwrap_or(0.0).clamp(-1.0, 1.0)))
        .collect();

    let h = params.dt / f64::from(params.substeps.max(1));
    let mut next = world.clone();
    let mut contacts = Vec::new();
    for _ in 0..params.substeps.max(1) {
        let robot = &mut next.robot;
        let (right, fwd) = robot.axes();
        let u = [dot(robot.velocity, right), dot(robot.velocity, fwd)];
        let w = robot.angular_velocity;

        let mut force = [0.0, 0.0];
        let mut torque = 0.0;
        for &(p, cmd) in &wheels {
            let lateral = u[0] - w * p[1];
            let longitudinal = u[1] + w * p[0];
            let f = [
                -params.lateral_damping * lateral,
                params.drive_gain * (cmd * params.max_wheel_speed - longitudinal),
            ];
            force[0] += f[0];
            force[1] += f[1];
            torque += cross(p, f);
        }
        let world_force = robot.to_world_offset(force);
        robot.velocity[0] += world_force[0] / body.mass * h;
        robot.velocity[1] += world_force[1] / body.mass * h;
        robot.angular_velocity += torque / body.inertia * h;
        robot.position[0] += robot.velocity[0] * h;
        robot.position[1] += robot.velocity[1] * h;
        robot.heading += robot.angular_velocity * h;

        if next.has_ball {
            let decay = 1.0 / (1.0 + params.ball_damping * h);
            next.ball_velocity[0] *= decay;
            next.ball_velocity[1] *= decay;
            next.object[0] += next.ball_velocity[0] * h;
            next.object[1] += next.ball_velocity[1] * h;
        }

        for _ in 0..params.contact_iterations.max(1) {
            resolve_robot_static(&mut next.robot, body, arena, params, &mut contacts);
            if next.has_ball {
                resolve_robot_ball(&mut next, body, params);
                resolve_ball_static(&mut next, arena, params, &mut contacts);
            }
        }
    }
    next.step += 1;
    Ok(next)
}

fn resolve_robot_static(
    robot: &mut RigidState,
    body: &RobotBody,
    arena: &Arena,
    params: &PhysicsParams,
    contacts: &mut Vec<Contact>,
) {
    for m in &body.modules {
        let r = robot.to_world_offset(m.offset);
        let p = [robot.position[0] + r[0], robot.position[1] + r[1]];
        contacts.clear();
        boundary_contacts(p, body.module_radius, arena, contacts);
        for c in contacts.iter() {
            let n = c.normal;
            robot.position[0] += n[0] * c.depth;
            robot.position[1] += n[1] * c.depth;
            let vc = point_velocity(robot, r);
            let vn = dot(vc, n);
            if vn >= 0.0 {
                continue;
            }
            let rn = cross(r, n);
            let jn = -(1.0 + params.restitution) * vn / (1.0 / body.mass + rn * rn / body.inertia);
            apply_impulse(robot, body, r, [n[0] * jn, n[1] * jn]);

            let t = [-n[1], n[0]];
            let vt = dot(point_velocity(robot, r), t);
            let rt = cross(r, t);
            let jt = (-vt / (1.0 / body.mass + rt * rt / body.inertia))
                .clamp(-params.wall_friction * jn, params.wall_friction * jn);
            apply_impulse(robot, body, r, [t[0] * jt, t[1] * jt]);
        }
    }
}

fn resolve_robot_ball(world: &mut WorldState, body: &RobotBody, params: &PhysicsParams) {
    let reach = body.module_radius + params.ball_radius;
    let inv_ball = 1.0 / params.ball_mass;
    for m in &body.modules {
        let r = world.robot.to_world_offset(m.offset);
        let p = [world.robot.position[0] + r[0], world.robot.position[1] + r[1]];
        let d = sub(world.object, p);
        let dist = d[0].hypot(d[1]);
        if dist >= reach || dist == 0.0 {
            continue;
        }
        let n = [d[0] / dist, d[1] / dist];
        let depth = reach - dist;
        let inv_robot = 1.0 / body.mass;
        let share_ball = inv_ball / (inv_ball + inv_robot);
        world.object[0] += n[0] * depth * share_ball;
        world.object[1] += n[1] * depth * share_ball;
        world.robot.position[0] -= n[0] * depth * (1.0 - share_ball);
        world.robot.position[1] -= n[1] * depth * (1.0 - share_ball);

        let rel = sub(world.ball_velocity, point_velocity(&world.robot, r));
        let vn = dot(rel, n);
        if vn >= 0.0 {
            continue;
        }
        let rn = cross(r, n);
        let j = -(1.0 + params.restitution) * vn / (inv_ball + inv_robot + rn * rn / body.inertia);
        world.ball_velocity[0] += n[0] * j * inv_ball;
        world.ball_velocity[1] += n[1] * j * inv_ball;
        apply_impulse(&mut world.robot, body, r, [-n[0] * j, -n[1] * j]);
    }
}

fn resolve_ball_static(world: &mut WorldState, arena: &Arena, params: &PhysicsParams, contacts: &mut Vec<Contact>) {
    contacts.clear();
    boundary_contacts(world.object, params.ball_radius, arena, contacts);
    for c in contacts.iter() {
        let n = c.normal;
        world.object[0] += n[0] * c.depth;
        world.object[1] += n[1] * c.depth;
        let vn = dot(world.ball_velocity, n);
        if vn < 0.0 {
            let j = -(1.0 + params.restitution) * vn;
            world.ball_velocity[0] += n[0] * j;
            world.ball_velocity[1] += n[1] * j;
        }
    }
}

#[inline]
fn point_velocity(robot: &RigidState, r: Vec2) -> Vec2 {
    let w = robot.angular_velocity;
    [robot.velocity[0] - w * r[1], robot.velocity[1] + w * r[0]]
}

#[inline]
fn apply_impulse(robot: &mut RigidState, body: &RobotBody, r: Vec2, j: Vec2) {
    robot.velocity[0] += j[0] / body.mass;
    robot.velocity[1] += j[1] / body.mass;
    robot.angular_velocity += cross(r, j) / body.inertia;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn body(text: &str) -> (Morphology, RobotBody) {
        let m = Morphology::from_text(text, 3).unwrap();
        let b = RobotBody::new(&m, 1.0, 1.0).unwrap();
        (m, b)
    }

    fn world_at(x: f64, y: f64) -> WorldState {
        WorldState {
            robot: RigidState::at_rest([x, y], FRAC_PI_2),
            object: [5.0, 5.0],
            ball_velocity: [0.0, 0.0],
            target: None,
            has_ball: false,
            step: 0,
        }
    }

    fn commands(m: &Morphology, f: impl Fn((usize, usize)) -> f64) -> BTreeMap<(usize, usize), f64> {
        m.wheel_cells().map(|c| (c, f(c))).collect()
    }

    #[test]
    fn centre_of_mass_and_inertia() {
        let (_, b) = body(".....\n.....\n.WTW.\n.....\n.....");
        assert_eq!(b.mass(), 3.0);
        assert!((b.inertia() - (2.0 + 3.0 / 6.0)).abs() < 1e-12);
        let offsets: Vec<Vec2> = b.modules().iter().map(|m| m.offset).collect();
        assert_eq!(offsets, vec![[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn rest_is_stable() {
        let (m, b) = body(".....\n.TST.\n.WTW.\n.....\n.....");
        let arena = Arena::open(60.0);
        let mut w = world_at(30.0, 30.0);
        let zero = commands(&m, |_| 0.0);
        for _ in 0..100 {
            let next = env_step(&w, &b, &zero, &arena, &PhysicsParams::default()).unwrap();
            assert_eq!(next.robot, w.robot);
            w = next;
        }
    }

    #[test]
    fn symmetric_commands_translate_without_turning() {
        let (m, b) = body(".....\n..S..\n.WTW.\n..T..\n.....");
        let arena = Arena::open(60.0);
        let mut w = world_at(30.0, 20.0);
        let cmd = commands(&m, |_| 0.8);
        for _ in 0..60 {
            let next = env_step(&w, &b, &cmd, &arena, &PhysicsParams::default()).unwrap();
            assert!((next.robot.heading - w.robot.heading).abs() < 1e-9);
            w = next;
        }
        assert!(w.robot.position[1] > 30.0);
        assert!((w.robot.position[0] - 30.0).abs() < 1e-9);
    }

    #[test]
    fn mirrored_commands_rotate_in_place() {
        let (m, b) = body(".....\n.TTT.\n.WTW.\n.TTT.\n.....");
        let arena = Arena::open(60.0);
        let mut w = world_at(30.0, 30.0);
        let cmd = commands(&m, |(_, c)| if c < 2 { 1.0 } else { -1.0 });
        for _ in 0..60 {
            let next = env_step(&w, &b, &cmd, &arena, &PhysicsParams::default()).unwrap();
            assert!(distance(next.robot.position, w.robot.position) < 1e-9);
            w = next;
        }
        // Left wheel forward, right wheel backward turns clockwise.
        assert!(w.robot.heading < FRAC_PI_2 - 1.0);
    }

    #[test]
    fn walls_contain_random_driving() {
        let (m, b) = body(".....\n.SWT.\n.WTW.\n.TWT.\n.....");
        let arena = Arena::open(60.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut w = world_at(30.0, 30.0);
        let params = PhysicsParams::default();
        let mut cmd = commands(&m, |_| 1.0);
        for step in 0..10_000 {
            if step % 25 == 0 {
                for v in cmd.values_mut() {
                    *v = rng.gen_range(-1.0..=1.0);
                }
            }
            w = env_step(&w, &b, &cmd, &arena, &params).unwrap();
            let p = w.robot.position;
            assert!((0.0..=60.0).contains(&p[0]) && (0.0..=60.0).contains(&p[1]), "escaped at {p:?}");
        }
    }

    #[test]
    fn non_finite_command_is_an_error() {
        let (m, b) = body(".....\n.....\n.WSW.\n.....\n.....");
        let cmd = commands(&m, |_| f64::NAN);
        assert!(env_step(&world_at(30.0, 30.0), &b, &cmd, &Arena::open(60.0), &PhysicsParams::default()).is_err());
    }

    #[test]
    fn robot_pushes_ball() {
        let (m, b) = body(".....\n.....\n.WSW.\n.....\n.....");
        let mut w = world_at(30.0, 20.0);
        w.has_ball = true;
        w.object = [30.0, 24.0];
        let cmd = commands(&m, |_| 1.0);
        let params = PhysicsParams::default();
        for _ in 0..60 {
            w = env_step(&w, &b, &cmd, &Arena::open(60.0), &params).unwrap();
        }
        assert!(w.object[1] > 30.0);
        assert!(w.object[1] - w.robot.position[1] >= params.ball_radius + 0.5 - 1e-6);
    }
}
