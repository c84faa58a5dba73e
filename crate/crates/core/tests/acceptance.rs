//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.
//!
//! Run a subset with `cargo test -p ncrs-core --test acceptance -- 1 4 9`.
//! Criterion 7 runs only when `NCRS_SLOW=1`; its budget can be reduced with
//! `NCRS_QD_BUDGET` (evaluations per run), `NCRS_QD_SEEDS` and
//! `NCRS_QD_EMITTERS`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ncrs_core::cmaes::{CmaConfig, CmaState};
use ncrs_core::cmame::{
    enumerate_configurations, total_configurations, Archive, Emitter, FeatureDescriptor, InsertOutcome, STUCK_LIMIT,
};
use ncrs_core::config::{Optimizer, RunConfig};
use ncrs_core::genome_io::GenomeFile;
use ncrs_core::harness::baseline::run_baseline;
use ncrs_core::harness::evaluate::evaluate_file;
use ncrs_core::harness::thread_pool;
use ncrs_core::harness::train::Trainer;
use ncrs_core::nca::{alive_mask, FrozenSpec, DEVELOPMENT_STEPS, STATE_BOUND};
use ncrs_core::sim::episode::sensor_activity;
use ncrs_core::sim::physics::{distance, env_step, Arena, PhysicsParams, RigidState, RobotBody, WorldState};
use ncrs_core::sim::scenario::{generate_obstacle, ScenarioParams};
use ncrs_core::{genome_length, Activation, CellGrid, ChannelLayout, Genome, Morphology, Nca, Task};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- 1

fn parameter_counts() -> Outcome {
    let lc = genome_length(&Task::Lc.layout());
    let lco = genome_length(&Task::Lco.layout());
    let cbt = genome_length(&Task::Cbt.layout());
    outcome(
        lc == 4572 && lco == 4572 && cbt == 4873,
        format!("lc {lc}, lco {lco}, cbt {cbt} (expected 4572, 4572, 4873)"),
    )
}

// ---------------------------------------------------------------- 2

fn random_nca(rng: &mut ChaCha8Rng, layout: ChannelLayout) -> Nca {
    let scale = [0.01, 0.3, 1.0, 10.0][rng.gen_range(0..4)];
    let params = (0..genome_length(&layout)).map(|_| rng.gen_range(-scale..=scale)).collect();
    let act = if rng.gen_bool(0.5) { Activation::Relu } else { Activation::Tanh };
    Nca::new(layout, act, Genome::new(params).unwrap()).unwrap()
}

fn random_grid(rng: &mut ChaCha8Rng, layout: &ChannelLayout) -> CellGrid {
    let h = 2 * rng.gen_range(1..5) + 1;
    let w = 2 * rng.gen_range(1..5) + 1;
    let density = rng.gen_range(0.0..0.5);
    let mut g = CellGrid::zeros(h, w, layout.n_total());
    for r in 0..h {
        for c in 0..w {
            if rng.gen_bool(density) {
                for ch in 0..layout.n_total() {
                    g.set(r, c, ch, rng.gen_range(-STATE_BOUND..=STATE_BOUND));
                }
            } else {
                g.set(r, c, ChannelLayout::BODY, rng.gen_range(-0.5..=ncrs_core::nca::ALIVE_THRESHOLD));
            }
            g.set(r, c, ChannelLayout::CONTROL_FLAG, if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
        }
    }
    g
}

/// Runs `check` on 100 seeded random cases; returns the number of violations.
fn nca_cases(property: u64, check: impl Fn(&Nca, &CellGrid, &mut ChaCha8Rng) -> bool) -> usize {
    (0..100u64)
        .filter(|&case| {
            let mut rng = ChaCha8Rng::seed_from_u64(property * 1000 + case);
            let layout = if rng.gen_bool(0.5) { Task::Lc.layout() } else { Task::Cbt.layout() };
            let nca = random_nca(&mut rng, layout);
            let grid = random_grid(&mut rng, &layout);
            !check(&nca, &grid, &mut rng)
        })
        .count()
}

/// Synchronous update computed cell by cell in a random order from the
/// unchanged input.
fn shuffled_update(nca: &Nca, grid: &CellGrid, frozen: &FrozenSpec, rng: &mut ChaCha8Rng) -> CellGrid {
    let mask = alive_mask(grid);
    let mut cells: Vec<(usize, usize)> = (0..grid.height())
        .flat_map(|r| (0..grid.width()).map(move |c| (r, c)))
        .filter(|&(r, c)| mask.is_updatable(r, c))
        .collect();
    for i in (1..cells.len()).rev() {
        cells.swap(i, rng.gen_range(0..=i));
    }
    let mut next = grid.clone();
    let mut delta = vec![0.0; grid.channels()];
    for (r, c) in cells {
        nca.cell_delta(grid, r, c, &mut delta);
        for (ch, d) in delta.iter().enumerate() {
            next.set(r, c, ch, grid.get(r, c, ch) + d);
        }
    }
    for &ch in &frozen.channels {
        for r in 0..grid.height() {
            for c in 0..grid.width() {
                next.set(r, c, ch, grid.get(r, c, ch));
            }
        }
    }
    for &(r, c, ch) in &frozen.cells {
        next.set(r, c, ch, grid.get(r, c, ch));
    }
    next
}

fn nca_invariants() -> Outcome {
    let dev = FrozenSpec::development();
    let bounded = nca_cases(1, |nca, g, _| {
        let mut s = g.clone();
        (0..5).all(|_| {
            s = nca.step(&s, &dev).unwrap();
            s.values().iter().all(|v| v.abs() <= STATE_BOUND)
        })
    });
    let dead = nca_cases(2, |nca, g, _| {
        let mask = alive_mask(g);
        let next = nca.step(g, &dev).unwrap();
        (0..g.height()).all(|r| {
            (0..g.width()).all(|c| mask.is_updatable(r, c) || next.cell(r, c) == g.cell(r, c))
        })
    });
    let flag = nca_cases(3, |nca, g, rng| {
        let control = FrozenSpec::control(nca.layout(), [(rng.gen_range(0..g.height()), 0)]);
        let a = nca.step(g, &dev).unwrap();
        let b = nca.step(g, &control).unwrap();
        a.channel_plane(ChannelLayout::CONTROL_FLAG) == g.channel_plane(ChannelLayout::CONTROL_FLAG)
            && b.channel_plane(ChannelLayout::CONTROL_FLAG) == g.channel_plane(ChannelLayout::CONTROL_FLAG)
    });
    let order = nca_cases(4, |nca, g, rng| {
        let frozen = if rng.gen_bool(0.5) {
            dev.clone()
        } else {
            FrozenSpec::control(nca.layout(), [(g.height() / 2, g.width() / 2)])
        };
        let reference = nca.step(g, &frozen).unwrap();
        (0..3).all(|_| shuffled_update(nca, g, &frozen, rng) == reference)
    });
    let length = nca_cases(5, |nca, g, _| {
        let trace = nca.develop_trace(g.height(), g.width()).unwrap();
        let grown = nca.develop(g.height(), g.width()).unwrap();
        trace.len() == DEVELOPMENT_STEPS + 1 && DEVELOPMENT_STEPS == 10 && trace.last() == Some(&grown)
    });
    let total = bounded + dead + flag + order + length;
    outcome(
        total == 0,
        format!(
            "violations over 100 cases each: bounded {bounded}, dead cells {dead}, flag {flag}, \
             order {order}, development length {length}"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn activity_checks() -> Outcome {
    let a0 = sensor_activity(0.0, 60.0).unwrap();
    let a60 = sensor_activity(60.0, 60.0).unwrap();
    let exact = (a0 - 1.0).abs() < 1e-12 && (a60 - (-1.0f64).exp()).abs() < 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    for _ in 0..10_000 {
        let a = rng.gen_range(0.0..200.0);
        let b = rng.gen_range(0.0..200.0);
        let (near, far) = if a < b { (a, b) } else { (b, a) };
        if near < far && sensor_activity(near, 60.0).unwrap() <= sensor_activity(far, 60.0).unwrap() {
            violations += 1;
        }
    }
    outcome(
        exact && violations == 0,
        format!("activity(0) = {a0}, activity(60) = {a60:.15}, monotonicity violations {violations}/10000"),
    )
}

// ---------------------------------------------------------------- 4

fn sphere(x: &[f64]) -> f64 {
    -x.iter().map(|v| v * v).sum::<f64>()
}

fn rosenbrock(x: &[f64]) -> f64 {
    -x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum::<f64>()
}

/// Generations until some candidate reaches `target`, and the mean trajectory.
fn minimize(config: CmaConfig, f: fn(&[f64]) -> f64, target: f64, budget: u64) -> (Option<u64>, Vec<Vec<f64>>) {
    let mut s = CmaState::new(&config).unwrap();
    let mut means = Vec::new();
    for g in 1..=budget {
        let pop = s.ask();
        let fit: Vec<f64> = pop.iter().map(|x| f(x)).collect();
        s.tell(&pop, &fit).unwrap();
        means.push(s.mean().to_vec());
        if fit.iter().any(|&v| v >= target) {
            return (Some(g), means);
        }
    }
    (None, means)
}

fn cma_regression() -> Outcome {
    let sphere_cfg = CmaConfig::new(10, 20, 0.5, 0).with_mean(vec![1.0; 10]);
    let (sph, means_a) = minimize(sphere_cfg.clone(), sphere, -1e-10, 2000);
    let (_, means_b) = minimize(sphere_cfg, sphere, -1e-10, 2000);
    let rosen_cfg = CmaConfig::new(5, CmaConfig::default_population(5), 0.5, 0);
    let (ros, _) = minimize(rosen_cfg, rosenbrock, -1e-6, 5000);
    let deterministic = means_a.len() == means_b.len()
        && means_a
            .iter()
            .zip(&means_b)
            .all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    outcome(
        sph.is_some() && ros.is_some() && deterministic,
        format!(
            "sphere-10 reached -1e-10 at generation {sph:?} (budget 2000), rosenbrock-5 within 1e-6 at \
             generation {ros:?} (budget 5000), seeded reruns bit-identical: {deterministic}"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn archive_semantics() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 256,
        failure_persistence: None,
        rng_algorithm: proptest::test_runner::RngAlgorithm::ChaCha,
        ..Config::default()
    });
    let ops = prop::collection::vec((0u32..3, 0u32..3, 1u32..6, -1.0f64..1.0), 1..80);
    let insert = runner.run(&ops, |ops| {
        let mut archive = Archive::new(3275);
        let mut model: BTreeMap<FeatureDescriptor, f64> = BTreeMap::new();
        for (i, &(s, a, b, fit)) in ops.iter().enumerate() {
            let d = FeatureDescriptor {
                sensors: s,
                actuators: a,
                body_parts: b,
            };
            let got = archive.insert(&[i as f64], fit, d, i as u64).unwrap();
            let expected = match model.get(&d) {
                None => InsertOutcome::NewCell,
                Some(&old) if fit > old => InsertOutcome::Improved(fit - old),
                Some(_) => InsertOutcome::Rejected,
            };
            prop_assert_eq!(got, expected);
            if got != InsertOutcome::Rejected {
                model.insert(d, fit);
            }
            prop_assert_eq!(archive.len(), model.len());
        }
        for (d, &f) in &model {
            prop_assert_eq!(archive.get(d).unwrap().fitness, f);
        }
        let qd = model.values().sum::<f64>() / 3275.0;
        prop_assert!((archive.metrics().qd_score - qd).abs() < 1e-15);
        Ok(())
    });

    let guard = runner.run(&(0usize..30, 1usize..20, 0u64..1200), |(size, emitters, stuck)| {
        let mut archive = Archive::new(1000);
        for i in 0..size {
            archive.insert(&[i as f64, 0.0], 1.0, (i, 0usize), 0).unwrap();
        }
        let cma = CmaState::new(&CmaConfig::new(2, 4, 0.3, 1)).unwrap();
        let mut e = Emitter::new(0, cma);
        e.set_stuck_counter(stuck);
        let mut rng = ChaCha8Rng::seed_from_u64(stuck);
        let restarted = e.maybe_restart(&archive, emitters, 0.01, 5, &mut rng).unwrap();
        prop_assert_eq!(restarted, size > emitters && stuck > STUCK_LIMIT);
        if restarted {
            prop_assert_eq!(e.cma().sigma(), 0.01);
            prop_assert_eq!(e.stuck_counter(), 0);
        }
        Ok(())
    });

    let closed = total_configurations(25);
    let brute = enumerate_configurations(25);
    let mut a = Archive::new(closed);
    a.insert(&[], 0.5, FeatureDescriptor { sensors: 2, actuators: 3, body_parts: 20 }, 0).unwrap();
    a.insert(&[], 0.3, FeatureDescriptor { sensors: 1, actuators: 2, body_parts: 4 }, 0).unwrap();
    let qd_ok = (a.metrics().qd_score - 0.8 / brute as f64).abs() < 1e-18;
    let pass = insert.is_ok() && guard.is_ok() && closed == 3275 && brute == 3275 && qd_ok;
    outcome(
        pass,
        format!(
            "insert/replace model {}, restart guard {}, configurations closed form {closed} / enumeration {brute}, \
             qd-score arithmetic {}",
            if insert.is_ok() { "ok" } else { "violated" },
            if guard.is_ok() { "ok" } else { "violated" },
            if qd_ok { "ok" } else { "wrong" }
        ),
    )
}

// ---------------------------------------------------------------- 6

fn desk_training() -> Outcome {
    let pool = thread_pool(None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig {
        task: Task::Lc,
        optimizer: Optimizer::CmaEs,
        lambda: Some(16),
        generations: Some(300),
        seed: 0,
        train_episodes: 12,
        checkpoint_every: 0,
        output_dir: dir.path().join("run"),
        ..RunConfig::default()
    };
    let baseline = run_baseline(&config, 1000, &pool).unwrap();
    let started = Instant::now();
    let out = Trainer::new(&config).unwrap().run(&pool).unwrap();
    let any_valid = out.log.iter().any(|r| r.valid_fraction > 0.0);
    let gate = baseline.mean + 3.0 * baseline.std;
    outcome(
        out.best_fitness >= gate && any_valid,
        format!(
            "best {:.5} vs baseline mean {:.5} + 3 x std {:.5} = {gate:.5}; valid robots seen: {any_valid}; \
             training took {:.0}s",
            out.best_fitness,
            baseline.mean,
            baseline.std,
            started.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 7

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn qd_comparison() -> Option<Outcome> {
    if std::env::var("NCRS_SLOW").map_or(true, |v| v != "1") {
        return None;
    }
    let budget: u64 = env_or("NCRS_QD_BUDGET", 50_000);
    let seeds: u64 = env_or("NCRS_QD_SEEDS", 5);
    let emitters: usize = env_or("NCRS_QD_EMITTERS", 5);
    let lambda = 16;
    let pool = thread_pool(None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..seeds {
        let base = RunConfig {
            lambda: Some(lambda),
            generations: Some(budget / lambda as u64),
            emitters,
            seed,
            checkpoint_every: 0,
            ..RunConfig::default()
        };
        let cells = |optimizer: Optimizer| {
            let cfg = RunConfig {
                optimizer,
                output_dir: dir.path().join(format!("{optimizer}-{seed}")),
                ..base.clone()
            };
            Trainer::new(&cfg).unwrap().run(&pool).unwrap().archive_size
        };
        let me = cells(Optimizer::CmaMe);
        let es = cells(Optimizer::CmaEs);
        wins += usize::from(me > es);
        rows.push(format!("seed {seed}: cma-me {me} vs cma-es {es}"));
    }
    let needed = (seeds as usize * 4).div_ceil(5);
    Some(outcome(
        wins >= needed,
        format!(
            "{budget} evaluations per run, {emitters} emitters, lambda {lambda}; CMA-ME ahead in {wins}/{seeds} \
             (need {needed}): {}",
            rows.join("; ")
        ),
    ))
}

// ---------------------------------------------------------------- 8

fn pipeline_determinism() -> Outcome {
    let pool = thread_pool(None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let config = RunConfig {
            lambda: Some(16),
            generations: Some(20),
            seed: 8,
            checkpoint_every: 0,
            output_dir: dir.path().join(name),
            ..RunConfig::default()
        };
        let out = Trainer::new(&config).unwrap().run(&pool).unwrap();
        let file = GenomeFile::load(&config.output_dir.join("best.genome")).unwrap();
        let report = evaluate_file(&file, Task::Lc, 100, 8, &config.physics, &config.scenario, &pool).unwrap();
        let log = std::fs::read_to_string(config.output_dir.join("log.csv")).unwrap();
        // Drop the wall-clock column.
        let log: Vec<String> = log
            .lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
            .collect();
        (out, log, report)
    };
    let (out_a, log_a, rep_a) = run("a");
    let (out_b, log_b, rep_b) = run("b");
    let same_log = log_a == log_b && log_a.len() == 21;
    let same_genome = out_a.best_genome == out_b.best_genome;
    let same_eval = rep_a == rep_b;
    outcome(
        same_log && same_genome && same_eval,
        format!(
            "logs identical: {same_log}, best genomes identical: {same_genome}, evaluation identical: {same_eval} \
             (success {:.1}%, mean fitness {:.6})",
            rep_a.success_pct(),
            rep_a.mean_fitness
        ),
    )
}

// ---------------------------------------------------------------- 9

fn physics_checks() -> Outcome {
    let params = PhysicsParams::default();
    let arena = Arena::open(60.0);
    let morph = Morphology::from_text(".....\n.TTT.\n.WTW.\n.TTT.\n.....", 3).unwrap();
    let body = RobotBody::new(&morph, 1.0, params.module_mass).unwrap();
    let start = WorldState {
        robot: RigidState::at_rest([30.0, 20.0], std::f64::consts::FRAC_PI_2),
        object: [5.0, 55.0],
        ball_velocity: [0.0, 0.0],
        target: None,
        has_ball: false,
        step: 0,
    };
    let drive = |cmd: &dyn Fn(usize) -> f64, steps: usize, metric: &dyn Fn(&WorldState, &WorldState) -> f64| {
        let commands: BTreeMap<_, _> = morph.wheel_cells().map(|(r, c)| ((r, c), cmd(c))).collect();
        let mut w = start.clone();
        let mut worst: f64 = 0.0;
        for _ in 0..steps {
            let next = env_step(&w, &body, &commands, &arena, &params).unwrap();
            worst = worst.max(metric(&w, &next));
            w = next;
        }
        (worst, w)
    };
    let (rest_drift, _) = drive(&|_| 0.0, 100, &|a, b| {
        distance(a.robot.position, b.robot.position) + (a.robot.heading - b.robot.heading).abs()
    });
    let (turn, straight_end) = drive(&|_| 0.8, 60, &|a, b| (a.robot.heading - b.robot.heading).abs());
    let (shift, spin_end) = drive(&|c| if c < 2 { 0.8 } else { -0.8 }, 100, &|a, b| {
        distance(a.robot.position, b.robot.position)
    });
    let moved = straight_end.robot.position[1] - start.robot.position[1];
    let spun = (spin_end.robot.heading - start.robot.heading).abs();

    let scenario = ScenarioParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let radius = 0.5 * scenario.module_size;
    let mut blocked = 0;
    for _ in 0..1000 {
        let o = generate_obstacle(&mut rng, scenario.passage_width(), scenario.wall_roughness, &scenario).unwrap();
        let (lo, hi) = (o.passage_center_x - o.passage_width / 2.0, o.passage_center_x + o.passage_width / 2.0);
        let segments = o.segments();
        let strip_free = segments.iter().all(|s| s.a[0].max(s.b[0]) <= lo + 1e-9 || s.a[0].min(s.b[0]) >= hi - 1e-9);
        let inside = lo >= 0.0 && hi <= scenario.playfield;
        // A module disc travelling straight up the passage centre.
        let clears = (0..=600).all(|k| {
            let p = [o.passage_center_x, k as f64 * scenario.playfield / 600.0];
            segments.iter().all(|s| distance(s.closest_point(p), p) > radius)
        });
        if !(strip_free && inside && clears) {
            blocked += 1;
        }
    }
    let pass = rest_drift == 0.0 && turn < 1e-9 && moved > 1.0 && shift < 1e-9 && spun > 1.0 && blocked == 0;
    outcome(
        pass,
        format!(
            "rest drift {rest_drift:e}; symmetric drive max |dheading| {turn:.2e}/step over {moved:.2} units; \
             mirrored drive max |dposition| {shift:.2e}/step over {spun:.2} rad; inadmissible corridors {blocked}/1000"
        ),
    )
}

// ----------------------------------------------------------------

type Criterion = (u32, &'static str, fn() -> Option<Outcome>);

fn main() {
    let criteria: Vec<Criterion> = vec![
        (1, "parameter counts", || Some(parameter_counts())),
        (2, "NCA invariants", || Some(nca_invariants())),
        (3, "sensor activity", || Some(activity_checks())),
        (4, "CMA-ES regression", || Some(cma_regression())),
        (5, "archive semantics", || Some(archive_semantics())),
        (6, "desk-scale LC training beats random baseline", || Some(desk_training())),
        (7, "CMA-ME fills more cells than CMA-ES (slow)", qd_comparison),
        (8, "pipeline determinism", || Some(pipeline_determinism())),
        (9, "physics and corridor checks", || Some(physics_checks())),
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run));
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(Some(o)) => {
                let verdict = if o.pass { "PASS" } else { "FAIL" };
                println!("acceptance {id} {verdict}: {name} [{secs:.1}s] {}", o.detail);
                failed += usize::from(!o.pass);
            }
            Ok(None) => println!("acceptance {id} SKIP: {name} (set NCRS_SLOW=1 to run)"),
            Err(_) => {
                println!("acceptance {id} FAIL: {name} [{secs:.1}s] panicked");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
