use std::path::Path;

use ncrs_core::config::{Optimizer, RunConfig};
use ncrs_core::genome_io::GenomeFile;
use ncrs_core::harness::archive_io::{load_archive, read_index, INDEX_FILE};
use ncrs_core::harness::baseline::{baseline_genome, run_baseline};
use ncrs_core::harness::evaluate::evaluate_file;
use ncrs_core::harness::render::{kind_for_color, render_genome, Image, RenderOptions, BACKGROUND, STRIP_GAP};
use ncrs_core::harness::runlog::{read_log, write_log};
use ncrs_core::harness::thread_pool;
use ncrs_core::harness::train::{Trainer, ARCHIVE_DIR, BEST_GENOME_FILE, CHECKPOINT_FILE, CONFIG_FILE, LOG_FILE};
use ncrs_core::morphology::{extract_body, validate};
use ncrs_core::{genome_length, Activation, Error, Genome, Morphology, Nca, Task};
use rayon::ThreadPool;

fn pool() -> ThreadPool {
    thread_pool(Some(1)).unwrap()
}

fn small_run(dir: &Path, optimizer: Optimizer, generations: u64) -> RunConfig {
    RunConfig {
        optimizer,
        lambda: Some(6),
        emitters: 2,
        generations: Some(generations),
        sigma0: 0.3,
        seed: 4,
        train_episodes: 2,
        checkpoint_every: 3,
        output_dir: dir.to_path_buf(),
        ..RunConfig::default()
    }
}

/// First random LC genome that grows into a usable body.
fn valid_lc_genome() -> GenomeFile {
    let layout = Task::Lc.layout();
    (0..)
        .map(|i| Genome::new(baseline_genome(1, i, genome_length(&layout), 0.3)).unwrap())
        .find(|g| {
            let nca = Nca::new(layout, Activation::Relu, g.clone()).unwrap();
            validate(&extract_body(&nca.develop(5, 5).unwrap(), &layout), Task::Lc).unwrap().valid
        })
        .map(|g| GenomeFile::new(Task::Lc, Activation::Relu, 5, 5, g).unwrap())
        .unwrap()
}

#[test]
fn training_writes_a_complete_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_run(tmp.path(), Optimizer::CmaEs, 7);
    let out = Trainer::new(&config).unwrap().run(&pool()).unwrap();
    for f in [CONFIG_FILE, LOG_FILE, BEST_GENOME_FILE, CHECKPOINT_FILE] {
        assert!(tmp.path().join(f).is_file(), "{f} missing");
    }
    let log = read_log(&tmp.path().join(LOG_FILE)).unwrap();
    assert_eq!(log.len(), 7);
    assert_eq!(log, out.log);
    for (i, row) in log.iter().enumerate() {
        assert_eq!(row.generation, i as u64 + 1);
        assert_eq!(row.evaluations, 6 * (i as u64 + 1));
        assert!(row.best_fitness >= row.generation_best);
    }
    assert!(log.windows(2).all(|w| w[1].best_fitness >= w[0].best_fitness));
    assert_eq!(out.best_fitness, log[6].best_fitness);
    let saved = GenomeFile::load(&tmp.path().join(BEST_GENOME_FILE)).unwrap();
    assert_eq!(Some(saved.genome.params()), out.best_genome.as_deref());
    assert_eq!(RunConfig::load(&tmp.path().join(CONFIG_FILE)).unwrap(), config);
}

#[test]
fn resumed_run_matches_an_uninterrupted_one() {
    let tmp = tempfile::tempdir().unwrap();
    let straight = small_run(&tmp.path().join("straight"), Optimizer::CmaMe, 8);
    let full = Trainer::new(&straight).unwrap().run(&pool()).unwrap();

    let split_dir = tmp.path().join("split");
    let mut first = small_run(&split_dir, Optimizer::CmaMe, 8);
    first.generations = Some(5);
    Trainer::new(&first).unwrap().run(&pool()).unwrap();
    let mut resumed = Trainer::resume(&split_dir).unwrap();
    assert_eq!(resumed.generation(), 5);
    resumed.set_generation_budget(8);
    let rest = resumed.run(&pool()).unwrap();

    assert_eq!(rest.log.len(), full.log.len());
    for (a, b) in rest.log.iter().zip(&full.log) {
        assert!(a.same_progress(b), "{a:?} vs {b:?}");
    }
    assert_eq!(rest.best_genome, full.best_genome);
    assert_eq!(read_log(&split_dir.join(LOG_FILE)).unwrap().len(), 8);
}

#[test]
fn resume_discards_rows_after_the_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_run(tmp.path(), Optimizer::CmaEs, 3);
    Trainer::new(&config).unwrap().run(&pool()).unwrap();
    // A crash between a log append and the next checkpoint leaves extra rows.
    let path = tmp.path().join(LOG_FILE);
    let mut rows = read_log(&path).unwrap();
    rows.push(rows[2].clone());
    write_log(&path, &rows).unwrap();
    let resumed = Trainer::resume(tmp.path()).unwrap();
    assert_eq!(resumed.log().len(), 3);
    assert_eq!(resumed.generation(), 3);
}

#[test]
fn cma_me_run_saves_its_archive() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_run(tmp.path(), Optimizer::CmaMe, 6);
    let out = Trainer::new(&config).unwrap().run(&pool()).unwrap();
    let dir = tmp.path().join(ARCHIVE_DIR);
    let index = read_index(&dir).unwrap();
    assert_eq!(index.len(), out.archive_size);
    assert!(dir.join(INDEX_FILE).is_file());
    let (archive, task) = load_archive(&dir, config.archive_size()).unwrap();
    assert_eq!(task, Some(Task::Lc));
    assert_eq!(archive.len(), out.archive_size);
    for row in &index {
        let g = GenomeFile::load(&dir.join(&row.genome_file)).unwrap();
        assert_eq!(g.genome.len(), genome_length(&Task::Lc.layout()));
    }
    let last = out.log.last().unwrap();
    assert_eq!(last.archive_size, out.archive_size);
}

#[test]
fn zero_genome_is_an_invalid_single_cell() {
    let file = GenomeFile::new(Task::Lc, Activation::Relu, 5, 5, Genome::zeros(genome_length(&Task::Lc.layout()))).unwrap();
    let c = RunConfig::default();
    let report = evaluate_file(&file, Task::Lc, 12, 0, &c.physics, &c.scenario, &pool()).unwrap();
    assert!(!report.valid);
    assert_eq!(report.success_count, 0);
    assert_eq!(report.success_pct(), 0.0);
    assert_eq!(report.per_region.iter().map(|r| r.1).sum::<usize>(), 12);
    let body = Morphology::from_text(&report.morphology_text, 3).unwrap();
    assert_eq!(body.len(), 1);
}

#[test]
fn evaluation_rejects_a_mismatched_layout() {
    let file = GenomeFile::new(Task::Lc, Activation::Relu, 5, 5, Genome::zeros(genome_length(&Task::Lc.layout()))).unwrap();
    let c = RunConfig::default();
    let err = evaluate_file(&file, Task::Cbt, 4, 0, &c.physics, &c.scenario, &pool()).unwrap_err();
    assert!(matches!(err, Error::Layout(_)), "{err}");
    // Same layout, other task: allowed.
    evaluate_file(&file, Task::Lco, 4, 0, &c.physics, &c.scenario, &pool()).unwrap();
}

#[test]
fn evaluation_is_deterministic_for_a_valid_body() {
    let file = valid_lc_genome();
    let c = RunConfig::default();
    let a = evaluate_file(&file, Task::Lc, 8, 3, &c.physics, &c.scenario, &pool()).unwrap();
    let b = evaluate_file(&file, Task::Lc, 8, 3, &c.physics, &c.scenario, &thread_pool(Some(2)).unwrap()).unwrap();
    assert!(a.valid);
    assert_eq!(a, b);
    assert!(a.mean_fitness > 0.0 && a.mean_fitness <= 1.0);
}

fn load_ppm(path: &Path) -> Image {
    Image::read_ppm(std::fs::File::open(path).unwrap()).unwrap()
}

#[test]
fn render_writes_frames_strips_and_morphology() {
    let tmp = tempfile::tempdir().unwrap();
    let file = valid_lc_genome();
    let c = RunConfig::default();
    let opts = RenderOptions::default();
    let summary = render_genome(&file, Task::Lc, tmp.path(), &c.physics, &c.scenario, &opts).unwrap();
    assert!(summary.valid);
    assert_eq!(summary.frames.len(), c.scenario.episode_steps);
    assert!(summary.frames.iter().all(|p| p.is_file()));
    assert_eq!(summary.strips.len(), 12);
    let trajectory = std::fs::read_to_string(summary.trajectory.unwrap()).unwrap();
    assert_eq!(trajectory.lines().count(), c.scenario.episode_steps + 1, "header plus one row per step");

    // Morphology image colours agree with the text export cell by cell.
    let text = std::fs::read_to_string(tmp.path().join("morphology.txt")).unwrap();
    let body = Morphology::from_text(&text, 3).unwrap();
    let img = load_ppm(&summary.morphology);
    let px_per_cell = img.width() / body.width();
    assert_eq!(img.height(), body.height() * px_per_cell);
    for r in 0..body.height() {
        for col in 0..body.width() {
            let px = img.get(col * px_per_cell + px_per_cell / 2, r * px_per_cell + px_per_cell / 2);
            match body.kind_at(r, col) {
                Some(kind) => assert_eq!(kind_for_color(px), Some(kind)),
                None => assert_eq!(px, BACKGROUND),
            }
        }
    }

    // One panel per channel in every strip.
    let n_total = Task::Lc.layout().n_total();
    for strip in &summary.strips {
        let img = load_ppm(strip);
        assert_eq!(img.width(), n_total * 5 * opts.cell_px + (n_total - 1) * STRIP_GAP);
        assert_eq!(img.height(), 5 * opts.cell_px);
    }
}

#[test]
fn invalid_bodies_render_without_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let file = GenomeFile::new(Task::Lc, Activation::Relu, 5, 5, Genome::zeros(genome_length(&Task::Lc.layout()))).unwrap();
    let c = RunConfig::default();
    let summary = render_genome(&file, Task::Lc, tmp.path(), &c.physics, &c.scenario, &RenderOptions::default()).unwrap();
    assert!(!summary.valid);
    assert!(summary.frames.is_empty());
    assert!(summary.trajectory.is_none());
    assert_eq!(summary.strips.len(), 11);
}

#[test]
fn baseline_is_reproducible() {
    let config = RunConfig {
        train_episodes: 2,
        sigma0: 0.3,
        ..RunConfig::default()
    };
    let a = run_baseline(&config, 40, &pool()).unwrap();
    let b = run_baseline(&config, 40, &thread_pool(Some(3)).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.genomes, 40);
    assert!(a.max >= a.mean && a.std >= 0.0);
    assert!(a.valid_rate > 0.0, "sigma 0.3 should grow some usable bodies");
}
