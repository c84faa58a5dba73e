use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ncrs_core::config::{Optimizer, RunConfig};
use ncrs_core::genome_io::GenomeFile;
use ncrs_core::harness::archive_io::{archive_stats, load_archive};
use ncrs_core::harness::baseline::run_baseline;
use ncrs_core::harness::evaluate::evaluate_file;
use ncrs_core::harness::render::{render_genome, RenderOptions};
use ncrs_core::harness::thread_pool;
use ncrs_core::harness::train::{Trainer, ARCHIVE_DIR};
use ncrs_core::{Activation, Error, Task};

#[derive(Parser)]
#[command(name = "ncrs", version, about = "Grow and train modular robots with neural cellular automata")]
struct Cli {
    /// Worker threads for evaluation (default: all cores).
    #[arg(long, global = true, env = "NCRS_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a genome with CMA-ES or CMA-ME.
    Train(TrainArgs),
    /// Test a genome file on freshly seeded episodes.
    Evaluate(EvaluateArgs),
    /// Write frames, channel strips and a trajectory for one episode.
    Render(RenderArgs),
    /// Fitness statistics of random genomes.
    Baseline(BaselineArgs),
    /// Summarize an archive directory.
    ArchiveStats(ArchiveStatsArgs),
    /// Print the default configuration file.
    DefaultConfig,
}

#[derive(Args)]
struct ConfigArgs {
    /// Key-value config file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        match &self.config {
            Some(path) => RunConfig::load(path),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    task: Option<Task>,
    /// cma-es or cma-me.
    #[arg(long)]
    optimizer: Option<Optimizer>,
    #[arg(long)]
    generations: Option<u64>,
    /// Population size (per emitter for cma-me).
    #[arg(long)]
    lambda: Option<usize>,
    #[arg(long)]
    emitters: Option<usize>,
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training episodes per evaluation.
    #[arg(long)]
    episodes: Option<usize>,
    /// relu or tanh.
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue the run in this directory from its checkpoint.
    #[arg(long, conflicts_with_all = ["config", "task", "optimizer", "lambda", "emitters", "sigma0", "seed", "episodes", "activation", "out"])]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    genome: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Defaults to the task recorded in the genome file.
    #[arg(long)]
    task: Option<Task>,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    genome: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Start region, 0 to 3.
    #[arg(long, default_value_t = 0)]
    region: usize,
    /// Pixels per world unit.
    #[arg(long, default_value_t = 6.0)]
    scale: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long, default_value_t = 1000)]
    genomes: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ArchiveStatsArgs {
    dir: PathBuf,
    /// Normalization constant (default: feasible descriptors of a 5x5 grid).
    #[arg(long)]
    total_configurations: Option<usize>,
}

fn write_report(out: Option<&Path>, text: &str) -> Result<(), Error> {
    print!("{text}");
    if let Some(path) = out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|source| Error::Io {
                context: format!("creating {}", parent.display()),
                source,
            })?;
        }
        std::fs::write(path, text).map_err(|source| Error::Io {
            context: format!("writing {}", path.display()),
            source,
        })?;
    }
    Ok(())
}

fn train(args: TrainArgs, jobs: Option<usize>) -> Result<(), Error> {
    let pool = thread_pool(jobs)?;
    let mut trainer = match &args.resume {
        Some(dir) => {
            let mut t = Trainer::resume(dir)?;
            if let Some(g) = args.generations {
                t.set_generation_budget(g);
            }
            log::info!("resuming {} at generation {}", dir.display(), t.generation());
            t
        }
        None => {
            let mut c = args.config.load()?;
            if let Some(v) = args.task {
                c.task = v;
            }
            if let Some(v) = args.optimizer {
                c.optimizer = v;
            }
            if let Some(v) = args.generations {
                c.generations = Some(v);
            }
            if let Some(v) = args.lambda {
                c.lambda = Some(v);
            }
            if let Some(v) = args.emitters {
                c.emitters = v;
            }
            if let Some(v) = args.sigma0 {
                c.sigma0 = v;
            }
            if let Some(v) = args.seed {
                c.seed = v;
            }
            if let Some(v) = args.episodes {
                c.train_episodes = v;
            }
            if let Some(v) = &args.activation {
                c.activation = Activation::from_name(v)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown activation '{v}'")))?;
            }
            if let Some(v) = args.checkpoint_every {
                c.checkpoint_every = v;
            }
            if let Some(v) = &args.out {
                c.output_dir = v.clone();
            }
            c.validate()?;
            Trainer::new(&c)?
        }
    };
    let out = trainer.run(&pool)?;
    let c = trainer.config();
    println!("output: {}", c.output_dir.display());
    println!("generations: {}", out.log.len());
    println!("evaluations: {}", out.log.last().map_or(0, |r| r.evaluations));
    println!("best_fitness: {:.6}", out.best_fitness);
    println!("archive_elites: {}", out.archive_size);
    println!("archive: {}", c.output_dir.join(ARCHIVE_DIR).display());
    Ok(())
}

fn evaluate(args: EvaluateArgs, jobs: Option<usize>) -> Result<(), Error> {
    let pool = thread_pool(jobs)?;
    let config = args.config.load()?;
    let file = GenomeFile::load(&args.genome)?;
    let task = args.task.unwrap_or(file.task);
    let report = evaluate_file(&file, task, args.episodes, args.seed, &config.physics, &config.scenario, &pool)?;
    write_report(args.out.as_deref(), &report.to_string())
}

fn render(args: RenderArgs) -> Result<(), Error> {
    let config = args.config.load()?;
    let file = GenomeFile::load(&args.genome)?;
    let task = args.task.unwrap_or(file.task);
    let options = RenderOptions {
        seed: args.seed,
        region: args.region,
        scale: args.scale,
        ..RenderOptions::default()
    };
    let summary = render_genome(&file, task, &args.out, &config.physics, &config.scenario, &options)?;
    println!("valid_body: {}", summary.valid);
    println!("frames: {}", summary.frames.len());
    println!("channel_strips: {}", summary.strips.len());
    println!("morphology: {}", summary.morphology.display());
    if let Some(t) = &summary.trajectory {
        println!("trajectory: {}", t.display());
    }
    Ok(())
}

fn baseline(args: BaselineArgs, jobs: Option<usize>) -> Result<(), Error> {
    let pool = thread_pool(jobs)?;
    let mut config = args.config.load()?;
    if let Some(t) = args.task {
        config.task = t;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let stats = run_baseline(&config, args.genomes, &pool)?;
    write_report(args.out.as_deref(), &format!("task: {}\n{stats}", config.task))
}

fn archive_stats_cmd(args: ArchiveStatsArgs) -> Result<(), Error> {
    let total = args
        .total_configurations
        .unwrap_or_else(|| RunConfig::default().archive_size());
    let (archive, task) = load_archive(&args.dir, total)?;
    if let Some(t) = task {
        println!("task: {t}");
    }
    print!("{}", archive_stats(&archive));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a, cli.jobs),
        Command::Evaluate(a) => evaluate(a, cli.jobs),
        Command::Render(a) => render(a),
        Command::Baseline(a) => baseline(a, cli.jobs),
        Command::ArchiveStats(a) => archive_stats_cmd(a),
        Command::DefaultConfig => {
            print!("{}", RunConfig::default().to_text());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
