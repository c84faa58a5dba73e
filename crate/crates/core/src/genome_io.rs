//! Binary genome files.
//!
//! Layout (little endian): magic `NCRS`, format version `u32`, then `u32`
//! fields for channel count, grid height, grid width, task id and activation
//! id, a `u64` parameter count and the parameters as `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{BinReader, BinWriter};
use crate::error::{Error, IoContext, Result};
use crate::nca::{genome_length, Activation, Genome, MAX_CHANNELS};
use crate::task::Task;

const MAGIC: &[u8; 4] = b"NCRS";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct GenomeFile {
    pub task: Task,
    pub activation: Activation,
    pub grid_height: usize,
    pub grid_width: usize,
    pub genome: Genome,
}

impl GenomeFile {
    pub fn new(task: Task, activation: Activation, grid_height: usize, grid_width: usize, genome: Genome) -> Result<Self> {
        let expected = genome_length(&task.layout());
        if genome.len() != expected {
            return Err(Error::GenomeLength {
                expected,
                actual: genome.len(),
            });
        }
        Ok(Self {
            task,
            activation,
            grid_height,
            grid_width,
            genome,
        })
    }

    pub fn write_to<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = BinWriter::new(w);
        out.bytes(MAGIC)?;
        out.u32(VERSION)?;
        out.u32(self.task.layout().n_total() as u32)?;
        out.u32(self.grid_height as u32)?;
        out.u32(self.grid_width as u32)?;
        out.u32(self.task.id())?;
        out.u32(self.activation.id())?;
        out.f64s(self.genome.params())?;
        out.into_inner().flush()
    }

    pub fn read_from<R: Read>(r: R, path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format(path, msg);
        let mut input = BinReader::new(r);
        let io = |e: std::io::Error| Error::format(path, e.to_string());
        input.expect(MAGIC).map_err(io)?;
        let version = input.u32().map_err(io)?;
        if version != VERSION {
            return Err(bad(format!("unsupported genome file version {version}")));
        }
        let n_total = input.u32().map_err(io)? as usize;
        let grid_height = input.u32().map_err(io)? as usize;
        let grid_width = input.u32().map_err(io)? as usize;
        let task_id = input.u32().map_err(io)?;
        let task = Task::from_id(task_id).ok_or_else(|| bad(format!("unknown task id {task_id}")))?;
        let act_id = input.u32().map_err(io)?;
        let activation = Activation::from_id(act_id).ok_or_else(|| bad(format!("unknown activation id {act_id}")))?;
        if n_total != task.layout().n_total() || n_total > MAX_CHANNELS {
            return Err(Error::Layout(format!(
                "{}: {n_total} channels recorded but task {task} uses {}",
                path.display(),
                task.layout().n_total()
            )));
        }
        let params = input.f64s(1 << 24).map_err(io)?;
        input.finish().map_err(io)?;
        let genome = Genome::new(params)?;
        Self::new(task, activation, grid_height, grid_width, genome)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).context(|| format!("creating {}", path.display()))?;
        self.write_to(BufWriter::new(f)).context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).context(|| format!("opening {}", path.display()))?;
        Self::read_from(BufReader::new(f), path)
    }
}
