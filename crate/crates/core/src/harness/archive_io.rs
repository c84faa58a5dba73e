//! Archive directories: `index.csv` plus one genome file per elite.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cmame::{Archive, Elite, FeatureDescriptor, QdMetrics};
use crate::error::{Error, IoContext, Result};
use crate::genome_io::GenomeFile;
use crate::nca::{Activation, Genome};
use crate::task::Task;

pub const INDEX_FILE: &str = "index.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexRow {
    pub sensors: u32,
    pub actuators: u32,
    pub body_parts: u32,
    pub fitness: f64,
    pub generation: u64,
    pub genome_file: String,
}

pub fn elite_file_name(d: &FeatureDescriptor) -> String {
    format!("elite_s{}_a{}_b{}.genome", d.sensors, d.actuators, d.body_parts)
}

/// Replaces the directory's contents with the archive.
pub fn save_archive(
    dir: &Path,
    archive: &Archive<FeatureDescriptor>,
    task: Task,
    activation: Activation,
    grid: (usize, usize),
) -> Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).context(|| format!("clearing {}", dir.display()))?;
    }
    std::fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))?;
    let mut index = csv::Writer::from_path(dir.join(INDEX_FILE))?;
    for e in archive.elites() {
        let name = elite_file_name(&e.descriptor);
        GenomeFile::new(task, activation, grid.0, grid.1, Genome::new(e.genome.clone())?)?.save(&dir.join(&name))?;
        index.serialize(IndexRow {
            sensors: e.descriptor.sensors,
            actuators: e.descriptor.actuators,
            body_parts: e.descriptor.body_parts,
            fitness: e.fitness,
            generation: e.generation,
            genome_file: name,
        })?;
    }
    index.flush().context(|| format!("writing {}", dir.join(INDEX_FILE).display()))
}

pub fn read_index(dir: &Path) -> Result<Vec<IndexRow>> {
    let path = dir.join(INDEX_FILE);
    let file = std::fs::File::open(&path).context(|| format!("opening {}", path.display()))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|r| r.map_err(Into::into))
        .collect()
}

/// Loads the archive and the genome files it references.
pub fn load_archive(dir: &Path, total_configurations: usize) -> Result<(Archive<FeatureDescriptor>, Option<Task>)> {
    let mut archive = Archive::new(total_configurations);
    let mut task = None;
    for row in read_index(dir)? {
        let file = GenomeFile::load(&dir.join(&row.genome_file))?;
        if *task.get_or_insert(file.task) != file.task {
            return Err(Error::format(dir, "elites from different tasks"));
        }
        let d = FeatureDescriptor {
            sensors: row.sensors,
            actuators: row.actuators,
            body_parts: row.body_parts,
        };
        if archive.insert(file.genome.params(), row.fitness, d, row.generation)? != crate::cmame::InsertOutcome::NewCell {
            return Err(Error::format(dir, format!("duplicate cell {d:?}")));
        }
    }
    Ok((archive, task))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveStats {
    pub elites: usize,
    pub total_configurations: usize,
    pub metrics: QdMetrics,
    pub best: Option<(FeatureDescriptor, f64)>,
    pub mean_fitness: f64,
    /// `(body_parts, elite count)` for every occupied body size.
    pub by_body_parts: Vec<(u32, usize)>,
}

pub fn archive_stats(archive: &Archive<FeatureDescriptor>) -> ArchiveStats {
    let elites: Vec<&Elite<FeatureDescriptor>> = archive.elites().collect();
    let mut by_body = std::collections::BTreeMap::new();
    for e in &elites {
        *by_body.entry(e.descriptor.body_parts).or_insert(0) += 1;
    }
    ArchiveStats {
        elites: elites.len(),
        total_configurations: archive.total_configurations(),
        metrics: archive.metrics(),
        best: archive.best().map(|e| (e.descriptor, e.fitness)),
        mean_fitness: if elites.is_empty() {
            0.0
        } else {
            elites.iter().map(|e| e.fitness).sum::<f64>() / elites.len() as f64
        },
        by_body_parts: by_body.into_iter().collect(),
    }
}

impl std::fmt::Display for ArchiveStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "elites: {}", self.elites)?;
        writeln!(f, "total_configurations: {}", self.total_configurations)?;
        writeln!(f, "cells_filled_pct: {:.4}", self.metrics.cells_filled_pct)?;
        writeln!(f, "qd_score: {:.6e}", self.metrics.qd_score)?;
        writeln!(f, "mean_elite_fitness: {:.6}", self.mean_fitness)?;
        match self.best {
            Some((d, fit)) => writeln!(
                f,
                "best: {fit:.6} (sensors {}, actuators {}, body_parts {})",
                d.sensors, d.actuators, d.body_parts
            )?,
            None => writeln!(f, "best: none")?,
        }
        for (b, n) in &self.by_body_parts {
            writeln!(f, "body_parts {b:>2}: {n}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nca::genome_length;

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let n = genome_length(&Task::Lc.layout());
        let mut a = Archive::new(3275);
        let d1 = FeatureDescriptor { sensors: 1, actuators: 2, body_parts: 5 };
        let d2 = FeatureDescriptor { sensors: 2, actuators: 2, body_parts: 9 };
        a.insert(&vec![0.5; n], 0.25, d1, 3).unwrap();
        a.insert(&vec![-0.5; n], 0.5, d2, 7).unwrap();
        let path = dir.path().join("archive");
        save_archive(&path, &a, Task::Lc, Activation::Relu, (5, 5)).unwrap();
        let (back, task) = load_archive(&path, 3275).unwrap();
        assert_eq!(back, a);
        assert_eq!(task, Some(Task::Lc));
        let s = archive_stats(&back);
        assert_eq!(s.best, Some((d2, 0.5)));
        assert_eq!(s.by_body_parts, vec![(5, 1), (9, 1)]);
    }
}
