//! Robot bodies read out of a developed grid.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};
use crate::nca::{CellGrid, ChannelLayout, ALIVE_THRESHOLD};
use crate::task::Task;

/// Fitness credit per satisfied requirement slot of an unusable body.
pub const INVALID_SLOT_CREDIT: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModuleKind {
    Tissue,
    /// Light sensor in the light-chasing tasks, ball sensor in ball-to-target.
    LightBallSensor,
    TargetSensor,
    Wheel,
}

impl ModuleKind {
    pub fn symbol(self) -> char {
        match self {
            ModuleKind::Tissue => 'T',
            ModuleKind::LightBallSensor => 'S',
            ModuleKind::TargetSensor => 'A',
            ModuleKind::Wheel => 'W',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        match c {
            'T' => Some(ModuleKind::Tissue),
            'S' => Some(ModuleKind::LightBallSensor),
            'A' => Some(ModuleKind::TargetSensor),
            'W' => Some(ModuleKind::Wheel),
            _ => None,
        }
    }

    pub fn is_sensor(self) -> bool {
        matches!(self, ModuleKind::LightBallSensor | ModuleKind::TargetSensor)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ModuleCounts {
    pub tissue: usize,
    pub light_ball_sensors: usize,
    pub target_sensors: usize,
    pub wheels: usize,
}

impl ModuleCounts {
    pub fn sensors(&self) -> usize {
        self.light_ball_sensors + self.target_sensors
    }

    pub fn total(&self) -> usize {
        self.tissue + self.sensors() + self.wheels
    }
}

/// A 4-connected set of typed modules on the growth grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Morphology {
    height: usize,
    width: usize,
    n_type_channels: usize,
    seed_cell: (usize, usize),
    cells: BTreeMap<(usize, usize), ModuleKind>,
    counts: ModuleCounts,
}

impl Morphology {
    /// Builds a morphology from an explicit module map. Cells outside the
    /// 4-connected component of the grid centre are dropped.
    pub fn from_cells(
        height: usize,
        width: usize,
        n_type_channels: usize,
        cells: BTreeMap<(usize, usize), ModuleKind>,
    ) -> Result<Self> {
        for (&(r, c), &kind) in &cells {
            if r >= height || c >= width {
                return Err(Error::invalid(format!("module at ({r},{c}) outside {height}x{width} grid")));
            }
            if kind.type_index(n_type_channels).is_none() {
                return Err(Error::Layout(format!(
                    "{kind:?} not available with {n_type_channels} type channels"
                )));
            }
        }
        let seed_cell = (height / 2, width / 2);
        let cells = connected_component(cells, seed_cell);
        let counts = count(&cells);
        Ok(Self {
            height,
            width,
            n_type_channels,
            seed_cell,
            cells,
            counts,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_type_channels(&self) -> usize {
        self.n_type_channels
    }

    pub fn seed_cell(&self) -> (usize, usize) {
        self.seed_cell
    }

    pub fn cells(&self) -> &BTreeMap<(usize, usize), ModuleKind> {
        &self.cells
    }

    pub fn kind_at(&self, row: usize, col: usize) -> Option<ModuleKind> {
        self.cells.get(&(row, col)).copied()
    }

    pub fn counts(&self) -> ModuleCounts {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn sensor_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells.iter().filter(|(_, k)| k.is_sensor()).map(|(&p, _)| p)
    }

    pub fn wheel_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells
            .iter()
            .filter(|(_, &k)| k == ModuleKind::Wheel)
            .map(|(&p, _)| p)
    }

    /// One line per grid row: `.` empty, `T` tissue, `S` light/ball sensor,
    /// `A` target sensor, `W` wheel.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.height * (self.width + 1));
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(self.kind_at(r, c).map_or('.', ModuleKind::symbol));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, n_type_channels: usize) -> Result<Self> {
        let rows: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        if height == 0 || rows.iter().any(|r| r.chars().count() != width) {
            return Err(Error::invalid("morphology text must be a non-empty rectangle"));
        }
        let mut cells = BTreeMap::new();
        for (r, line) in rows.iter().enumerate() {
            for (c, ch) in line.chars().enumerate() {
                if ch == '.' {
                    continue;
                }
                let kind = ModuleKind::from_symbol(ch)
                    .ok_or_else(|| Error::invalid(format!("unknown module symbol '{ch}'")))?;
                cells.insert((r, c), kind);
            }
        }
        Self::from_cells(height, width, n_type_channels, cells)
    }
}

fn connected_component(
    mut cells: BTreeMap<(usize, usize), ModuleKind>,
    seed: (usize, usize),
) -> BTreeMap<(usize, usize), ModuleKind> {
    let mut kept = BTreeMap::new();
    let Some(kind) = cells.remove(&seed) else {
        return kept;
    };
    kept.insert(seed, kind);
    let mut queue = VecDeque::from([seed]);
    while let Some((r, c)) = queue.pop_front() {
        let neighbours = [
            r.checked_sub(1).map(|r| (r, c)),
            Some((r + 1, c)),
            c.checked_sub(1).map(|c| (r, c)),
            Some((r, c + 1)),
        ];
        for p in neighbours.into_iter().flatten() {
            if let Some(k) = cells.remove(&p) {
                kept.insert(p, k);
                queue.push_back(p);
            }
        }
    }
    kept
}

fn count(cells: &BTreeMap<(usize, usize), ModuleKind>) -> ModuleCounts {
    let mut counts = ModuleCounts::default();
    for kind in cells.values() {
        match kind {
            ModuleKind::Tissue => counts.tissue += 1,
            ModuleKind::LightBallSensor => counts.light_ball_sensors += 1,
            ModuleKind::TargetSensor => counts.target_sensors += 1,
            ModuleKind::Wheel => counts.wheels += 1,
        }
    }
    counts
}

/// Reads the body out of a developed grid: cells with body > 0.1, typed by
/// the largest type channel (lowest index on ties), restricted to the
/// 4-connected component of the seed cell.
pub fn extract_body(grid: &CellGrid, layout: &ChannelLayout) -> Morphology {
    let types = layout.type_channels();
    let mut cells = BTreeMap::new();
    for r in 0..grid.height() {
        for c in 0..grid.width() {
            let cell = grid.cell(r, c);
            if cell[ChannelLayout::BODY] <= ALIVE_THRESHOLD {
                continue;
            }
            let mut best = 0;
            for (i, &v) in cell[types.clone()].iter().enumerate() {
                if v > cell[types.start + best] {
                    best = i;
                }
            }
            let kind = ModuleKind::from_type_index(best, layout.n_type_channels())
                .expect("index within the layout's type channels");
            cells.insert((r, c), kind);
        }
    }
    let seed_cell = grid.center();
    let cells = connected_component(cells, seed_cell);
    let counts = count(&cells);
    Morphology {
        height: grid.height(),
        width: grid.width(),
        n_type_channels: layout.n_type_channels(),
        seed_cell,
        cells,
        counts,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValidityReport {
    pub valid: bool,
    pub satisfied_slots: u32,
    pub required_slots: u32,
}

/// Checks the task's minimum equipment: one light sensor and two wheels for
/// the light tasks; one ball sensor, one target sensor and two wheels for
/// ball-to-target.
pub fn validate(morphology: &Morphology, task: Task) -> Result<ValidityReport> {
    if morphology.n_type_channels() != task.n_type_channels() {
        return Err(Error::Layout(format!(
            "morphology has {} type channels but task {task} needs {}",
            morphology.n_type_channels(),
            task.n_type_channels()
        )));
    }
    let counts = morphology.counts();
    let wheel_slots = counts.wheels.min(2) as u32;
    let light_slot = counts.light_ball_sensors.min(1) as u32;
    let (satisfied, required) = match task {
        Task::Lc | Task::Lco => (light_slot + wheel_slots, 3),
        Task::Cbt => (light_slot + counts.target_sensors.min(1) as u32 + wheel_slots, 4),
    };
    Ok(ValidityReport {
        valid: satisfied == required,
        satisfied_slots: satisfied,
        required_slots: required,
    })
}

/// Partial credit for a body that is not simulated.
pub fn invalid_score(report: &ValidityReport) -> Result<f64> {
    if report.valid {
        return Err(Error::invalid("partial credit is only defined for invalid bodies"));
    }
    Ok(INVALID_SLOT_CREDIT * f64::from(report.satisfied_slots))
}
