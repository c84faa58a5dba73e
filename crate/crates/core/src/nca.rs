//! The neural cellular automaton shared by the growth and control phases.
//!
//! Every cell carries `n_total` real channels laid out as
//! `[body, control_flag, types.., hidden.., io]`. One update applies the same
//! small network to the 3x3 neighbourhood of every updatable cell:
//!
//! ```text
//! patch (3*3*n) -> conv (30 filters) -> act -> dense (30) -> act -> dense (n) = delta
//! ```
//!
//! and commits `clip(old + delta, -5, 5)` synchronously.
//!
//! Genome layout, in order:
//!
//! | segment        | shape            | index                          |
//! |----------------|------------------|--------------------------------|
//! | conv weights   | 30 x (3*3*n)     | `f*9n + (ky*3 + kx)*n + ch`    |
//! | conv biases    | 30               |                                |
//! | dense-1 kernel | 30 x 30          | `in*30 + out`                  |
//! | dense-1 biases | 30               |                                |
//! | dense-2 kernel | 30 x n           | `in*n + out`                   |
//! | dense-2 biases | n                |                                |
//!
//! Cells outside the grid read as zero.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::morphology::{ModuleKind, Morphology};

pub const CONV_FILTERS: usize = 30;
pub const DENSE_UNITS: usize = 30;
pub const ALIVE_THRESHOLD: f64 = 0.1;
pub const STATE_BOUND: f64 = 5.0;
pub const DEVELOPMENT_STEPS: usize = 10;
pub const STEPS_PER_ACTION: usize = 2;
pub const DEFAULT_HIDDEN: usize = 6;
pub const DEFAULT_GRID: usize = 5;
/// Upper bound on `n_total` supported by the stack-allocated patch buffer.
pub const MAX_CHANNELS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ChannelLayout {
    n_type_channels: usize,
    n_hidden: usize,
}

impl ChannelLayout {
    pub const BODY: usize = 0;
    pub const CONTROL_FLAG: usize = 1;

    pub fn new(n_type_channels: usize, n_hidden: usize) -> Result<Self> {
        if !(3..=4).contains(&n_type_channels) {
            return Err(Error::Layout(format!(
                "expected 3 or 4 module-type channels, got {n_type_channels}"
            )));
        }
        if 3 + n_type_channels + n_hidden > MAX_CHANNELS {
            return Err(Error::Layout(format!(
                "at most {MAX_CHANNELS} channels are supported, got {}",
                3 + n_type_channels + n_hidden
            )));
        }
        Ok(Self {
            n_type_channels,
            n_hidden,
        })
    }

    /// Tissue, light sensor, wheel.
    pub fn light_chasing() -> Self {
        Self {
            n_type_channels: 3,
            n_hidden: DEFAULT_HIDDEN,
        }
    }

    /// Tissue, ball sensor, target sensor, wheel.
    pub fn ball_to_target() -> Self {
        Self {
            n_type_channels: 4,
            n_hidden: DEFAULT_HIDDEN,
        }
    }

    pub fn n_type_channels(&self) -> usize {
        self.n_type_channels
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn n_total(&self) -> usize {
        2 + self.n_type_channels + self.n_hidden + 1
    }

    pub fn type_channels(&self) -> Range<usize> {
        2..2 + self.n_type_channels
    }

    pub fn hidden_channels(&self) -> Range<usize> {
        let start = 2 + self.n_type_channels;
        start..start + self.n_hidden
    }

    pub fn io_channel(&self) -> usize {
        self.n_total() - 1
    }

    pub fn has_target_sensor(&self) -> bool {
        self.n_type_channels == 4
    }
}

/// Number of trainable parameters of the update network for `layout`.
pub fn genome_length(layout: &ChannelLayout) -> usize {
    network_shape(layout.n_total()).total()
}

#[derive(Clone, Copy, Debug)]
struct NetworkShape {
    n: usize,
}

impl NetworkShape {
    fn patch(&self) -> usize {
        9 * self.n
    }
    fn conv_w(&self) -> Range<usize> {
        0..CONV_FILTERS * self.patch()
    }
    fn conv_b(&self) -> Range<usize> {
        let s = self.conv_w().end;
        s..s + CONV_FILTERS
    }
    fn dense1_w(&self) -> Range<usize> {
        let s = self.conv_b().end;
        s..s + CONV_FILTERS * DENSE_UNITS
    }
    fn dense1_b(&self) -> Range<usize> {
        let s = self.dense1_w().end;
        s..s + DENSE_UNITS
    }
    fn dense2_w(&self) -> Range<usize> {
        let s = self.dense1_b().end;
        s..s + DENSE_UNITS * self.n
    }
    fn dense2_b(&self) -> Range<usize> {
        let s = self.dense2_w().end;
        s..s + self.n
    }
    fn total(&self) -> usize {
        self.dense2_b().end
    }
}

fn network_shape(n_total: usize) -> NetworkShape {
    NetworkShape { n: n_total }
}

/// Nonlinearity applied after the conv layer and the first dense layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn id(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        match id {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Flat parameter vector of the update network. Always finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Genome(Vec<f64>);

impl Genome {
    pub fn new(params: Vec<f64>) -> Result<Self> {
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGenome(i));
        }
        Ok(Self(params))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn params(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// `height x width x channels` cell state, row-major with channels innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct CellGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl CellGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            values: vec![0.0; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    fn offset(&self, row: usize, col: usize) -> usize {
        (row * self.width + col) * self.channels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[self.offset(row, col) + channel]
    }

    /// Stores `value` clipped to the state bound.
    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        let o = self.offset(row, col);
        self.values[o + channel] = value.clamp(-STATE_BOUND, STATE_BOUND);
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let o = self.offset(row, col);
        &self.values[o..o + self.channels]
    }

    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    /// One channel as a row-major `height x width` plane.
    pub fn channel_plane(&self, channel: usize) -> Vec<f64> {
        self.values
            .chunks_exact(self.channels)
            .map(|c| c[channel])
            .collect()
    }
}

/// Initial state: a single body cell at the centre of an odd-sided grid.
pub fn seed_state(layout: &ChannelLayout, height: usize, width: usize) -> Result<CellGrid> {
    if height == 0 || width == 0 {
        return Err(Error::GridDims {
            height,
            width,
            reason: "grid must be non-empty",
        });
    }
    if height.is_multiple_of(2) || width.is_multiple_of(2) {
        return Err(Error::GridDims {
            height,
            width,
            reason: "both sides must be odd so a unique centre exists",
        });
    }
    let mut grid = CellGrid::zeros(height, width, layout.n_total());
    let (r, c) = grid.center();
    grid.set(r, c, ChannelLayout::BODY, 1.0);
    Ok(grid)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AliveMask {
    height: usize,
    width: usize,
    mature: Vec<bool>,
    updatable: Vec<bool>,
}

impl AliveMask {
    pub fn is_mature(&self, row: usize, col: usize) -> bool {
        self.mature[row * self.width + col]
    }

    pub fn is_updatable(&self, row: usize, col: usize) -> bool {
        self.updatable[row * self.width + col]
    }

    pub fn mature_count(&self) -> usize {
        self.mature.iter().filter(|&&m| m).count()
    }

    pub fn updatable_count(&self) -> usize {
        self.updatable.iter().filter(|&&m| m).count()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// Mature cells have body > 0.1; updatable cells are mature cells and their
/// 8-neighbourhood.
pub fn alive_mask(grid: &CellGrid) -> AliveMask {
    let (h, w) = (grid.height, grid.width);
    let mature: Vec<bool> = (0..h * w)
        .map(|i| grid.values[i * grid.channels + ChannelLayout::BODY] > ALIVE_THRESHOLD)
        .collect();
    let mut updatable = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            if !mature[r * w + c] {
                continue;
            }
            for nr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for nc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    updatable[nr * w + nc] = true;
                }
            }
        }
    }
    AliveMask {
        height: h,
        width: w,
        mature,
        updatable,
    }
}

/// Values restored after every update: whole channels, plus individual
/// `(row, col, channel)` entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrozenSpec {
    pub channels: Vec<usize>,
    pub cells: Vec<(usize, usize, usize)>,
}

impl FrozenSpec {
    pub fn development() -> Self {
        Self {
            channels: vec![ChannelLayout::CONTROL_FLAG],
            cells: Vec::new(),
        }
    }

    /// Flag, body and type channels everywhere plus the io entry of each
    /// sensor cell.
    pub fn control(layout: &ChannelLayout, sensor_cells: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut channels = vec![ChannelLayout::BODY, ChannelLayout::CONTROL_FLAG];
        channels.extend(layout.type_channels());
        let io = layout.io_channel();
        Self {
            channels,
            cells: sensor_cells.into_iter().map(|(r, c)| (r, c, io)).collect(),
        }
    }
}

/// A genome bound to its channel layout and activation.
#[derive(Clone, Debug)]
pub struct Nca {
    layout: ChannelLayout,
    activation: Activation,
    genome: Genome,
    shape: NetworkShape,
}

impl Nca {
    pub fn new(layout: ChannelLayout, activation: Activation, genome: Genome) -> Result<Self> {
        let expected = genome_length(&layout);
        if genome.len() != expected {
            return Err(Error::GenomeLength {
                expected,
                actual: genome.len(),
            });
        }
        Ok(Self {
            layout,
            activation,
            genome,
            shape: network_shape(layout.n_total()),
        })
    }

    pub fn layout(&self) -> &ChannelLayout {
        &self.layout
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn genome(&self) -> &Genome {
        &self.genome
    }

    fn check_grid(&self, grid: &CellGrid) -> Result<()> {
        if grid.channels != self.layout.n_total() {
            return Err(Error::Layout(format!(
                "grid has {} channels, layout expects {}",
                grid.channels,
                self.layout.n_total()
            )));
        }
        Ok(())
    }

    /// Writes the network output for the cell at `(row, col)` of `grid` into
    /// `delta` (length `n_total`). Reads only `grid`.
    pub fn cell_delta(&self, grid: &CellGrid, row: usize, col: usize, delta: &mut [f64]) {
        let n = grid.channels;
        let p = self.shape;
        let params = self.genome.params();

        let mut patch = [0.0f64; 9 * MAX_CHANNELS];
        let patch = &mut patch[..9 * n];
        for ky in 0..3 {
            let Some(r) = (row + ky).checked_sub(1).filter(|&r| r < grid.height) else {
                continue;
            };
            for kx in 0..3 {
                let Some(c) = (col + kx).checked_sub(1).filter(|&c| c < grid.width) else {
                    continue;
                };
                let k = (ky * 3 + kx) * n;
                patch[k..k + n].copy_from_slice(grid.cell(r, c));
            }
        }

        let conv_w = &params[p.conv_w()];
        let conv_b = &params[p.conv_b()];
        let mut h1 = [0.0f64; CONV_FILTERS];
        for (f, out) in h1.iter_mut().enumerate() {
            let w = &conv_w[f * p.patch()..(f + 1) * p.patch()];
            let s: f64 = w.iter().zip(patch.iter()).map(|(a, b)| a * b).sum();
            *out = self.activation.apply(s + conv_b[f]);
        }

        let mut h2 = [0.0f64; DENSE_UNITS];
        h2.copy_from_slice(&params[p.dense1_b()]);
        let d1 = &params[p.dense1_w()];
        for (i, &x) in h1.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row_w = &d1[i * DENSE_UNITS..(i + 1) * DENSE_UNITS];
            for (acc, w) in h2.iter_mut().zip(row_w) {
                *acc += x * w;
            }
        }
        for v in h2.iter_mut() {
            *v = self.activation.apply(*v);
        }

        delta.copy_from_slice(&params[p.dense2_b()]);
        let d2 = &params[p.dense2_w()];
        for (i, &x) in h2.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row_w = &d2[i * n..(i + 1) * n];
            for (acc, w) in delta.iter_mut().zip(row_w) {
                *acc += x * w;
            }
        }
    }

    /// One synchronous update of every updatable cell.
    pub fn step(&self, grid: &CellGrid, frozen: &FrozenSpec) -> Result<CellGrid> {
        self.check_grid(grid)?;
        let mask = alive_mask(grid);
        let n = grid.channels;
        let mut next = grid.clone();
        let mut delta = vec![0.0; n];
        for r in 0..grid.height {
            for c in 0..grid.width {
                if !mask.is_updatable(r, c) {
                    continue;
                }
                self.cell_delta(grid, r, c, &mut delta);
                let o = grid.offset(r, c);
                for (ch, d) in delta.iter().enumerate() {
                    next.values[o + ch] = (grid.values[o + ch] + d).clamp(-STATE_BOUND, STATE_BOUND);
                }
            }
        }
        restore_frozen(&mut next, grid, frozen);
        Ok(next)
    }

    /// Grows a body from the seed state over the fixed development length.
    pub fn develop(&self, height: usize, width: usize) -> Result<CellGrid> {
        let mut trace = self.develop_trace(height, width)?;
        Ok(trace.pop().expect("trace holds the seed state"))
    }

    /// Seed state followed by the state after each development step.
    pub fn develop_trace(&self, height: usize, width: usize) -> Result<Vec<CellGrid>> {
        let frozen = FrozenSpec::development();
        let mut trace = Vec::with_capacity(DEVELOPMENT_STEPS + 1);
        trace.push(seed_state(&self.layout, height, width)?);
        for _ in 0..DEVELOPMENT_STEPS {
            let next = self.step(trace.last().unwrap(), &frozen)?;
            trace.push(next);
        }
        Ok(trace)
    }

    /// Advances the controller by one environment step: the sensor cells' io
    /// entries are pinned to `sensors`, two updates run, and the io value of
    /// every wheel cell is returned clipped to `[-1, 1]`.
    pub fn control_tick(
        &self,
        grid: &CellGrid,
        morphology: &Morphology,
        sensors: &BTreeMap<(usize, usize), f64>,
    ) -> Result<(CellGrid, BTreeMap<(usize, usize), f64>)> {
        self.check_grid(grid)?;
        let sensor_cells: Vec<(usize, usize)> = morphology.sensor_cells().collect();
        if sensor_cells.len() != sensors.len() || sensor_cells.iter().any(|k| !sensors.contains_key(k)) {
            return Err(Error::invalid(
                "sensor readings do not match the morphology's sensor cells",
            ));
        }
        let io = self.layout.io_channel();
        let frozen = FrozenSpec::control(&self.layout, sensor_cells.iter().copied());
        let mut state = grid.clone();
        for _ in 0..STEPS_PER_ACTION {
            for (&(r, c), &v) in sensors {
                state.set(r, c, io, v);
            }
            state = self.step(&state, &frozen)?;
        }
        let actions = morphology
            .wheel_cells()
            .map(|(r, c)| ((r, c), state.get(r, c, io).clamp(-1.0, 1.0)))
            .collect();
        Ok((state, actions))
    }
}

fn restore_frozen(next: &mut CellGrid, prev: &CellGrid, frozen: &FrozenSpec) {
    let n = prev.channels;
    for &ch in &frozen.channels {
        for (dst, src) in next
            .values
            .chunks_exact_mut(n)
            .zip(prev.values.chunks_exact(n))
        {
            dst[ch] = src[ch];
        }
    }
    for &(r, c, ch) in &frozen.cells {
        let o = prev.offset(r, c) + ch;
        next.values[o] = prev.values[o];
    }
}

/// Control-phase configuration for `morphology`: flag set everywhere, body and
/// one-hot type channels written from the module map, hidden and io zeroed.
pub fn control_grid(layout: &ChannelLayout, morphology: &Morphology) -> Result<CellGrid> {
    if morphology.n_type_channels() != layout.n_type_channels() {
        return Err(Error::Layout(format!(
            "morphology built for {} type channels, layout has {}",
            morphology.n_type_channels(),
            layout.n_type_channels()
        )));
    }
    let mut grid = CellGrid::zeros(morphology.height(), morphology.width(), layout.n_total());
    for r in 0..grid.height {
        for c in 0..grid.width {
            grid.set(r, c, ChannelLayout::CONTROL_FLAG, 1.0);
        }
    }
    for (&(r, c), &kind) in morphology.cells() {
        grid.set(r, c, ChannelLayout::BODY, 1.0);
        let idx = kind
            .type_index(layout.n_type_channels())
            .expect("morphology kinds are admissible for its layout");
        grid.set(r, c, layout.type_channels().start + idx, 1.0);
    }
    Ok(grid)
}

impl ModuleKind {
    /// Offset of this kind within the type channels.
    pub fn type_index(self, n_type_channels: usize) -> Option<usize> {
        match (self, n_type_channels) {
            (ModuleKind::Tissue, _) => Some(0),
            (ModuleKind::LightBallSensor, _) => Some(1),
            (ModuleKind::TargetSensor, 4) => Some(2),
            (ModuleKind::TargetSensor, _) => None,
            (ModuleKind::Wheel, n) => Some(n - 1),
        }
    }

    pub fn from_type_index(index: usize, n_type_channels: usize) -> Option<Self> {
        match (index, n_type_channels) {
            (0, _) => Some(ModuleKind::Tissue),
            (1, _) => Some(ModuleKind::LightBallSensor),
            (2, 3) => Some(ModuleKind::Wheel),
            (2, 4) => Some(ModuleKind::TargetSensor),
            (3, 4) => Some(ModuleKind::Wheel),
            _ => None,
        }
    }
}
