//! Binary PPM rendering of episodes, grown bodies and NCA channels.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, IoContext, Result};
use crate::genome_io::GenomeFile;
use crate::morphology::{extract_body, validate, ModuleKind, Morphology};
use crate::nca::{control_grid, CellGrid, Nca};
use crate::sim::episode::{arena, run_episode};
use crate::sim::physics::{PhysicsParams, RobotBody, Vec2, WorldState};
use crate::sim::scenario::{make_episode, EpisodeConfig, ScenarioParams};
use crate::task::Task;

pub type Rgb = [u8; 3];

pub const BACKGROUND: Rgb = [245, 245, 245];
const BORDER: Rgb = [40, 40, 40];
const WALL: Rgb = [110, 75, 45];
const LIGHT: Rgb = [250, 205, 0];
const BALL: Rgb = [255, 130, 0];
const TARGET: Rgb = [70, 180, 80];

pub fn module_color(kind: ModuleKind) -> Rgb {
    match kind {
        ModuleKind::Tissue => [140, 140, 140],
        ModuleKind::LightBallSensor => [215, 40, 40],
        ModuleKind::TargetSensor => [40, 120, 215],
        ModuleKind::Wheel => [25, 25, 25],
    }
}

pub fn kind_for_color(color: Rgb) -> Option<ModuleKind> {
    [
        ModuleKind::Tissue,
        ModuleKind::LightBallSensor,
        ModuleKind::TargetSensor,
        ModuleKind::Wheel,
    ]
    .into_iter()
    .find(|&k| module_color(k) == color)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn put(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = c;
        }
    }

    pub fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, c: Rgb) {
        for y in y0..(y0 + h).min(self.height) {
            for x in x0..(x0 + w).min(self.width) {
                self.pixels[y * self.width + x] = c;
            }
        }
    }

    /// Colors every pixel whose centre satisfies `inside`, scanning the box
    /// `[x0, x1) x [y0, y1)`.
    fn fill_where(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, c: Rgb, inside: impl Fn(f64, f64) -> bool) {
        let (xa, xb) = (x0.floor().max(0.0) as i64, x1.ceil().min(self.width as f64) as i64);
        let (ya, yb) = (y0.floor().max(0.0) as i64, y1.ceil().min(self.height as f64) as i64);
        for y in ya..yb {
            for x in xa..xb {
                if inside(x as f64 + 0.5, y as f64 + 0.5) {
                    self.put(x, y, c);
                }
            }
        }
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        w.write_all(&bytes)?;
        w.flush()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).context(|| format!("creating {}", path.display()))?;
        self.write_ppm(BufWriter::new(f)).context(|| format!("writing {}", path.display()))
    }

    /// Reads a binary PPM with maxval 255, as written by [`Image::write_ppm`].
    pub fn read_ppm<R: Read>(mut r: R) -> std::io::Result<Self> {
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        let bad = || std::io::Error::new(std::io::ErrorKind::InvalidData, "not a binary PPM");
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < data.len() && !data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad());
            }
            fields.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
        }
        pos += 1;
        if fields[0] != "P6" || fields[3] != "255" {
            return Err(bad());
        }
        let width: usize = fields[1].parse().map_err(|_| bad())?;
        let height: usize = fields[2].parse().map_err(|_| bad())?;
        let body = data.get(pos..).ok_or_else(bad)?;
        if body.len() != width * height * 3 {
            return Err(bad());
        }
        Ok(Self {
            width,
            height,
            pixels: body.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect(),
        })
    }
}

/// World-to-pixel mapping with `y` pointing up in the world.
struct View {
    scale: f64,
    playfield: f64,
}

impl View {
    fn px(&self, p: Vec2) -> (f64, f64) {
        (p[0] * self.scale, (self.playfield - p[1]) * self.scale)
    }
}

fn draw_disc(img: &mut Image, view: &View, center: Vec2, radius: f64, c: Rgb) {
    let (cx, cy) = view.px(center);
    let r = radius * view.scale;
    img.fill_where(cx - r, cy - r, cx + r, cy + r, c, |x, y| (x - cx).powi(2) + (y - cy).powi(2) <= r * r);
}

fn draw_segment(img: &mut Image, view: &View, a: Vec2, b: Vec2, half_width: f64, c: Rgb) {
    let (ax, ay) = view.px(a);
    let (bx, by) = view.px(b);
    let hw = (half_width * view.scale).max(1.0);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = (dx * dx + dy * dy).max(1e-12);
    img.fill_where(
        ax.min(bx) - hw,
        ay.min(by) - hw,
        ax.max(bx) + hw,
        ay.max(by) + hw,
        c,
        |x, y| {
            let t = (((x - ax) * dx + (y - ay) * dy) / len2).clamp(0.0, 1.0);
            (x - ax - t * dx).powi(2) + (y - ay - t * dy).powi(2) <= hw * hw
        },
    );
}

/// Draws one world state: arena, obstacle walls, target, light or ball and
/// the robot's modules as rotated squares.
pub fn render_frame(world: &WorldState, body: &RobotBody, episode: &EpisodeConfig, scale: f64) -> Image {
    let pf = episode.playfield;
    let side = (pf * scale).round() as usize;
    let mut img = Image::new(side, side, BACKGROUND);
    let view = View { scale, playfield: pf };
    let corners = [[0.0, 0.0], [pf, 0.0], [pf, pf], [0.0, pf], [0.0, 0.0]];
    for w in corners.windows(2) {
        draw_segment(&mut img, &view, w[0], w[1], 0.15, BORDER);
    }
    for s in arena(episode).segments {
        draw_segment(&mut img, &view, s.a, s.b, 0.2, WALL);
    }
    if let Some(t) = world.target {
        draw_disc(&mut img, &view, t, 2.0 * episode.module_size, TARGET);
    }
    let object_color = if world.has_ball { BALL } else { LIGHT };
    draw_disc(&mut img, &view, world.object, episode.module_size, object_color);

    let (right, forward) = world.robot.axes();
    let half = 0.5 * episode.module_size;
    for m in body.modules() {
        let center = world.robot.to_world(m.offset);
        let (cx, cy) = view.px(center);
        let reach = half * std::f64::consts::SQRT_2 * scale;
        img.fill_where(cx - reach, cy - reach, cx + reach, cy + reach, module_color(m.kind), |x, y| {
            let wx = x / scale - center[0];
            let wy = (pf - y / scale) - center[1];
            let u = wx * right[0] + wy * right[1];
            let v = wx * forward[0] + wy * forward[1];
            u.abs() <= half && v.abs() <= half
        });
    }
    img
}

/// Module map on the grid, `cell_px` pixels per cell, row 0 at the top.
pub fn render_morphology(morphology: &Morphology, cell_px: usize) -> Image {
    let mut img = Image::new(morphology.width() * cell_px, morphology.height() * cell_px, BACKGROUND);
    for (&(r, c), &kind) in morphology.cells() {
        img.fill_rect(c * cell_px, r * cell_px, cell_px, cell_px, module_color(kind));
    }
    img
}

/// Reads a module map back from an image made by [`render_morphology`].
pub fn morphology_from_image(img: &Image, cell_px: usize, n_type_channels: usize) -> Result<Morphology> {
    let (h, w) = (img.height() / cell_px, img.width() / cell_px);
    let mut cells = std::collections::BTreeMap::new();
    for r in 0..h {
        for c in 0..w {
            let px = img.get(c * cell_px + cell_px / 2, r * cell_px + cell_px / 2);
            if px == BACKGROUND {
                continue;
            }
            let kind = kind_for_color(px).ok_or_else(|| Error::invalid(format!("unknown module color {px:?}")))?;
            cells.insert((r, c), kind);
        }
    }
    Morphology::from_cells(h, w, n_type_channels, cells)
}

fn heat(v: f64) -> Rgb {
    let t = v.clamp(-1.0, 1.0);
    let fade = (255.0 * (1.0 - t.abs())).round() as u8;
    if t >= 0.0 {
        [255, fade, fade]
    } else {
        [fade, fade, 255]
    }
}

pub const STRIP_GAP: usize = 2;

/// One panel per channel side by side: red positive, blue negative,
/// saturated at ±1.
pub fn render_channel_strip(grid: &CellGrid, cell_px: usize) -> Image {
    let pw = grid.width() * cell_px;
    let n = grid.channels();
    let mut img = Image::new(n * pw + (n - 1) * STRIP_GAP, grid.height() * cell_px, [255, 255, 255]);
    for ch in 0..n {
        let x0 = ch * (pw + STRIP_GAP);
        for r in 0..grid.height() {
            for c in 0..grid.width() {
                img.fill_rect(x0 + c * cell_px, r * cell_px, cell_px, cell_px, heat(grid.get(r, c, ch)));
            }
        }
    }
    img
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderSummary {
    pub valid: bool,
    pub frames: Vec<PathBuf>,
    pub strips: Vec<PathBuf>,
    pub morphology: PathBuf,
    pub trajectory: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOptions {
    pub seed: u64,
    pub region: usize,
    pub scale: f64,
    pub cell_px: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            region: 0,
            scale: 6.0,
            cell_px: 12,
        }
    }
}

/// Writes channel strips for every development step (`strip_00.ppm` ..) and
/// for the end of the episode (`strip_control.ppm`), `morphology.ppm`,
/// `morphology.txt`, and for usable bodies one `frame_NNN.ppm` per
/// environment step plus `trajectory.csv`.
pub fn render_genome(
    file: &GenomeFile,
    task: Task,
    out_dir: &Path,
    physics: &PhysicsParams,
    scenario: &ScenarioParams,
    options: &RenderOptions,
) -> Result<RenderSummary> {
    if file.task.layout() != task.layout() {
        return Err(Error::Layout(format!("genome for {} cannot run {task}", file.task)));
    }
    std::fs::create_dir_all(out_dir).context(|| format!("creating {}", out_dir.display()))?;
    let nca = Nca::new(task.layout(), file.activation, file.genome.clone())?;
    let trace = nca.develop_trace(file.grid_height, file.grid_width)?;
    let mut strips = Vec::new();
    for (t, grid) in trace.iter().enumerate() {
        let path = out_dir.join(format!("strip_{t:02}.ppm"));
        render_channel_strip(grid, options.cell_px).save(&path)?;
        strips.push(path);
    }
    let morphology = extract_body(trace.last().expect("non-empty trace"), nca.layout());
    let morph_path = out_dir.join("morphology.ppm");
    render_morphology(&morphology, 2 * options.cell_px).save(&morph_path)?;
    let text_path = out_dir.join("morphology.txt");
    std::fs::write(&text_path, morphology.to_text()).context(|| format!("writing {}", text_path.display()))?;

    let mut summary = RenderSummary {
        valid: validate(&morphology, task)?.valid,
        frames: Vec::new(),
        strips,
        morphology: morph_path,
        trajectory: None,
    };
    if !summary.valid {
        return Ok(summary);
    }
    let episode = make_episode(task, options.seed, options.region, scenario)?;
    let body = RobotBody::new(&morphology, episode.module_size, physics.module_mass)?;
    let outcome = run_episode(&nca, &morphology, &episode, physics)?;
    for (i, state) in outcome.states.iter().skip(1).enumerate() {
        let path = out_dir.join(format!("frame_{i:03}.ppm"));
        render_frame(state, &body, &episode, options.scale).save(&path)?;
        summary.frames.push(path);
    }
    // Replay the controller to show the channels at the end of the episode.
    let mut grid = control_grid(nca.layout(), &morphology)?;
    for state in &outcome.states[..outcome.states.len() - 1] {
        let sensors = crate::sim::episode::read_sensors(state, &body, episode.playfield);
        grid = nca.control_tick(&grid, &morphology, &sensors)?.0;
    }
    let control_path = out_dir.join("strip_control.ppm");
    render_channel_strip(&grid, options.cell_px).save(&control_path)?;
    summary.strips.push(control_path);

    let traj_path = out_dir.join("trajectory.csv");
    let mut w = csv::Writer::from_path(&traj_path)?;
    for row in &outcome.trajectory {
        w.serialize(row)?;
    }
    w.flush().context(|| format!("writing {}", traj_path.display()))?;
    summary.trajectory = Some(traj_path);
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let mut img = Image::new(3, 2, BACKGROUND);
        img.put(2, 1, [1, 2, 3]);
        let mut buf = Vec::new();
        img.write_ppm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(Image::read_ppm(buf.as_slice()).unwrap(), img);
    }

    #[test]
    fn module_colors_are_distinct() {
        let kinds = [
            ModuleKind::Tissue,
            ModuleKind::LightBallSensor,
            ModuleKind::TargetSensor,
            ModuleKind::Wheel,
        ];
        for k in kinds {
            assert_eq!(kind_for_color(module_color(k)), Some(k));
            assert_ne!(module_color(k), BACKGROUND);
        }
    }

    #[test]
    fn morphology_image_matches_text() {
        let m = Morphology::from_text(".....\n.SAS.\n.WTW.\n..T..\n.....", 4).unwrap();
        let img = render_morphology(&m, 4);
        assert_eq!(morphology_from_image(&img, 4, 4).unwrap().to_text(), m.to_text());
    }

    #[test]
    fn strip_has_one_panel_per_channel() {
        let g = CellGrid::zeros(5, 5, 12);
        let img = render_channel_strip(&g, 3);
        assert_eq!(img.width(), 12 * 15 + 11 * STRIP_GAP);
        assert_eq!(img.height(), 15);
    }
}
